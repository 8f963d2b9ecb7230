#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "colan/dictionary.hpp"
#include "colan/matrix.hpp"

namespace colan::store {

// ---------------------------------------------------------------------------
// Binary embedding-matrix format.
//
// Fixed little-endian layout regardless of host byte order:
//   magic    4 bytes  "CLAN"
//   version  u32      1
//   rows     u64
//   cols     u64
//   dtype    u8       1 = 32-bit float
//   payload  rows*cols little-endian f32, row-major
// ---------------------------------------------------------------------------

inline constexpr char kMatrixMagic[4] = {'C', 'L', 'A', 'N'};
inline constexpr std::uint32_t kMatrixVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;
inline constexpr std::size_t kMatrixHeaderBytes = 4 + 4 + 8 + 8 + 1;

// Refuse to allocate payloads above this many elements unless the caller
// raises the cap; a hostile header must not drive allocation.
inline constexpr std::uint64_t kDefaultElementCap = std::uint64_t{1} << 31;

std::string encode_matrix(const DenseMatrix& m);
DenseMatrix decode_matrix(std::span<const unsigned char> bytes,
                          std::uint64_t element_cap = kDefaultElementCap);

void write_matrix(const DenseMatrix& m, const std::filesystem::path& path);
DenseMatrix read_matrix(const std::filesystem::path& path,
                        std::uint64_t element_cap = kDefaultElementCap);

// ---------------------------------------------------------------------------
// Concept dataset (JSON).
// ---------------------------------------------------------------------------

struct ConceptDataset {
  std::vector<Concept> records;
};

void write_dataset(const ConceptDataset& dataset, const std::filesystem::path& path);
ConceptDataset read_dataset(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Dictionary manifest (JSON next to a matrix file).
// ---------------------------------------------------------------------------

struct DictionaryManifest {
  LatentSpaceTag space;
  std::vector<std::string> names;
  std::vector<ReadMethod> read_methods;
  std::string matrix_file;  // resolved relative to the manifest's directory
  bool normalized = false;
  std::string content_hash;  // sha-256 over length-prefixed names + matrix bytes
};

void write_manifest(const DictionaryManifest& manifest, const std::filesystem::path& path);
DictionaryManifest read_manifest(const std::filesystem::path& path);

// Computes the manifest hash from the ordered names and the exact bytes of
// the matrix file, so any single-byte corruption of either is detected.
std::string manifest_content_hash(std::span<const std::string> names,
                                  std::span<const unsigned char> matrix_bytes);

// Writes <matrix_file> beside the manifest, then the manifest itself.
DictionaryManifest save_dictionary(const ConceptDictionary& dict,
                                   const std::filesystem::path& manifest_path,
                                   const std::string& matrix_file);

// Loads manifest + matrix and verifies the content hash before trusting the
// payload. Throws ValidationFailed on a hash mismatch.
std::shared_ptr<const ConceptDictionary> load_dictionary(
    const std::filesystem::path& manifest_path);

// ---------------------------------------------------------------------------
// Embedding cache: one small matrix file per (model, text) key.
// ---------------------------------------------------------------------------

class EmbeddingCache {
 public:
  explicit EmbeddingCache(std::filesystem::path root);

  std::optional<std::vector<float>> get(const std::string& model_name,
                                        const std::string& text) const;
  void put(const std::string& model_name, const std::string& text,
           std::span<const float> value);

  const std::filesystem::path& root() const noexcept { return root_; }
  std::filesystem::path entry_path(const std::string& model_name,
                                   const std::string& text) const;

 private:
  std::filesystem::path root_;
};

// ---------------------------------------------------------------------------
// Shared plumbing.
// ---------------------------------------------------------------------------

class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, std::size_t len);
  void update(std::span<const unsigned char> bytes) { update(bytes.data(), bytes.size()); }
  // Finalizes; the object must not be updated afterwards.
  std::string hex_digest();

 private:
  void* ctx_;
};

std::string sha256_hex(std::span<const unsigned char> bytes);

std::string read_file_bytes(const std::filesystem::path& path);

// Writes to a temp file in the target directory, then renames over the
// destination so readers never observe a partial file.
void atomic_write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace colan::store
