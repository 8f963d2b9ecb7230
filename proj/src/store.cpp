#include "colan/store.hpp"

#include <openssl/evp.h>
#include <unistd.h>

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <unordered_set>
#include <utility>

#include <json.hpp>

#include "colan/errors.hpp"

namespace colan::store {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::span<const unsigned char> as_bytes(const std::string& s) {
  return {reinterpret_cast<const unsigned char*>(s.data()), s.size()};
}

std::string to_hex(const unsigned char* p, std::size_t n) {
  static const char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(digits[p[i] >> 4]);
    out.push_back(digits[p[i] & 0xf]);
  }
  return out;
}

json space_to_json(const LatentSpaceTag& s) {
  return {{"kind", std::string(to_string(s.kind))},
          {"seq_len", s.seq_len},
          {"token_dim", s.token_dim},
          {"flat_dim", s.flat_dim}};
}

LatentSpaceTag space_from_json(const json& j) {
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string() ||
      !j.contains("flat_dim") || !j["flat_dim"].is_number_unsigned()) {
    throw SchemaViolation("space tag needs a string 'kind' and unsigned 'flat_dim'");
  }
  LatentSpaceTag s;
  s.kind = space_kind_from_string(j["kind"].get<std::string>());
  s.flat_dim = j["flat_dim"].get<std::uint64_t>();
  s.seq_len = j.value("seq_len", std::uint64_t{0});
  s.token_dim = j.value("token_dim", std::uint64_t{0});
  s.validate();
  return s;
}

json parse_json_or_schema_error(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaViolation(std::string(what) + " is not valid JSON: " + e.what());
  }
}

}  // namespace

std::string encode_matrix(const DenseMatrix& m) {
  std::string out;
  out.reserve(kMatrixHeaderBytes + m.size() * 4);
  out.append(kMatrixMagic, 4);
  put_u32(out, kMatrixVersion);
  put_u64(out, m.rows());
  put_u64(out, m.cols());
  out.push_back(static_cast<char>(kDtypeF32));
  if constexpr (std::endian::native == std::endian::little) {
    out.append(reinterpret_cast<const char*>(m.data().data()), m.size() * 4);
  } else {
    for (float f : m.data()) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

DenseMatrix decode_matrix(std::span<const unsigned char> bytes, std::uint64_t element_cap) {
  if (bytes.size() < kMatrixHeaderBytes) {
    throw TruncatedPayload("file has " + std::to_string(bytes.size()) +
                           " bytes, header needs " + std::to_string(kMatrixHeaderBytes));
  }
  if (std::memcmp(bytes.data(), kMatrixMagic, 4) != 0) {
    throw BadMagic("matrix file does not start with \"CLAN\"");
  }
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kMatrixVersion) {
    throw UnsupportedVersion("matrix format version " + std::to_string(version));
  }
  const std::uint64_t rows = get_u64(bytes.data() + 8);
  const std::uint64_t cols = get_u64(bytes.data() + 16);
  const std::uint8_t dtype = bytes[kMatrixHeaderBytes - 1];
  if (dtype != kDtypeF32) {
    throw UnsupportedVersion("dtype code " + std::to_string(dtype));
  }
  if (cols != 0 && rows > element_cap / cols) {
    throw OversizeGuard("declared " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " exceeds the element cap " + std::to_string(element_cap));
  }
  const std::uint64_t elements = rows * cols;
  const std::uint64_t expected = kMatrixHeaderBytes + elements * 4;
  if (bytes.size() != expected) {
    throw TruncatedPayload("payload should be " + std::to_string(elements * 4) +
                           " bytes, file carries " +
                           std::to_string(bytes.size() - kMatrixHeaderBytes));
  }

  std::vector<float> data(static_cast<std::size_t>(elements));
  const unsigned char* payload = bytes.data() + kMatrixHeaderBytes;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(data.data(), payload, static_cast<std::size_t>(elements) * 4);
  } else {
    for (std::uint64_t i = 0; i < elements; ++i) {
      data[static_cast<std::size_t>(i)] = std::bit_cast<float>(get_u32(payload + i * 4));
    }
  }
  return DenseMatrix(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols),
                     std::move(data));
}

void write_matrix(const DenseMatrix& m, const fs::path& path) {
  atomic_write_file(path, encode_matrix(m));
}

DenseMatrix read_matrix(const fs::path& path, std::uint64_t element_cap) {
  const std::string bytes = read_file_bytes(path);
  return decode_matrix(as_bytes(bytes), element_cap);
}

void write_dataset(const ConceptDataset& dataset, const fs::path& path) {
  json records = json::array();
  std::unordered_set<std::string> seen;
  for (const auto& rec : dataset.records) {
    if (rec.name.empty()) throw SchemaViolation("concept name is empty");
    if (!seen.insert(rec.name).second) {
      throw SchemaViolation("duplicate concept name '" + rec.name + "'");
    }
    records.push_back({{"concept", rec.name}, {"stimuli", rec.stimuli}});
  }
  atomic_write_file(path, json{{"records", std::move(records)}}.dump(2) + "\n");
}

ConceptDataset read_dataset(const fs::path& path) {
  const json j = parse_json_or_schema_error(read_file_bytes(path), "dataset");
  if (!j.is_object() || !j.contains("records") || !j["records"].is_array()) {
    throw SchemaViolation("dataset needs a top-level 'records' array");
  }
  ConceptDataset out;
  std::unordered_set<std::string> seen;
  for (const auto& rec : j["records"]) {
    if (!rec.is_object() || !rec.contains("concept") || !rec["concept"].is_string() ||
        !rec.contains("stimuli") || !rec["stimuli"].is_array()) {
      throw SchemaViolation("each record needs a string 'concept' and a 'stimuli' array");
    }
    Concept c;
    c.name = rec["concept"].get<std::string>();
    if (c.name.empty()) throw SchemaViolation("concept name is empty");
    if (!seen.insert(c.name).second) {
      throw SchemaViolation("duplicate concept name '" + c.name + "'");
    }
    for (const auto& s : rec["stimuli"]) {
      if (!s.is_string()) {
        throw SchemaViolation("stimulus under '" + c.name + "' is not a string");
      }
      c.stimuli.push_back(s.get<std::string>());
    }
    out.records.push_back(std::move(c));
  }
  return out;
}

void write_manifest(const DictionaryManifest& manifest, const fs::path& path) {
  json methods = json::array();
  for (ReadMethod m : manifest.read_methods) methods.push_back(std::string(to_string(m)));
  const json j = {{"space", space_to_json(manifest.space)},
                  {"names", manifest.names},
                  {"read_methods", std::move(methods)},
                  {"matrix_file", manifest.matrix_file},
                  {"normalized", manifest.normalized},
                  {"content_hash", manifest.content_hash}};
  atomic_write_file(path, j.dump(2) + "\n");
}

DictionaryManifest read_manifest(const fs::path& path) {
  const json j = parse_json_or_schema_error(read_file_bytes(path), "manifest");
  if (!j.is_object() || !j.contains("space") || !j.contains("names") ||
      !j["names"].is_array() || !j.contains("read_methods") || !j["read_methods"].is_array() ||
      !j.contains("matrix_file") || !j["matrix_file"].is_string() ||
      !j.contains("normalized") || !j["normalized"].is_boolean() ||
      !j.contains("content_hash") || !j["content_hash"].is_string()) {
    throw SchemaViolation(
        "manifest needs space, names, read_methods, matrix_file, normalized, content_hash");
  }
  DictionaryManifest m;
  m.space = space_from_json(j["space"]);
  for (const auto& name : j["names"]) {
    if (!name.is_string()) throw SchemaViolation("manifest name entry is not a string");
    m.names.push_back(name.get<std::string>());
  }
  for (const auto& method : j["read_methods"]) {
    if (!method.is_string()) throw SchemaViolation("manifest read_method entry is not a string");
    m.read_methods.push_back(read_method_from_string(method.get<std::string>()));
  }
  if (m.read_methods.size() != m.names.size()) {
    throw SchemaViolation("manifest read_methods count does not match names count");
  }
  m.matrix_file = j["matrix_file"].get<std::string>();
  m.normalized = j["normalized"].get<bool>();
  m.content_hash = j["content_hash"].get<std::string>();
  return m;
}

std::string manifest_content_hash(std::span<const std::string> names,
                                  std::span<const unsigned char> matrix_bytes) {
  Sha256 h;
  for (const auto& name : names) {
    std::string len;
    put_u64(len, name.size());
    h.update(len.data(), len.size());
    h.update(name.data(), name.size());
  }
  h.update(matrix_bytes);
  return h.hex_digest();
}

DictionaryManifest save_dictionary(const ConceptDictionary& dict, const fs::path& manifest_path,
                                   const std::string& matrix_file) {
  const std::string bytes = encode_matrix(dict.matrix());
  const fs::path dir = manifest_path.parent_path();
  const fs::path matrix_path = dir.empty() ? fs::path(matrix_file) : dir / matrix_file;
  atomic_write_file(matrix_path, bytes);

  DictionaryManifest m;
  m.space = dict.space();
  m.names = dict.names();
  m.read_methods = dict.read_methods();
  m.matrix_file = matrix_file;
  m.normalized = dict.normalized();
  m.content_hash = manifest_content_hash(m.names, as_bytes(bytes));
  write_manifest(m, manifest_path);
  return m;
}

std::shared_ptr<const ConceptDictionary> load_dictionary(const fs::path& manifest_path) {
  DictionaryManifest m = read_manifest(manifest_path);
  fs::path matrix_path(m.matrix_file);
  if (matrix_path.is_relative()) matrix_path = manifest_path.parent_path() / matrix_path;

  const std::string bytes = read_file_bytes(matrix_path);
  if (manifest_content_hash(m.names, as_bytes(bytes)) != m.content_hash) {
    throw ValidationFailed("content hash mismatch for '" + matrix_path.string() +
                           "'; matrix bytes or concept names were altered");
  }
  DenseMatrix matrix = decode_matrix(as_bytes(bytes));
  return std::make_shared<const ConceptDictionary>(
      ConceptDictionary::from_parts(m.space, std::move(m.names), std::move(m.read_methods),
                                    std::move(matrix), m.normalized));
}

EmbeddingCache::EmbeddingCache(fs::path root) : root_(std::move(root)) {}

fs::path EmbeddingCache::entry_path(const std::string& model_name,
                                    const std::string& text) const {
  Sha256 h;
  std::string lens;
  put_u64(lens, model_name.size());
  put_u64(lens, text.size());
  h.update(lens.data(), 8);
  h.update(model_name.data(), model_name.size());
  h.update(lens.data() + 8, 8);
  h.update(text.data(), text.size());
  return root_ / (h.hex_digest() + ".clan");
}

std::optional<std::vector<float>> EmbeddingCache::get(const std::string& model_name,
                                                      const std::string& text) const {
  const fs::path path = entry_path(model_name, text);
  std::error_code ec;
  if (!fs::exists(path, ec) || ec) return std::nullopt;
  try {
    const DenseMatrix m = read_matrix(path);
    return std::vector<float>(m.data().begin(), m.data().end());
  } catch (const Error& e) {
    warn("embedding cache: dropping unreadable entry " + path.string() + ": " + e.what());
    return std::nullopt;
  }
}

void EmbeddingCache::put(const std::string& model_name, const std::string& text,
                         std::span<const float> value) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec) throw IoError("cannot create cache directory '" + root_.string() + "'");
  const DenseMatrix m(1, value.size(), std::vector<float>(value.begin(), value.end()));
  write_matrix(m, entry_path(model_name, text));
}

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  if (ctx_ == nullptr ||
      EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1) {
    throw IoError("cannot initialize sha-256");
  }
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(const void* data, std::size_t len) {
  if (len == 0) return;
  if (EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), data, len) != 1) {
    throw IoError("sha-256 update failed");
  }
}

std::string Sha256::hex_digest() {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), digest, &len) != 1) {
    throw IoError("sha-256 finalize failed");
  }
  return to_hex(digest, len);
}

std::string sha256_hex(std::span<const unsigned char> bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex_digest();
}

std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  if (size < 0) throw IoError("cannot size '" + path.string() + "'");
  std::string out(static_cast<std::size_t>(size), '\0');
  in.seekg(0);
  in.read(out.data(), size);
  if (!in) throw IoError("short read from '" + path.string() + "'");
  return out;
}

void atomic_write_file(const fs::path& path, std::string_view bytes) {
  static std::atomic<unsigned> counter{0};
  fs::path tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw IoError("short write to '" + tmp.string() + "'");
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    std::error_code ec2;
    fs::remove(tmp, ec2);
    throw IoError("cannot rename '" + tmp.string() + "' onto '" + path.string() + "'");
  }
}

}  // namespace colan::store
