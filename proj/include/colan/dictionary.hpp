#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "colan/matrix.hpp"

namespace colan {

// Reserved name of the null concept: the only atom allowed to be all zeros.
inline constexpr const char* kNullConceptName = "∅";

enum class SpaceKind { text_embedding, score };

// Identifies the latent space a vector lives in. Text-embedding vectors are
// flattened seq_len x token_dim row-major token grids; score vectors are
// opaque flat vectors of caller-declared length.
struct LatentSpaceTag {
  SpaceKind kind = SpaceKind::text_embedding;
  std::size_t seq_len = 0;
  std::size_t token_dim = 0;
  std::size_t flat_dim = 0;

  static LatentSpaceTag text_embedding(std::size_t seq_len = 77, std::size_t token_dim = 768);
  static LatentSpaceTag score(std::size_t flat_dim);

  void validate() const;
  bool operator==(const LatentSpaceTag&) const = default;
};

enum class ReadMethod { avg, pca };

std::string_view to_string(ReadMethod m);
ReadMethod read_method_from_string(std::string_view s);
std::string_view to_string(SpaceKind k);
SpaceKind space_kind_from_string(std::string_view s);

// A named visual concept with its textual stimuli.
struct Concept {
  std::string name;
  std::vector<std::string> stimuli;
};

// A latent-space direction extracted from stimulus embeddings.
struct ConceptVector {
  std::string name;
  std::vector<float> vector;
  ReadMethod read_method = ReadMethod::avg;
  LatentSpaceTag space;

  bool is_null() const { return name == kNullConceptName; }
};

// Immutable once assembled; atoms are the columns of a d x N matrix.
class ConceptDictionary {
 public:
  static ConceptDictionary assemble(std::span<const ConceptVector> vectors, bool normalize);

  // Rebuilds a dictionary from already-persisted parts. Columns are taken
  // verbatim; `normalized` records how the matrix was produced and no
  // renormalization happens here.
  static ConceptDictionary from_parts(LatentSpaceTag space, std::vector<std::string> names,
                                      std::vector<ReadMethod> read_methods, DenseMatrix matrix,
                                      bool normalized);

  const LatentSpaceTag& space() const noexcept { return space_; }
  std::size_t size() const noexcept { return names_.size(); }     // N
  std::size_t dim() const noexcept { return matrix_.rows(); }     // d
  const std::vector<std::string>& names() const noexcept { return names_; }
  const std::string& name(std::size_t j) const { return names_[j]; }
  const std::vector<ReadMethod>& read_methods() const noexcept { return read_methods_; }
  bool normalized() const noexcept { return normalized_; }
  const DenseMatrix& matrix() const noexcept { return matrix_; }

  std::optional<std::size_t> index_of(std::string_view name) const;
  std::vector<float> column(std::size_t j) const { return matrix_.column(j); }

 private:
  ConceptDictionary() = default;

  LatentSpaceTag space_;
  std::vector<std::string> names_;
  std::vector<ReadMethod> read_methods_;
  DenseMatrix matrix_;
  bool normalized_ = false;
};

// Aggregates stimulus embeddings (one per row) into a single concept vector
// by arithmetic mean or first principal component.
ConceptVector rep_read(const DenseMatrix& embeddings, ReadMethod method, std::string name,
                       const LatentSpaceTag& space);

// Wraps the encoder's empty-string embedding under the reserved null name.
// Unlike every other atom, the vector may be zero.
ConceptVector null_concept(const LatentSpaceTag& space, std::span<const float> null_embedding);

// Trims leading/trailing whitespace and collapses internal runs to a single
// space. Stimulus dedup and concept-name comparisons use this form.
std::string normalize_whitespace(std::string_view s);

}  // namespace colan
