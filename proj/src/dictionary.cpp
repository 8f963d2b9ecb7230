#include "colan/dictionary.hpp"

#include <cctype>
#include <cmath>
#include <unordered_set>
#include <utility>

#include "colan/errors.hpp"
#include "colan/kernels.hpp"
#include "colan/solver.hpp"

namespace colan {

LatentSpaceTag LatentSpaceTag::text_embedding(std::size_t seq_len, std::size_t token_dim) {
  LatentSpaceTag tag;
  tag.kind = SpaceKind::text_embedding;
  tag.seq_len = seq_len;
  tag.token_dim = token_dim;
  tag.flat_dim = seq_len * token_dim;
  tag.validate();
  return tag;
}

LatentSpaceTag LatentSpaceTag::score(std::size_t flat_dim) {
  LatentSpaceTag tag;
  tag.kind = SpaceKind::score;
  tag.seq_len = 0;
  tag.token_dim = 0;
  tag.flat_dim = flat_dim;
  tag.validate();
  return tag;
}

void LatentSpaceTag::validate() const {
  if (flat_dim == 0) throw SpaceMismatch("flat_dim must be positive");
  if (kind == SpaceKind::text_embedding && flat_dim != seq_len * token_dim) {
    throw SpaceMismatch("text-embedding flat_dim must equal seq_len * token_dim");
  }
}

std::string_view to_string(ReadMethod m) { return m == ReadMethod::avg ? "avg" : "pca"; }

ReadMethod read_method_from_string(std::string_view s) {
  if (s == "avg") return ReadMethod::avg;
  if (s == "pca") return ReadMethod::pca;
  throw SchemaViolation("unknown read method '" + std::string(s) + "'");
}

std::string_view to_string(SpaceKind k) {
  return k == SpaceKind::text_embedding ? "text_embedding" : "score";
}

SpaceKind space_kind_from_string(std::string_view s) {
  if (s == "text_embedding") return SpaceKind::text_embedding;
  if (s == "score") return SpaceKind::score;
  throw SchemaViolation("unknown space kind '" + std::string(s) + "'");
}

std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_space = true;  // swallows leading whitespace
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!in_space) out.push_back(' ');
      in_space = true;
    } else {
      out.push_back(c);
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

ConceptDictionary ConceptDictionary::assemble(std::span<const ConceptVector> vectors,
                                              bool normalize) {
  if (vectors.empty()) throw EmptyInput("cannot assemble an empty dictionary");

  const LatentSpaceTag space = vectors.front().space;
  const std::size_t d = space.flat_dim;

  std::unordered_set<std::string> seen;
  for (const auto& cv : vectors) {
    if (cv.space != space) {
      throw SpaceMismatch("atom '" + cv.name + "' lives in a different latent space");
    }
    if (cv.vector.size() != d) {
      throw SpaceMismatch("atom '" + cv.name + "' has length " +
                          std::to_string(cv.vector.size()) + ", space expects " +
                          std::to_string(d));
    }
    if (!seen.insert(cv.name).second) {
      throw DuplicateName("concept '" + cv.name + "' appears twice");
    }
  }

  ConceptDictionary dict;
  dict.space_ = space;
  dict.normalized_ = normalize;
  dict.matrix_ = DenseMatrix(d, vectors.size());
  for (std::size_t j = 0; j < vectors.size(); ++j) {
    const auto& cv = vectors[j];
    const double sq = kernels::squared_norm(std::span<const float>(cv.vector));
    if (sq == 0.0 && !cv.is_null()) {
      throw ZeroAtom("concept '" + cv.name + "' has a zero vector");
    }
    const double scale = (normalize && sq > 0.0 && !cv.is_null()) ? 1.0 / std::sqrt(sq) : 1.0;
    for (std::size_t i = 0; i < d; ++i) {
      dict.matrix_.at(i, j) = static_cast<float>(scale * static_cast<double>(cv.vector[i]));
    }
    dict.names_.push_back(cv.name);
    dict.read_methods_.push_back(cv.read_method);
  }
  return dict;
}

ConceptDictionary ConceptDictionary::from_parts(LatentSpaceTag space,
                                                std::vector<std::string> names,
                                                std::vector<ReadMethod> read_methods,
                                                DenseMatrix matrix, bool normalized) {
  space.validate();
  if (names.empty()) throw EmptyInput("cannot build an empty dictionary");
  if (names.size() != matrix.cols()) {
    throw SpaceMismatch("manifest names " + std::to_string(names.size()) +
                        " against matrix columns " + std::to_string(matrix.cols()));
  }
  if (read_methods.size() != names.size()) {
    throw SpaceMismatch("read-method count does not match name count");
  }
  if (matrix.rows() != space.flat_dim) {
    throw SpaceMismatch("matrix has " + std::to_string(matrix.rows()) +
                        " rows, space expects " + std::to_string(space.flat_dim));
  }
  std::unordered_set<std::string> seen;
  for (const auto& name : names) {
    if (!seen.insert(name).second) throw DuplicateName("concept '" + name + "' appears twice");
  }
  for (std::size_t j = 0; j < names.size(); ++j) {
    const std::vector<float> col = matrix.column(j);
    if (kernels::squared_norm(std::span<const float>(col)) == 0.0 &&
        names[j] != kNullConceptName) {
      throw ZeroAtom("concept '" + names[j] + "' has a zero vector");
    }
  }

  ConceptDictionary dict;
  dict.space_ = space;
  dict.names_ = std::move(names);
  dict.read_methods_ = std::move(read_methods);
  dict.matrix_ = std::move(matrix);
  dict.normalized_ = normalized;
  return dict;
}

std::optional<std::size_t> ConceptDictionary::index_of(std::string_view name) const {
  for (std::size_t j = 0; j < names_.size(); ++j) {
    if (names_[j] == name) return j;
  }
  return std::nullopt;
}

ConceptVector rep_read(const DenseMatrix& embeddings, ReadMethod method, std::string name,
                       const LatentSpaceTag& space) {
  space.validate();
  if (embeddings.cols() != space.flat_dim) {
    throw SpaceMismatch("embeddings have width " + std::to_string(embeddings.cols()) +
                        ", space expects " + std::to_string(space.flat_dim));
  }
  ConceptVector cv;
  cv.name = std::move(name);
  cv.read_method = method;
  cv.space = space;
  cv.vector = method == ReadMethod::avg ? mean_rows(embeddings)
                                        : pca_first_component(embeddings);
  return cv;
}

ConceptVector null_concept(const LatentSpaceTag& space, std::span<const float> null_embedding) {
  space.validate();
  if (null_embedding.size() != space.flat_dim) {
    throw SpaceMismatch("null embedding has length " + std::to_string(null_embedding.size()) +
                        ", space expects " + std::to_string(space.flat_dim));
  }
  for (float x : null_embedding) {
    if (!std::isfinite(x)) throw NonFiniteInput("null embedding is not finite");
  }
  ConceptVector cv;
  cv.name = kNullConceptName;
  cv.read_method = ReadMethod::avg;
  cv.vector.assign(null_embedding.begin(), null_embedding.end());
  cv.space = space;
  return cv;
}

}  // namespace colan
