#include "colan/transplant.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <utility>

#include "colan/errors.hpp"
#include "colan/kernels.hpp"

namespace colan {

std::string_view to_string(EditKind k) {
  switch (k) {
    case EditKind::replace: return "replace";
    case EditKind::add: return "add";
    case EditKind::remove: return "remove";
  }
  return "replace";
}

EditKind edit_kind_from_string(std::string_view s) {
  if (s == "replace") return EditKind::replace;
  if (s == "add") return EditKind::add;
  if (s == "remove") return EditKind::remove;
  throw ValidationFailed("unknown edit kind '" + std::string(s) + "'");
}

EditRequest make_edit(const ConceptDictionary& dict, EditKind kind,
                      std::string source_concept, ConceptVector target_vector) {
  if (!dict.index_of(source_concept)) {
    throw UnknownConcept("'" + source_concept + "' is not a dictionary column");
  }
  if (target_vector.space != dict.space()) {
    throw SpaceMismatch("target vector lives in a different latent space");
  }
  if (target_vector.vector.size() != dict.dim()) {
    throw SpaceMismatch("target vector length " + std::to_string(target_vector.vector.size()) +
                        " against dictionary dimension " + std::to_string(dict.dim()));
  }
  if (kind == EditKind::remove) {
    if (!target_vector.is_null()) {
      throw ValidationFailed("remove edits must target the null concept " +
                             std::string(kNullConceptName));
    }
  } else {
    const double sq = kernels::squared_norm(std::span<const float>(target_vector.vector));
    if (sq == 0.0) throw ZeroAtom("replace/add target vector is zero");
  }
  EditRequest edit;
  edit.kind = kind;
  edit.source_concept = std::move(source_concept);
  edit.target_concept = target_vector.name;
  edit.target_vector = std::move(target_vector);
  return edit;
}

Decomposition decompose(std::span<const float> v,
                        std::shared_ptr<const ConceptDictionary> dict,
                        const SolverConfig& cfg) {
  if (!dict) throw EmptyInput("decompose needs a dictionary");
  if (v.size() != dict->space().flat_dim) {
    throw DimensionMismatch("source vector length " + std::to_string(v.size()) +
                            " against space dimension " +
                            std::to_string(dict->space().flat_dim));
  }

  const auto t0 = std::chrono::steady_clock::now();
  SparseSolution sol = elastic_net_solve(v, dict->matrix(), cfg);
  const auto t1 = std::chrono::steady_clock::now();

  Decomposition dec;
  dec.source.assign(v.begin(), v.end());
  dec.weights = std::move(sol.weights);

  // residual = v - D w, accumulated in 64-bit, stored in 32-bit.
  const std::size_t d = dict->dim();
  std::vector<double> synth(d);
  kernels::matvec_rowmajor(dict->matrix().data().data(), d, dict->size(), dec.weights, synth);
  dec.residual.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    dec.residual[i] = static_cast<float>(static_cast<double>(v[i]) - synth[i]);
  }

  dec.stats.sweeps_used = sol.sweeps_used;
  dec.stats.converged = sol.converged;
  dec.stats.objective = sol.objective;
  dec.stats.solve_seconds = std::chrono::duration<double>(t1 - t0).count();
  dec.dictionary = std::move(dict);
  return dec;
}

namespace {

std::size_t validated_source_index(const Decomposition& dec, const EditRequest& edit) {
  if (!dec.dictionary) throw EmptyInput("decomposition carries no dictionary");
  const auto idx = dec.dictionary->index_of(edit.source_concept);
  if (!idx) {
    throw UnknownConcept("'" + edit.source_concept + "' is not a dictionary column");
  }
  if (edit.target_vector.space != dec.dictionary->space() ||
      edit.target_vector.vector.size() != dec.dictionary->dim()) {
    throw SpaceMismatch("edit target does not match the decomposition's latent space");
  }
  return *idx;
}

}  // namespace

std::vector<float> transplant(const Decomposition& dec, const EditRequest& edit) {
  const std::size_t s = validated_source_index(dec, edit);
  const double w_s = dec.weights[s];
  if (w_s == 0.0) {
    warn("transplant: source concept '" + edit.source_concept +
         "' has a zero coefficient; edit has no estimated magnitude, returning the source "
         "unchanged");
    return dec.source;
  }

  const ConceptDictionary& dict = *dec.dictionary;
  const std::size_t d = dict.dim();
  const std::size_t n = dict.size();

  // v' = D' w* + r: one pass of D w* with column s swapped for the target.
  std::vector<double> synth(d);
  kernels::matvec_rowmajor(dict.matrix().data().data(), d, n, dec.weights, synth);
  const std::vector<float> source_col = dict.column(s);
  std::vector<float> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    const double adjusted = synth[i] +
                            w_s * (static_cast<double>(edit.target_vector.vector[i]) -
                                   static_cast<double>(source_col[i])) +
                            static_cast<double>(dec.residual[i]);
    out[i] = static_cast<float>(adjusted);
  }
  return out;
}

std::vector<float> vec_add(std::span<const float> v, const ConceptVector& a,
                           const ConceptVector& b, double w) {
  if (a.space != b.space) throw SpaceMismatch("vec_add operands live in different spaces");
  if (a.vector.size() != v.size() || b.vector.size() != v.size()) {
    throw SpaceMismatch("vec_add operand lengths disagree");
  }
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = static_cast<float>(static_cast<double>(v[i]) +
                                w * (static_cast<double>(a.vector[i]) -
                                     static_cast<double>(b.vector[i])));
  }
  return out;
}

std::vector<std::vector<float>> strength_sweep(const Decomposition& dec,
                                               const EditRequest& edit,
                                               std::span<const double> grid) {
  if (grid.empty()) throw EmptyInput("sweep grid is empty");
  for (double alpha : grid) {
    if (!std::isfinite(alpha)) throw NonFiniteInput("sweep grid entry is not finite");
  }
  const std::size_t s = validated_source_index(dec, edit);
  const std::vector<float> source_col = dec.dictionary->column(s);
  const std::size_t d = dec.dictionary->dim();

  std::vector<double> direction(d);
  for (std::size_t i = 0; i < d; ++i) {
    direction[i] = static_cast<double>(edit.target_vector.vector[i]) -
                   static_cast<double>(source_col[i]);
  }

  std::vector<std::vector<float>> out;
  out.reserve(grid.size());
  for (double alpha : grid) {
    std::vector<float> step(d);
    for (std::size_t i = 0; i < d; ++i) {
      step[i] = static_cast<float>(static_cast<double>(dec.source[i]) + alpha * direction[i]);
    }
    out.push_back(std::move(step));
  }
  return out;
}

CoefficientReport rank_coefficients(std::span<const double> weights,
                                    std::span<const std::string> names, std::size_t k) {
  const std::size_t n = weights.size();
  if (names.size() != n) {
    throw DimensionMismatch(std::to_string(names.size()) + " names for " + std::to_string(n) +
                            " weights");
  }
  if (k < 1 || k > n) {
    throw KOutOfRange("k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  std::vector<std::size_t> order(n);
  for (std::size_t j = 0; j < n; ++j) order[j] = j;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(weights[a]) > std::abs(weights[b]);
  });

  CoefficientReport report;
  report.k = k;
  report.entries.reserve(k);
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t j = order[r];
    report.entries.push_back({names[j], weights[j], std::abs(weights[j])});
  }
  return report;
}

CoefficientReport top_k_report(const Decomposition& dec, std::size_t k) {
  if (!dec.dictionary) throw EmptyInput("decomposition carries no dictionary");
  return rank_coefficients(dec.weights, dec.dictionary->names(), k);
}

}  // namespace colan
