#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "colan/dictionary.hpp"
#include "colan/solver.hpp"

namespace colan {

struct SolveStats {
  std::size_t sweeps_used = 0;
  bool converged = false;
  double objective = 0.0;
  double solve_seconds = 0.0;
};

// Sparse decomposition of a source latent vector: source = D * weights +
// residual, with the residual defined as the 64-bit difference rounded to
// 32-bit storage. Immutable; edits never re-solve weights or residual.
struct Decomposition {
  std::shared_ptr<const ConceptDictionary> dictionary;
  std::vector<float> source;
  std::vector<double> weights;
  std::vector<float> residual;
  SolveStats stats;
};

enum class EditKind { replace, add, remove };

std::string_view to_string(EditKind k);
EditKind edit_kind_from_string(std::string_view s);

// A validated edit. For `add`, source_concept is the counterpart concept
// proposed for the target (the dictionary column being swapped out); for
// `remove`, the target is the reserved null concept.
struct EditRequest {
  EditKind kind = EditKind::replace;
  std::string source_concept;
  std::string target_concept;
  ConceptVector target_vector;
};

// Builds and validates an edit against a dictionary. Throws UnknownConcept
// if source_concept is not a column, SpaceMismatch on dimension/space
// disagreement, ZeroAtom for a zero non-null target, ValidationFailed for a
// remove whose target is not the null concept.
EditRequest make_edit(const ConceptDictionary& dict, EditKind kind,
                      std::string source_concept, ConceptVector target_vector);

Decomposition decompose(std::span<const float> v,
                        std::shared_ptr<const ConceptDictionary> dict,
                        const SolverConfig& cfg);

// v' = D' w* + r with the source-concept column replaced by the target
// vector; coefficients and residual are reused verbatim. When the solved
// source coefficient is zero the edit has no estimated magnitude: the
// source vector is returned unchanged and a warning is emitted.
std::vector<float> transplant(const Decomposition& dec, const EditRequest& edit);

// Baseline: v + w * (a - b) with a fixed, unestimated strength.
std::vector<float> vec_add(std::span<const float> v, const ConceptVector& a,
                           const ConceptVector& b, double w);

// v(alpha) = v + alpha * (d_target - d_source) for every alpha in `grid`.
std::vector<std::vector<float>> strength_sweep(const Decomposition& dec,
                                               const EditRequest& edit,
                                               std::span<const double> grid);

struct CoefficientReport {
  struct Entry {
    std::string name;
    double coefficient = 0.0;
    double magnitude = 0.0;
  };
  std::vector<Entry> entries;
  std::size_t k = 0;
};

// Top-k coefficients by |w*| descending; ties resolved by dictionary column
// order.
CoefficientReport top_k_report(const Decomposition& dec, std::size_t k);

// Same ranking over bare weight/name arrays (persisted decompositions).
CoefficientReport rank_coefficients(std::span<const double> weights,
                                    std::span<const std::string> names, std::size_t k);

}  // namespace colan
