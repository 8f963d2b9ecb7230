#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "colan/matrix.hpp"

namespace colan {

// Elastic-net settings. The objective minimized is
//   J(w) = ||v - D w||_2^2 + lambda * (rho * ||w||_1 + (1 - rho)/2 * ||w||_2^2)
// which reduces to plain L1-regularized least squares at rho = 1. Note the
// quadratic loss carries no 1/2 factor, so for orthonormal columns the
// shrinkage threshold is lambda/2.
struct SolverConfig {
  double lambda = 0.01;
  double rho = 1.0;
  double tol = 1e-7;
  std::size_t max_sweeps = 1000;

  void validate() const;
};

struct SparseSolution {
  std::vector<double> weights;
  std::size_t sweeps_used = 0;
  bool converged = false;
  double objective = 0.0;
};

// sign(x) * max(|x| - t, 0); t must be non-negative.
double soft_threshold(double x, double t);

// Cyclic coordinate descent from a zero start, coordinates visited in order
// 0..N-1; dot products and the residual are carried in 64-bit. `converged`
// requires both that the largest coefficient change in the final sweep fell
// below cfg.tol and that the stationarity conditions of J hold to
// 1e-7 * (1 + ||v||_2). Deterministic for a fixed kernel backend.
//
// `dict` is d x N with atoms as columns. Throws DimensionMismatch,
// DegenerateAtom (zero column) or NonFiniteInput.
//
// When `sweep_objectives` is non-null it receives J after every full sweep.
SparseSolution elastic_net_solve(std::span<const float> v, const DenseMatrix& dict,
                                 const SolverConfig& cfg,
                                 std::vector<double>* sweep_objectives = nullptr);

// Stationarity residual of J at `weights`: the largest violation over all
// coordinates. Zero at an exact optimum.
double kkt_violation(std::span<const float> v, const DenseMatrix& dict,
                     std::span<const double> weights, const SolverConfig& cfg);

// Arithmetic mean of the rows, accumulated in 64-bit then rounded to 32-bit.
std::vector<float> mean_rows(const DenseMatrix& rows);

// First principal component of the rows (unit L2 norm): power iteration on
// the centered Gram form, all-ones start, at most 1000 iterations, stopping
// when successive iterates differ by less than 1e-9 in L2. The sign is fixed
// so that u . mean >= 0, falling back to a positive first nonzero coordinate
// when the mean is zero or orthogonal to u.
std::vector<float> pca_first_component(const DenseMatrix& rows);

}  // namespace colan
