#include "colan/solver.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "colan/errors.hpp"
#include "colan/kernels.hpp"

namespace colan {

namespace {

constexpr std::size_t kMaxPowerIterations = 1000;
constexpr double kPowerIterationTol = 1e-9;

void check_finite_vector(std::span<const float> v) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      throw NonFiniteInput("vector entry " + std::to_string(i) + " is not finite");
    }
  }
}

// Atoms repacked contiguously: column j of the d x N dictionary becomes
// row j of an N x d buffer, which keeps the per-coordinate dot and axpy
// streaming over adjacent memory.
struct PackedAtoms {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<float> data;          // n * d
  std::vector<double> sq_norms;     // ||d_j||^2, 64-bit

  std::span<const float> atom(std::size_t j) const { return {data.data() + j * d, d}; }
};

PackedAtoms pack_columns(const DenseMatrix& dict) {
  PackedAtoms packed;
  packed.d = dict.rows();
  packed.n = dict.cols();
  packed.data.resize(packed.n * packed.d);
  const std::size_t n = packed.n;
  for (std::size_t i = 0; i < packed.d; ++i) {
    const float* row = dict.data().data() + i * n;
    for (std::size_t j = 0; j < n; ++j) packed.data[j * packed.d + i] = row[j];
  }
  packed.sq_norms.resize(n);
  for (std::size_t j = 0; j < n; ++j) {
    packed.sq_norms[j] = kernels::squared_norm(packed.atom(j));
    if (packed.sq_norms[j] == 0.0) {
      throw DegenerateAtom("dictionary column " + std::to_string(j) + " is all zeros");
    }
  }
  return packed;
}

double penalty(std::span<const double> w, const SolverConfig& cfg) {
  double l1 = 0.0, l2 = 0.0;
  for (double x : w) {
    l1 += std::abs(x);
    l2 += x * x;
  }
  return cfg.lambda * (cfg.rho * l1 + 0.5 * (1.0 - cfg.rho) * l2);
}

// Largest stationarity violation measured against the supplied residual.
double kkt_violation_impl(const PackedAtoms& atoms, std::span<const double> residual,
                          std::span<const double> w, const SolverConfig& cfg) {
  double worst = 0.0;
  for (std::size_t j = 0; j < atoms.n; ++j) {
    const double corr = 2.0 * kernels::dot(atoms.atom(j), residual);
    double violation;
    if (w[j] != 0.0) {
      const double sign = w[j] > 0.0 ? 1.0 : -1.0;
      violation = std::abs(corr - cfg.lambda * cfg.rho * sign -
                           cfg.lambda * (1.0 - cfg.rho) * w[j]);
    } else {
      violation = std::max(0.0, std::abs(corr) - cfg.lambda * cfg.rho);
    }
    worst = std::max(worst, violation);
  }
  return worst;
}

}  // namespace

void SolverConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw NonFiniteInput("lambda must be finite and non-negative");
  }
  if (!(rho >= 0.0 && rho <= 1.0)) throw NonFiniteInput("rho must lie in [0, 1]");
  if (!(tol > 0.0) || !std::isfinite(tol)) throw NonFiniteInput("tol must be positive");
  if (max_sweeps < 1) throw NonFiniteInput("max_sweeps must be at least 1");
}

double soft_threshold(double x, double t) {
  const double m = std::abs(x) - t;
  return m <= 0.0 ? 0.0 : std::copysign(m, x);
}

SparseSolution elastic_net_solve(std::span<const float> v, const DenseMatrix& dict,
                                 const SolverConfig& cfg,
                                 std::vector<double>* sweep_objectives) {
  cfg.validate();
  if (dict.rows() == 0 || dict.cols() == 0) throw EmptyInput("empty dictionary");
  if (v.size() != dict.rows()) {
    throw DimensionMismatch("vector of length " + std::to_string(v.size()) +
                            " against a dictionary with " + std::to_string(dict.rows()) +
                            " rows");
  }
  check_finite_vector(v);

  const PackedAtoms atoms = pack_columns(dict);
  const std::size_t n = atoms.n;
  const std::size_t d = atoms.d;

  std::vector<double> residual(d);
  for (std::size_t i = 0; i < d; ++i) residual[i] = static_cast<double>(v[i]);
  const double v_norm = std::sqrt(kernels::squared_norm(residual));
  const double kkt_target = 1e-7 * (1.0 + v_norm);

  std::vector<double> w(n, 0.0);
  const double l1_weight = cfg.lambda * cfg.rho;
  const double ridge = cfg.lambda * (1.0 - cfg.rho);

  SparseSolution out;
  out.weights.assign(n, 0.0);
  if (sweep_objectives) sweep_objectives->clear();

  for (std::size_t sweep = 1; sweep <= cfg.max_sweeps; ++sweep) {
    double max_delta = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const auto atom = atoms.atom(j);
      // 2 d_j^T r_{-j} with r_{-j} the residual excluding atom j.
      const double corr = 2.0 * (kernels::dot(atom, std::span<const double>(residual)) +
                                 w[j] * atoms.sq_norms[j]);
      const double w_new = soft_threshold(corr, l1_weight) / (2.0 * atoms.sq_norms[j] + ridge);
      if (w_new != w[j]) {
        kernels::axpy(w[j] - w_new, atom, std::span<double>(residual));
        max_delta = std::max(max_delta, std::abs(w_new - w[j]));
        w[j] = w_new;
      }
    }
    out.sweeps_used = sweep;
    if (sweep_objectives) {
      sweep_objectives->push_back(kernels::squared_norm(std::span<const double>(residual)) +
                                  penalty(w, cfg));
    }
    if (max_delta < cfg.tol) {
      // tol alone certifies only that the sweep stalled; also demand a
      // stationarity certificate before declaring convergence.
      if (kkt_violation_impl(atoms, residual, w, cfg) <= kkt_target) {
        out.converged = true;
        break;
      }
    }
  }

  // Recompute the residual from scratch so the reported objective does not
  // carry incremental drift.
  std::vector<double> synth(d);
  kernels::matvec_rowmajor(dict.data().data(), d, n, w, synth);
  std::vector<double> exact(d);
  for (std::size_t i = 0; i < d; ++i) exact[i] = static_cast<double>(v[i]) - synth[i];
  out.objective = kernels::squared_norm(std::span<const double>(exact)) + penalty(w, cfg);
  out.weights = std::move(w);
  return out;
}

double kkt_violation(std::span<const float> v, const DenseMatrix& dict,
                     std::span<const double> weights, const SolverConfig& cfg) {
  const PackedAtoms atoms = pack_columns(dict);
  if (v.size() != atoms.d || weights.size() != atoms.n) {
    throw DimensionMismatch("kkt_violation operand sizes");
  }
  std::vector<double> synth(atoms.d);
  kernels::matvec_rowmajor(dict.data().data(), atoms.d, atoms.n, weights, synth);
  std::vector<double> residual(atoms.d);
  for (std::size_t i = 0; i < atoms.d; ++i) {
    residual[i] = static_cast<double>(v[i]) - synth[i];
  }
  return kkt_violation_impl(atoms, residual, weights, cfg);
}

std::vector<float> mean_rows(const DenseMatrix& rows) {
  if (rows.rows() == 0) throw EmptyInput("mean of zero rows");
  const std::size_t k = rows.rows();
  const std::size_t d = rows.cols();
  std::vector<double> sums(d);
  kernels::column_sums(rows.data().data(), k, d, sums);
  std::vector<float> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = static_cast<float>(sums[i] / static_cast<double>(k));
  }
  return out;
}

std::vector<float> pca_first_component(const DenseMatrix& rows) {
  const std::size_t k = rows.rows();
  const std::size_t d = rows.cols();
  if (k < 2) throw RankDeficient("need at least 2 rows, got " + std::to_string(k));
  if (d == 0) throw DimensionMismatch("zero-width rows");

  // Center in 64-bit.
  std::vector<double> mean(d);
  kernels::column_sums(rows.data().data(), k, d, mean);
  for (std::size_t i = 0; i < d; ++i) mean[i] /= static_cast<double>(k);

  std::vector<double> centered(k * d);
  double rows_sq = 0.0;
  double centered_sq = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    const float* src = rows.data().data() + r * d;
    double* dst = centered.data() + r * d;
    for (std::size_t i = 0; i < d; ++i) {
      const double x = static_cast<double>(src[i]);
      dst[i] = x - mean[i];
      rows_sq += x * x;
      centered_sq += dst[i] * dst[i];
    }
  }
  if (centered_sq <= 1e-14 * (1.0 + rows_sq)) {
    throw RankDeficient("all rows equal: no variance to decompose");
  }

  std::vector<double> u(d, 1.0 / std::sqrt(static_cast<double>(d)));
  std::vector<double> y(k);
  std::vector<double> next(d);
  for (std::size_t it = 0; it < kMaxPowerIterations; ++it) {
    kernels::row_dots(centered.data(), k, d, u, y);
    kernels::combine_rows(y, centered.data(), k, d, next);
    const double norm = std::sqrt(kernels::squared_norm(std::span<const double>(next)));
    if (norm == 0.0) {
      throw RankDeficient("power iteration collapsed to the zero vector");
    }
    double diff_sq = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      next[i] /= norm;
      const double diff = next[i] - u[i];
      diff_sq += diff * diff;
    }
    u.swap(next);
    if (std::sqrt(diff_sq) < kPowerIterationTol) break;
  }

  // Orient: u . mean >= 0, tie-broken on the first nonzero coordinate.
  const double mean_norm = std::sqrt(kernels::squared_norm(std::span<const double>(mean)));
  const double score = kernels::dot(std::span<const double>(u), std::span<const double>(mean));
  double flip = 1.0;
  if (std::abs(score) > 1e-12 * (1.0 + mean_norm)) {
    flip = score >= 0.0 ? 1.0 : -1.0;
  } else {
    for (std::size_t i = 0; i < d; ++i) {
      if (std::abs(u[i]) > 1e-12) {
        flip = u[i] > 0.0 ? 1.0 : -1.0;
        break;
      }
    }
  }

  std::vector<float> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(flip * u[i]);
  return out;
}

}  // namespace colan
