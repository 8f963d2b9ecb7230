#include <doctest.h>

#include <cmath>
#include <vector>

#include "colan/errors.hpp"
#include "colan/matrix.hpp"
#include "colan/solver.hpp"
#include "oracles.hpp"

using namespace colan;

TEST_SUITE("solver") {

TEST_CASE("soft_threshold") {
  CHECK(soft_threshold(1.2, 0.5) == doctest::Approx(0.7));
  CHECK(soft_threshold(-1.2, 0.5) == doctest::Approx(-0.7));
  CHECK(soft_threshold(0.3, 0.5) == 0.0);
  CHECK(soft_threshold(-0.3, 0.5) == 0.0);
  CHECK(soft_threshold(0.5, 0.5) == 0.0);
  CHECK(soft_threshold(2.25, 0.0) == 2.25);
}

TEST_CASE("config validation") {
  SolverConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.lambda = -0.1;
  CHECK_THROWS_AS(cfg.validate(), NonFiniteInput);
  cfg = SolverConfig{};
  cfg.rho = 1.5;
  CHECK_THROWS_AS(cfg.validate(), NonFiniteInput);
  cfg = SolverConfig{};
  cfg.tol = 0.0;
  CHECK_THROWS_AS(cfg.validate(), NonFiniteInput);
  cfg = SolverConfig{};
  cfg.max_sweeps = 0;
  CHECK_THROWS_AS(cfg.validate(), NonFiniteInput);
}

// Worked instance solved by hand from the stationarity conditions:
//   D = [[1, 0.6], [0, 0.8], [0, 0]], v = (1, 1, 0), lambda = 0.1, rho = 1
//   1 - a - 0.6 b = 0.05 and 1 - 0.8 b = 0.025
// giving w* = (0.21875, 1.21875) and J* = 0.146875.
TEST_CASE("hand-solved two-atom instance") {
  const DenseMatrix dict = DenseMatrix::from_rows({{1.0f, 0.6f}, {0.0f, 0.8f}, {0.0f, 0.0f}});
  const std::vector<float> v = {1.0f, 1.0f, 0.0f};
  SolverConfig cfg;
  cfg.lambda = 0.1;
  cfg.rho = 1.0;
  cfg.tol = 1e-12;  // drive the iterate essentially onto the fixed point

  // 0.6f and 0.8f quantize the column, shifting the exact optimum by ~1e-8;
  // the comparison tolerance covers that, not solver error.
  const SparseSolution sol = elastic_net_solve(v, dict, cfg);
  REQUIRE(sol.weights.size() == 2);
  CHECK(sol.converged);
  CHECK(sol.weights[0] == doctest::Approx(0.21875).epsilon(1e-6));
  CHECK(sol.weights[1] == doctest::Approx(1.21875).epsilon(1e-6));
  CHECK(sol.objective == doctest::Approx(0.146875).epsilon(1e-6));

  // The independent grid oracle lands on the same optimum.
  const auto oracle = oracles::grid_search(v, dict, cfg.lambda, cfg.rho);
  CHECK(oracle.objective == doctest::Approx(0.146875).epsilon(1e-7));
  CHECK(sol.objective <= oracle.objective + 1e-4);
}

TEST_CASE("orthonormal closed form S_{lambda/2}(D'v)") {
  oracles::Rng rng(201);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t d = 6 + rng.index(10);
    const std::size_t n = 1 + rng.index(d);
    const DenseMatrix dict = oracles::random_orthonormal_dict(rng, d, n);
    const std::vector<float> v = oracles::random_vector(rng, d);
    SolverConfig cfg;
    cfg.lambda = 0.05;
    cfg.rho = 1.0;

    const SparseSolution sol = elastic_net_solve(v, dict, cfg);
    for (std::size_t j = 0; j < n; ++j) {
      double corr = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        corr += static_cast<double>(dict.at(i, j)) * static_cast<double>(v[i]);
      }
      CHECK(sol.weights[j] == doctest::Approx(soft_threshold(corr, cfg.lambda / 2.0))
                                  .epsilon(1e-6));
    }
  }
}

TEST_CASE("kkt_violation is tiny at the solution and large away from it") {
  oracles::Rng rng(202);
  const DenseMatrix dict = oracles::random_unit_dict(rng, 24, 6);
  const std::vector<float> v = oracles::random_vector(rng, 24);
  SolverConfig cfg;

  const SparseSolution sol = elastic_net_solve(v, dict, cfg);
  double vnorm = 0.0;
  for (float x : v) vnorm += static_cast<double>(x) * static_cast<double>(x);
  vnorm = std::sqrt(vnorm);
  CHECK(kkt_violation(v, dict, sol.weights, cfg) <= 1e-6 * (1.0 + vnorm));

  std::vector<double> off = sol.weights;
  off[0] += 0.5;
  CHECK(kkt_violation(v, dict, off, cfg) > 1e-3);
}

TEST_CASE("elastic net penalty shrinks more than pure L2 share would") {
  // With rho < 1 the quadratic term keeps every coordinate slightly away
  // from the pure-lasso value; validate against the grid oracle instead of
  // a closed form.
  oracles::Rng rng(203);
  const DenseMatrix dict = oracles::random_unit_dict(rng, 8, 2);
  const std::vector<float> v = oracles::random_vector(rng, 8);
  SolverConfig cfg;
  cfg.lambda = 0.05;
  cfg.rho = 0.5;

  const SparseSolution sol = elastic_net_solve(v, dict, cfg);
  const auto oracle = oracles::grid_search(v, dict, cfg.lambda, cfg.rho);
  CHECK(sol.objective <= oracle.objective + 1e-4);
  CHECK(oracles::objective(v, dict, sol.weights, cfg.lambda, cfg.rho) ==
        doctest::Approx(sol.objective).epsilon(1e-9));
}

TEST_CASE("sweep_objectives never increase") {
  oracles::Rng rng(204);
  const DenseMatrix dict = oracles::random_unit_dict(rng, 32, 10);
  const std::vector<float> v = oracles::random_vector(rng, 32);
  SolverConfig cfg;

  std::vector<double> objectives;
  elastic_net_solve(v, dict, cfg, &objectives);
  REQUIRE(!objectives.empty());
  for (std::size_t i = 1; i < objectives.size(); ++i) {
    CHECK(objectives[i] <= objectives[i - 1] + 1e-12);
  }
}

TEST_CASE("input validation") {
  const DenseMatrix dict = DenseMatrix::from_rows({{1.0f, 0.0f}, {0.0f, 1.0f}});
  const std::vector<float> v = {1.0f, 2.0f};
  SolverConfig cfg;

  const std::vector<float> short_v = {1.0f};
  CHECK_THROWS_AS(elastic_net_solve(short_v, dict, cfg), DimensionMismatch);

  const DenseMatrix zero_col = DenseMatrix::from_rows({{1.0f, 0.0f}, {0.0f, 0.0f}});
  CHECK_THROWS_AS(elastic_net_solve(v, zero_col, cfg), DegenerateAtom);

  const DenseMatrix empty_dict(2, 0);
  CHECK_THROWS_AS(elastic_net_solve(v, empty_dict, cfg), EmptyInput);
}

TEST_CASE("zero vector solves to zero weights") {
  const DenseMatrix dict = DenseMatrix::from_rows({{1.0f, 0.0f}, {0.0f, 1.0f}});
  const std::vector<float> v = {0.0f, 0.0f};
  const SparseSolution sol = elastic_net_solve(v, dict, SolverConfig{});
  CHECK(sol.converged);
  CHECK(sol.weights[0] == 0.0);
  CHECK(sol.weights[1] == 0.0);
  CHECK(sol.objective == 0.0);
}

TEST_CASE("mean_rows") {
  const DenseMatrix rows = DenseMatrix::from_rows({{1.0f, 2.0f}, {1.0f, 1.0f}, {1.0f, 1.0f}});
  const std::vector<float> mean = mean_rows(rows);
  REQUIRE(mean.size() == 2);
  CHECK(mean[0] == doctest::Approx(1.0));
  CHECK(mean[1] == doctest::Approx(4.0 / 3.0));
}

TEST_CASE("pca_first_component on planted rank-1 data") {
  oracles::Rng rng(205);
  const std::size_t k = 12, d = 20;
  std::vector<double> q(d);
  double qn = 0.0;
  for (auto& x : q) {
    x = rng.normal();
    qn += x * x;
  }
  qn = std::sqrt(qn);
  for (auto& x : q) x /= qn;

  DenseMatrix rows(k, d);
  for (std::size_t i = 0; i < k; ++i) {
    const double a = 3.0 * rng.normal();
    for (std::size_t j = 0; j < d; ++j) {
      rows.at(i, j) = static_cast<float>(a * q[j] + 0.01 * rng.normal());
    }
  }

  const std::vector<float> u = pca_first_component(rows);
  const std::vector<double> oracle = oracles::svd_top_right_singular(rows);
  CHECK(oracles::angle_between(u, oracle) < 1e-4);

  double norm = 0.0, mean_dot = 0.0;
  const std::vector<float> mean = mean_rows(rows);
  for (std::size_t j = 0; j < d; ++j) {
    norm += static_cast<double>(u[j]) * static_cast<double>(u[j]);
    mean_dot += static_cast<double>(u[j]) * static_cast<double>(mean[j]);
  }
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(mean_dot >= 0.0);
}

TEST_CASE("pca sign falls back to positive first nonzero for zero mean") {
  // Two opposite rows: mean is zero, component is the row direction with the
  // first nonzero coordinate positive.
  const DenseMatrix rows = DenseMatrix::from_rows({{-1.0f, -2.0f}, {1.0f, 2.0f}});
  const std::vector<float> u = pca_first_component(rows);
  CHECK(u[0] > 0.0f);
  CHECK(u[1] / u[0] == doctest::Approx(2.0).epsilon(1e-6));
}

}  // TEST_SUITE
