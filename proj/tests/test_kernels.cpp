#include <doctest.h>

#include <cstring>
#include <vector>

#include "colan/kernels.hpp"
#include "colan/matrix.hpp"
#include "oracles.hpp"

using namespace colan;

namespace {

// Sizes straddling the parallel chunk boundary (8192).
const std::vector<std::size_t> kSizes = {1, 7, 100, 8191, 8192, 8193, 20000};

struct BackendGuard {
  kernels::Backend saved = kernels::backend();
  ~BackendGuard() { kernels::set_backend(saved); }
};

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("dot matches plain accumulation and is backend independent") {
  BackendGuard guard;
  oracles::Rng rng(101);
  for (std::size_t n : kSizes) {
    std::vector<float> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = static_cast<float>(rng.normal());
      b[i] = static_cast<float>(rng.normal());
    }
    kernels::set_backend(kernels::Backend::serial);
    const double serial = kernels::dot(std::span<const float>(a), std::span<const float>(b));
    kernels::set_backend(kernels::Backend::parallel);
    const double parallel = kernels::dot(std::span<const float>(a), std::span<const float>(b));
    CHECK(serial == parallel);

    double plain = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      plain += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    CHECK(serial == doctest::Approx(plain).epsilon(1e-12));
  }
}

TEST_CASE("squared_norm equals dot with itself") {
  BackendGuard guard;
  oracles::Rng rng(102);
  std::vector<float> a(9000);
  for (auto& x : a) x = static_cast<float>(rng.normal());
  for (auto backend : {kernels::Backend::serial, kernels::Backend::parallel}) {
    kernels::set_backend(backend);
    CHECK(kernels::squared_norm(std::span<const float>(a)) ==
          kernels::dot(std::span<const float>(a), std::span<const float>(a)));
  }
}

TEST_CASE("axpy accumulates in doubles") {
  BackendGuard guard;
  oracles::Rng rng(103);
  for (std::size_t n : kSizes) {
    std::vector<float> x(n);
    std::vector<double> y_serial(n), y_parallel(n), y_plain(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<float>(rng.normal());
      y_serial[i] = y_parallel[i] = y_plain[i] = rng.normal();
    }
    const double alpha = 0.37;
    kernels::set_backend(kernels::Backend::serial);
    kernels::axpy(alpha, std::span<const float>(x), std::span<double>(y_serial));
    kernels::set_backend(kernels::Backend::parallel);
    kernels::axpy(alpha, std::span<const float>(x), std::span<double>(y_parallel));
    CHECK(y_serial == y_parallel);
    for (std::size_t i = 0; i < n; ++i) y_plain[i] += alpha * static_cast<double>(x[i]);
    CHECK(y_serial == y_plain);
  }
}

TEST_CASE("matvec_rowmajor is bit-identical across backends") {
  BackendGuard guard;
  oracles::Rng rng(104);
  const std::pair<std::size_t, std::size_t> shapes[] = {{3, 5}, {100, 30}, {9000, 4}};
  for (auto [rows, cols] : shapes) {
    const DenseMatrix m = oracles::random_matrix(rng, rows, cols);
    std::vector<double> w(cols);
    for (auto& x : w) x = rng.normal();
    std::vector<double> out_serial(rows), out_parallel(rows);

    kernels::set_backend(kernels::Backend::serial);
    kernels::matvec_rowmajor(m.data().data(), rows, cols, w, out_serial);
    kernels::set_backend(kernels::Backend::parallel);
    kernels::matvec_rowmajor(m.data().data(), rows, cols, w, out_parallel);
    CHECK(out_serial == out_parallel);

    for (std::size_t i = 0; i < rows; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        acc += w[j] * static_cast<double>(m.at(i, j));
      }
      CHECK(out_serial[i] == acc);
    }
  }
}

TEST_CASE("row_dots and combine_rows match plain loops") {
  BackendGuard guard;
  oracles::Rng rng(105);
  const std::size_t k = 7, d = 9001;
  std::vector<double> rows(k * d), u(d), coeffs(k);
  for (auto& x : rows) x = rng.normal();
  for (auto& x : u) x = rng.normal();
  for (auto& x : coeffs) x = rng.normal();

  for (auto backend : {kernels::Backend::serial, kernels::Backend::parallel}) {
    kernels::set_backend(backend);

    std::vector<double> y(k);
    kernels::row_dots(rows.data(), k, d, u, y);
    for (std::size_t i = 0; i < k; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < d; ++j) acc += rows[i * d + j] * u[j];
      CHECK(y[i] == doctest::Approx(acc).epsilon(1e-13));
    }

    std::vector<double> combined(d);
    kernels::combine_rows(coeffs, rows.data(), k, d, combined);
    for (std::size_t j : {std::size_t{0}, std::size_t{4000}, d - 1}) {
      double acc = 0.0;
      for (std::size_t i = 0; i < k; ++i) acc += coeffs[i] * rows[i * d + j];
      CHECK(combined[j] == acc);
    }
  }
}

TEST_CASE("column_sums accumulates in 64-bit") {
  BackendGuard guard;
  const std::size_t k = 3, d = 8200;
  std::vector<float> rows(k * d, 0.125f);
  for (auto backend : {kernels::Backend::serial, kernels::Backend::parallel}) {
    kernels::set_backend(backend);
    std::vector<double> sums(d);
    kernels::column_sums(rows.data(), k, d, sums);
    for (std::size_t j : {std::size_t{0}, std::size_t{8191}, d - 1}) {
      CHECK(sums[j] == 0.375);
    }
  }
}

}  // TEST_SUITE
