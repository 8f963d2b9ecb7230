#include "colan/kernels.hpp"

#include <atomic>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace colan::kernels {

namespace {

// Fixed tile size for reductions. Partial sums are produced per chunk and
// combined in chunk order, so the parallel result is independent of the
// thread count.
constexpr std::size_t kChunk = 8192;

std::atomic<Backend> g_backend{
#ifdef _OPENMP
    Backend::parallel
#else
    Backend::serial
#endif
};

// Single chunk of a reduction: four accumulators to break the FMA latency
// chain, combined in a fixed order.
template <typename A, typename B>
double dot_chunk(const A* a, const B* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    s1 += static_cast<double>(a[i + 1]) * static_cast<double>(b[i + 1]);
    s2 += static_cast<double>(a[i + 2]) * static_cast<double>(b[i + 2]);
    s3 += static_cast<double>(a[i + 3]) * static_cast<double>(b[i + 3]);
  }
  for (; i < n; ++i) s0 += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return ((s0 + s1) + s2) + s3;
}

// Walks the same chunk partials as the parallel path, in the same order;
// the two backends therefore round identically and differ only in which
// thread produces each partial.
template <typename A, typename B>
double dot_serial(const A* a, const B* b, std::size_t n) {
  if (n <= kChunk) return dot_chunk(a, b, n);
  const std::size_t nchunks = (n + kChunk - 1) / kChunk;
  double s = 0.0;
  for (std::size_t c = 0; c < nchunks; ++c) {
    const std::size_t begin = c * kChunk;
    s += dot_chunk(a + begin, b + begin, std::min(kChunk, n - begin));
  }
  return s;
}

template <typename A, typename B>
double dot_parallel(const A* a, const B* b, std::size_t n) {
  if (n <= kChunk) return dot_chunk(a, b, n);
  const std::size_t nchunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partial(nchunks);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long c = 0; c < static_cast<long long>(nchunks); ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * kChunk;
    const std::size_t len = std::min(kChunk, n - begin);
    partial[static_cast<std::size_t>(c)] = dot_chunk(a + begin, b + begin, len);
  }
  double s = 0.0;
  for (double p : partial) s += p;
  return s;
}

template <typename X>
void axpy_serial(double alpha, const X* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * static_cast<double>(x[i]);
}

template <typename X>
void axpy_parallel(double alpha, const X* x, double* y, std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    y[i] += alpha * static_cast<double>(x[i]);
  }
}

void matvec_rowmajor_range(const float* m, std::size_t cols, const double* weights,
                           double* out, std::size_t row_begin, std::size_t row_end) {
  for (std::size_t i = row_begin; i < row_end; ++i) {
    const float* r = m + i * cols;
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += static_cast<double>(r[j]) * weights[j];
    out[i] = s;
  }
}

void combine_rows_range(const double* coeffs, const double* rows, std::size_t k,
                        std::size_t d, double* out, std::size_t begin, std::size_t end) {
  for (std::size_t i = begin; i < end; ++i) out[i] = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    const double c = coeffs[r];
    const double* row = rows + r * d;
    for (std::size_t i = begin; i < end; ++i) out[i] += c * row[i];
  }
}

void column_sums_range(const float* rows, std::size_t k, std::size_t d, double* out,
                       std::size_t begin, std::size_t end) {
  for (std::size_t i = begin; i < end; ++i) out[i] = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    const float* row = rows + r * d;
    for (std::size_t i = begin; i < end; ++i) out[i] += static_cast<double>(row[i]);
  }
}

}  // namespace

Backend backend() noexcept { return g_backend.load(std::memory_order_relaxed); }
void set_backend(Backend b) noexcept { g_backend.store(b, std::memory_order_relaxed); }

bool parallel_available() noexcept {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

namespace serial {

double dot_ff(const float* a, const float* b, std::size_t n) { return dot_serial(a, b, n); }
double dot_fd(const float* a, const double* b, std::size_t n) { return dot_serial(a, b, n); }
double dot_dd(const double* a, const double* b, std::size_t n) { return dot_serial(a, b, n); }
void axpy_f(double alpha, const float* x, double* y, std::size_t n) { axpy_serial(alpha, x, y, n); }
void axpy_d(double alpha, const double* x, double* y, std::size_t n) { axpy_serial(alpha, x, y, n); }

void matvec_rowmajor(const float* m, std::size_t rows, std::size_t cols,
                     const double* weights, double* out) {
  matvec_rowmajor_range(m, cols, weights, out, 0, rows);
}

void row_dots(const double* rows, std::size_t k, std::size_t d, const double* u, double* y) {
  for (std::size_t r = 0; r < k; ++r) y[r] = dot_serial(rows + r * d, u, d);
}

void combine_rows(const double* coeffs, const double* rows, std::size_t k, std::size_t d,
                  double* out) {
  combine_rows_range(coeffs, rows, k, d, out, 0, d);
}

void column_sums(const float* rows, std::size_t k, std::size_t d, double* out) {
  column_sums_range(rows, k, d, out, 0, d);
}

}  // namespace serial

namespace parallel {

double dot_ff(const float* a, const float* b, std::size_t n) { return dot_parallel(a, b, n); }
double dot_fd(const float* a, const double* b, std::size_t n) { return dot_parallel(a, b, n); }
double dot_dd(const double* a, const double* b, std::size_t n) { return dot_parallel(a, b, n); }
void axpy_f(double alpha, const float* x, double* y, std::size_t n) { axpy_parallel(alpha, x, y, n); }
void axpy_d(double alpha, const double* x, double* y, std::size_t n) { axpy_parallel(alpha, x, y, n); }

void matvec_rowmajor(const float* m, std::size_t rows, std::size_t cols,
                     const double* weights, double* out) {
  const std::size_t nchunks = (rows + kChunk - 1) / kChunk;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long c = 0; c < static_cast<long long>(nchunks); ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * kChunk;
    const std::size_t end = std::min(rows, begin + kChunk);
    matvec_rowmajor_range(m, cols, weights, out, begin, end);
  }
}

void row_dots(const double* rows, std::size_t k, std::size_t d, const double* u, double* y) {
  // Each dot is computed with the chunked kernel; rows are independent.
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long r = 0; r < static_cast<long long>(k); ++r) {
    y[r] = dot_parallel(rows + static_cast<std::size_t>(r) * d, u, d);
  }
}

void combine_rows(const double* coeffs, const double* rows, std::size_t k, std::size_t d,
                  double* out) {
  const std::size_t nchunks = (d + kChunk - 1) / kChunk;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long c = 0; c < static_cast<long long>(nchunks); ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * kChunk;
    const std::size_t end = std::min(d, begin + kChunk);
    combine_rows_range(coeffs, rows, k, d, out, begin, end);
  }
}

void column_sums(const float* rows, std::size_t k, std::size_t d, double* out) {
  const std::size_t nchunks = (d + kChunk - 1) / kChunk;
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (long long c = 0; c < static_cast<long long>(nchunks); ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * kChunk;
    const std::size_t end = std::min(d, begin + kChunk);
    column_sums_range(rows, k, d, out, begin, end);
  }
}

}  // namespace parallel

double dot(std::span<const float> a, std::span<const float> b) {
  return backend() == Backend::serial ? serial::dot_ff(a.data(), b.data(), a.size())
                                      : parallel::dot_ff(a.data(), b.data(), a.size());
}

double dot(std::span<const float> a, std::span<const double> b) {
  return backend() == Backend::serial ? serial::dot_fd(a.data(), b.data(), a.size())
                                      : parallel::dot_fd(a.data(), b.data(), a.size());
}

double dot(std::span<const double> a, std::span<const double> b) {
  return backend() == Backend::serial ? serial::dot_dd(a.data(), b.data(), a.size())
                                      : parallel::dot_dd(a.data(), b.data(), a.size());
}

double squared_norm(std::span<const float> x) { return dot(x, x); }
double squared_norm(std::span<const double> x) { return dot(x, x); }

void axpy(double alpha, std::span<const float> x, std::span<double> y) {
  backend() == Backend::serial ? serial::axpy_f(alpha, x.data(), y.data(), x.size())
                               : parallel::axpy_f(alpha, x.data(), y.data(), x.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  backend() == Backend::serial ? serial::axpy_d(alpha, x.data(), y.data(), x.size())
                               : parallel::axpy_d(alpha, x.data(), y.data(), x.size());
}

void matvec_rowmajor(const float* m, std::size_t rows, std::size_t cols,
                     std::span<const double> weights, std::span<double> out) {
  backend() == Backend::serial
      ? serial::matvec_rowmajor(m, rows, cols, weights.data(), out.data())
      : parallel::matvec_rowmajor(m, rows, cols, weights.data(), out.data());
}

void row_dots(const double* rows, std::size_t k, std::size_t d, std::span<const double> u,
              std::span<double> y) {
  backend() == Backend::serial ? serial::row_dots(rows, k, d, u.data(), y.data())
                               : parallel::row_dots(rows, k, d, u.data(), y.data());
}

void combine_rows(std::span<const double> coeffs, const double* rows, std::size_t k,
                  std::size_t d, std::span<double> out) {
  backend() == Backend::serial
      ? serial::combine_rows(coeffs.data(), rows, k, d, out.data())
      : parallel::combine_rows(coeffs.data(), rows, k, d, out.data());
}

void column_sums(const float* rows, std::size_t k, std::size_t d, std::span<double> out) {
  backend() == Backend::serial ? serial::column_sums(rows, k, d, out.data())
                               : parallel::column_sums(rows, k, d, out.data());
}

}  // namespace colan::kernels
