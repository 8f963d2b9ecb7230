#pragma once

#include <cstddef>
#include <span>

namespace colan::kernels {

// Two interchangeable backends for the dense inner loops. `serial` is the
// straightforward reference used to validate `parallel`, which tiles work
// into fixed-size chunks so results do not depend on the number of OpenMP
// threads. All reductions accumulate in 64-bit regardless of backend.
enum class Backend { serial, parallel };

Backend backend() noexcept;
void set_backend(Backend b) noexcept;
bool parallel_available() noexcept;

// sum_i a[i]*b[i]
double dot(std::span<const float> a, std::span<const float> b);
double dot(std::span<const float> a, std::span<const double> b);
double dot(std::span<const double> a, std::span<const double> b);

double squared_norm(std::span<const float> x);
double squared_norm(std::span<const double> x);

// y[i] += alpha * x[i]
void axpy(double alpha, std::span<const float> x, std::span<double> y);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

// out[i] = sum_j weights[j] * m[i*cols + j] for a row-major rows x cols
// matrix; the per-element summation order is j-ascending in both backends.
void matvec_rowmajor(const float* m, std::size_t rows, std::size_t cols,
                     std::span<const double> weights, std::span<double> out);

// y[k] = dot(rows[k], u) for a row-major k x d matrix.
void row_dots(const double* rows, std::size_t k, std::size_t d,
              std::span<const double> u, std::span<double> y);

// out[i] = sum_k coeffs[k] * rows[k*d + i]; k-ascending summation order.
void combine_rows(std::span<const double> coeffs, const double* rows, std::size_t k,
                  std::size_t d, std::span<double> out);

// out[i] = sum_k rows[k*d + i] (64-bit accumulation; caller divides).
void column_sums(const float* rows, std::size_t k, std::size_t d, std::span<double> out);

namespace serial {
double dot_ff(const float* a, const float* b, std::size_t n);
double dot_fd(const float* a, const double* b, std::size_t n);
double dot_dd(const double* a, const double* b, std::size_t n);
void axpy_f(double alpha, const float* x, double* y, std::size_t n);
void axpy_d(double alpha, const double* x, double* y, std::size_t n);
void matvec_rowmajor(const float* m, std::size_t rows, std::size_t cols,
                     const double* weights, double* out);
void row_dots(const double* rows, std::size_t k, std::size_t d, const double* u, double* y);
void combine_rows(const double* coeffs, const double* rows, std::size_t k, std::size_t d,
                  double* out);
void column_sums(const float* rows, std::size_t k, std::size_t d, double* out);
}  // namespace serial

namespace parallel {
double dot_ff(const float* a, const float* b, std::size_t n);
double dot_fd(const float* a, const double* b, std::size_t n);
double dot_dd(const double* a, const double* b, std::size_t n);
void axpy_f(double alpha, const float* x, double* y, std::size_t n);
void axpy_d(double alpha, const double* x, double* y, std::size_t n);
void matvec_rowmajor(const float* m, std::size_t rows, std::size_t cols,
                     const double* weights, double* out);
void row_dots(const double* rows, std::size_t k, std::size_t d, const double* u, double* y);
void combine_rows(const double* coeffs, const double* rows, std::size_t k, std::size_t d,
                  double* out);
void column_sums(const float* rows, std::size_t k, std::size_t d, double* out);
}  // namespace parallel

}  // namespace colan::kernels
