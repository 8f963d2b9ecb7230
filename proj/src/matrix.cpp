#include "colan/matrix.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "colan/errors.hpp"

namespace colan {

namespace {

void check_finite(std::span<const float> data) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw NonFiniteInput("matrix entry " + std::to_string(i) + " is not finite");
    }
  }
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw DimensionMismatch("buffer of " + std::to_string(data_.size()) +
                            " entries for a " + std::to_string(rows_) + "x" +
                            std::to_string(cols_) + " matrix");
  }
  check_finite(data_);
}

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<float> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionMismatch("ragged row in matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return DenseMatrix(r, c, std::move(data));
}

std::vector<float> DenseMatrix::column(std::size_t c) const {
  std::vector<float> out(rows_);
  for (std::size_t r = 0; r < rows_; ++r) out[r] = data_[r * cols_ + c];
  return out;
}

}  // namespace colan
