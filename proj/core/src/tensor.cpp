// SPDX-License-Identifier: Apache-2.0
#include "sstune/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sstune/error.hpp"

namespace sstune {

namespace {

bool finite_range(const std::vector<float>& v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, float fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  require(data_.size() == rows_ * cols_, ErrorCode::kShapeMismatch,
          "matrix data length " + std::to_string(data_.size()) + " != " +
              std::to_string(rows_) + "x" + std::to_string(cols_));
}

bool DenseMatrix::all_finite() const noexcept { return finite_range(data_); }

Tensor3::Tensor3(std::size_t outer, std::size_t frames, std::size_t channels, float fill)
    : outer_(outer), frames_(frames), channels_(channels), data_(outer * frames * channels, fill) {}

Tensor3::Tensor3(std::size_t outer, std::size_t frames, std::size_t channels,
                 std::vector<float> data)
    : outer_(outer), frames_(frames), channels_(channels), data_(std::move(data)) {
  require(data_.size() == outer_ * frames_ * channels_, ErrorCode::kShapeMismatch,
          "tensor data length " + std::to_string(data_.size()) + " does not match shape");
}

DenseMatrix Tensor3::item(std::size_t i) const {
  const auto begin = data_.begin() + static_cast<std::ptrdiff_t>(i * frames_ * channels_);
  return DenseMatrix(frames_, channels_,
                     std::vector<float>(begin, begin + static_cast<std::ptrdiff_t>(frames_ * channels_)));
}

void Tensor3::set_item(std::size_t i, const DenseMatrix& slab) {
  require(slab.rows() == frames_ && slab.cols() == channels_, ErrorCode::kDimMismatch,
          "slab shape does not match tensor frame/channel dims");
  std::copy(slab.data().begin(), slab.data().end(),
            data_.begin() + static_cast<std::ptrdiff_t>(i * frames_ * channels_));
}

bool Tensor3::all_finite() const noexcept { return finite_range(data_); }

}  // namespace sstune
