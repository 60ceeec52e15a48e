// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sstune {

/// Row-major 32-bit float matrix. Storage only; arithmetic lives in the
/// numerics and predictor modules and accumulates in double.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, float fill = 0.0f);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  const std::vector<float>& data() const noexcept { return data_; }
  std::vector<float>& data() noexcept { return data_; }

  bool all_finite() const noexcept;

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

/// Row-major rank-3 float block, laid out as [outer][frame][channel].
/// Used for CK x T x d support features and V x T x d view features.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t outer, std::size_t frames, std::size_t channels, float fill = 0.0f);
  Tensor3(std::size_t outer, std::size_t frames, std::size_t channels, std::vector<float> data);

  std::size_t outer() const noexcept { return outer_; }
  std::size_t frames() const noexcept { return frames_; }
  std::size_t channels() const noexcept { return channels_; }

  std::span<float> frame(std::size_t i, std::size_t t) noexcept {
    return {data_.data() + (i * frames_ + t) * channels_, channels_};
  }
  std::span<const float> frame(std::size_t i, std::size_t t) const noexcept {
    return {data_.data() + (i * frames_ + t) * channels_, channels_};
  }

  /// Copy of the T x d slab for item i.
  DenseMatrix item(std::size_t i) const;
  void set_item(std::size_t i, const DenseMatrix& slab);

  const std::vector<float>& data() const noexcept { return data_; }
  std::vector<float>& data() noexcept { return data_; }

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor3&, const Tensor3&) = default;

 private:
  std::size_t outer_ = 0;
  std::size_t frames_ = 0;
  std::size_t channels_ = 0;
  std::vector<float> data_;
};

}  // namespace sstune
