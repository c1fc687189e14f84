#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dancemeld/errors.hpp"

namespace dancemeld {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense row-major 2-D array. Sequences are stored time-major: one row per
// timestep, one column per channel.
// Aligned storage keeps Eigen's vectorized reductions in a fixed order, so
// results do not depend on where the allocator placed a buffer.
template <typename T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Storage = AlignedVector<T>;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, const std::vector<T>& data)
      : Tensor(rows, cols, Storage(data.begin(), data.end())) {}
  Tensor(std::size_t rows, std::size_t cols, Storage data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    DM_THROW_IF(data_.size() != rows_ * cols_, ShapeMismatch,
                "tensor payload size " + std::to_string(data_.size()) + " != " +
                    std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  static Tensor scalar(T v) { return Tensor(1, 1, v); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  bool same_shape(const Tensor& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  Storage& storage() & noexcept { return data_; }
  const Storage& storage() const& noexcept { return data_; }
  Storage storage() && noexcept { return std::move(data_); }

  T& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) noexcept { return data_[i]; }
  T operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<T> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  Eigen::Map<RowMatrix<T>> matrix() noexcept {
    return Eigen::Map<RowMatrix<T>>(data_.data(), Eigen::Index(rows_), Eigen::Index(cols_));
  }
  Eigen::Map<const RowMatrix<T>> matrix() const noexcept {
    return Eigen::Map<const RowMatrix<T>>(data_.data(), Eigen::Index(rows_), Eigen::Index(cols_));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o) {
    DM_THROW_IF(!same_shape(o), ShapeMismatch, "tensor += shape mismatch");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Tensor slice_rows(std::size_t begin, std::size_t end) const {
    DM_THROW_IF(begin > end || end > rows_, IndexOutOfRange, "row slice out of range");
    return Tensor(end - begin, cols_,
                  Storage(data_.begin() + std::ptrdiff_t(begin * cols_),
                                 data_.begin() + std::ptrdiff_t(end * cols_)));
  }

  Tensor slice_cols(std::size_t begin, std::size_t end) const {
    DM_THROW_IF(begin > end || end > cols_, IndexOutOfRange, "column slice out of range");
    Tensor out(rows_, end - begin);
    for (std::size_t r = 0; r < rows_; ++r)
      std::copy_n(data_.data() + r * cols_ + begin, end - begin, out.data() + r * out.cols_);
    return out;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(rows_, cols_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Storage data_;
};

template <typename T>
Tensor<T> concat_rows(const Tensor<T>& a, const Tensor<T>& b) {
  DM_THROW_IF(a.cols() != b.cols(), ShapeMismatch, "concat_rows column mismatch");
  typename Tensor<T>::Storage data(a.storage());
  data.insert(data.end(), b.storage().begin(), b.storage().end());
  return Tensor<T>(a.rows() + b.rows(), a.cols(), std::move(data));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  DM_THROW_IF(!a.same_shape(b), ShapeMismatch, "max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace dancemeld
