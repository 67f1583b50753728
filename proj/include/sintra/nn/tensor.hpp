#pragma once

#include <sintra/error.hpp>

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace sintra::nn {

template <class T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

/// Dense row-major matrix. Every tensor in the network is rank 2; vectors are 1 x n.
///
/// Storage is aligned to Eigen's packet size: vectorized kernels peel differently for
/// unaligned pointers, which would make float results depend on heap addresses.
template <class T>
class Tensor {
public:
  using Storage = std::vector<T, Eigen::aligned_allocator<T>>;

  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, T fill = T(0)) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(std::size_t rows, std::size_t cols, const std::vector<T>& values)
      : rows_(rows), cols_(cols), data_(values.begin(), values.end()) {
    if (data_.size() != rows * cols) throw UsageError("tensor value count does not match shape");
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::array<std::size_t, 2> shape() const { return {rows_, cols_}; }
  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  Storage& values() { return data_; }
  const Storage& values() const { return data_; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  MatMap<T> mat() { return MatMap<T>(data_.data(), rows_, cols_); }
  ConstMatMap<T> mat() const { return ConstMatMap<T>(data_.data(), rows_, cols_); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void zero() { fill(T(0)); }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_string() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Storage data_;
};

template <class T>
Tensor<T> from_matrix(const RowMatrix<T>& m) {
  Tensor<T> out(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  out.mat() = m;
  return out;
}

}  // namespace sintra::nn
