#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cassert>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace petrec {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using RowMatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstRowMatrixMap = Eigen::Map<const RowMatrix<T>>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ')';
  return os.str();
}

/// Dense row-major tensor backed by an Eigen array. Image batches use the
/// (N, C, H, W) layout and token batches (N, tokens, features).
template <typename T>
class Tensor {
 public:
  using Scalar = T;
  using Storage = Eigen::Array<T, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Storage::Zero(numel(shape_))) {}
  Tensor(Shape shape, T fill) : shape_(std::move(shape)), data_(Storage::Constant(numel(shape_), fill)) {}
  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_))
      throw ShapeError("tensor storage size " + std::to_string(data_.size()) + " does not match shape " +
                       to_string(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<std::size_t>(i)); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  T& operator[](Index i) { return data_[i]; }
  const T& operator[](Index i) const { return data_[i]; }

  T& operator()(Index n, Index c, Index h, Index w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& operator()(Index n, Index c, Index h, Index w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  /// Row-major (rows x cols) view starting at a flat offset.
  RowMatrixMap<T> matrix(Index rows, Index cols, Index offset = 0) {
    assert(offset + rows * cols <= size());
    return RowMatrixMap<T>(data() + offset, rows, cols);
  }
  ConstRowMatrixMap<T> matrix(Index rows, Index cols, Index offset = 0) const {
    assert(offset + rows * cols <= size());
    return ConstRowMatrixMap<T>(data() + offset, rows, cols);
  }

  Tensor reshaped(Shape shape) const& { return Tensor(std::move(shape), data_); }
  Tensor reshaped(Shape shape) && { return Tensor(std::move(shape), std::move(data_)); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, data_.template cast<U>());
  }

  void set_zero() { data_.setZero(); }

 private:
  Shape shape_;
  Storage data_;
};

template <typename T>
void require_shape(const Tensor<T>& t, const Shape& expected, const char* what) {
  if (t.shape() != expected)
    throw ShapeError(std::string(what) + ": expected shape " + to_string(expected) + ", got " + to_string(t.shape()));
}

template <typename T>
void require_rank(const Tensor<T>& t, Index rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
}

/// Concatenate two (N, C, H, W) tensors along channels.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require_rank(a, 4, "concat_channels");
  require_rank(b, 4, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: mismatched " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const Index n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  Tensor<T> out({n, ca + cb, a.dim(2), a.dim(3)});
  for (Index i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(b.data() + i * cb * hw, cb * hw, out.data() + (i * (ca + cb) + ca) * hw);
  }
  return out;
}

/// Inverse of concat_channels: channels [begin, begin + count).
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, Index begin, Index count) {
  require_rank(x, 4, "slice_channels");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (begin < 0 || begin + count > c) throw ShapeError("slice_channels: range out of bounds");
  Tensor<T> out({n, count, x.dim(2), x.dim(3)});
  for (Index i = 0; i < n; ++i)
    std::copy_n(x.data() + (i * c + begin) * hw, count * hw, out.data() + i * count * hw);
  return out;
}

}  // namespace petrec
