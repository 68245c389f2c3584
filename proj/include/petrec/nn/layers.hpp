#pragma once

#include <string>
#include <vector>

#include "petrec/nn/layer.hpp"

namespace petrec::nn {

struct ConvOptions {
  Index in_channels = 1;
  Index out_channels = 1;
  Index kernel = 3;
  Index stride = 1;
  Index padding = 1;
  bool bias = true;
  Init init = Init::PyTorchDefault;
};

/// 2D convolution over (N, C, H, W) via im2col + GEMM.
template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(const std::string& name, ConvOptions opt, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect_params(std::vector<Param<T>*>& out) override;

  Index output_extent(Index in) const { return (in + 2 * opt_.padding - opt_.kernel) / opt_.stride + 1; }
  const ConvOptions& options() const { return opt_; }
  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  void im2col(const T* image, Index h, Index w, RowMatrix<T>& cols) const;
  void col2im(const RowMatrix<T>& cols, Index h, Index w, T* image) const;

  ConvOptions opt_;
  Param<T> weight_;  // (out, in, k, k)
  Param<T> bias_;    // (out)
  Shape in_shape_;
  std::vector<RowMatrix<T>> cols_;
};

/// Affine map over the last dimension.
template <typename T>
class Linear : public Layer<T> {
 public:
  Linear(const std::string& name, Index in_features, Index out_features, Rng& rng, Init init = Init::PyTorchDefault);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect_params(std::vector<Param<T>*>& out) override;

  Param<T>& weight() { return weight_; }
  Param<T>& bias() { return bias_; }

 private:
  Index in_, out_;
  Param<T> weight_;  // (out, in)
  Param<T> bias_;
  Tensor<T> input_;
};

/// Normalization over the last dimension with learned scale and shift.
template <typename T>
class LayerNorm : public Layer<T> {
 public:
  LayerNorm(const std::string& name, Index features, double eps = 1e-5);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect_params(std::vector<Param<T>*>& out) override;

 private:
  Index features_;
  double eps_;
  Param<T> gamma_, beta_;
  Tensor<T> normalized_;
  Eigen::Array<T, Eigen::Dynamic, 1> inv_std_;
};

enum class Activation { ReLU, LeakyReLU, GELU, Softplus };

template <typename T>
class Elementwise : public Layer<T> {
 public:
  explicit Elementwise(Activation kind, double slope = 0.2) : kind_(kind), slope_(slope) {}

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  Activation kind_;
  double slope_;
  Tensor<T> input_;
};

/// 2x2 max pooling, stride 2.
template <typename T>
class MaxPool2 : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  Shape in_shape_;
  std::vector<Index> argmax_;
};

/// Nearest-neighbour 2x upsampling.
template <typename T>
class Upsample2 : public Layer<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;

 private:
  Shape in_shape_;
};

/// conv3x3 -> ReLU -> conv3x3, plus identity skip.
template <typename T>
class ResidualBlock : public Layer<T> {
 public:
  ResidualBlock(const std::string& name, Index channels, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect_params(std::vector<Param<T>*>& out) override { body_.collect_params(out); }

 private:
  Sequential<T> body_;
};

}  // namespace petrec::nn
