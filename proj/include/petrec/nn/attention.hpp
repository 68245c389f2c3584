#pragma once

#include <string>
#include <vector>

#include "petrec/nn/layers.hpp"

namespace petrec::nn {

/// Multi-head scaled dot-product self-attention over (N, tokens, features).
template <typename T>
class MultiHeadSelfAttention : public Layer<T> {
 public:
  MultiHeadSelfAttention(const std::string& name, Index features, Index heads, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect_params(std::vector<Param<T>*>& out) override;

  /// Attention weights of the last forward, one (tokens x tokens) matrix per (batch, head).
  const std::vector<RowMatrix<T>>& attention() const { return attn_; }

 private:
  Index features_, heads_, head_dim_;
  Linear<T> qkv_;
  Linear<T> proj_;
  Tensor<T> qkv_out_;
  std::vector<RowMatrix<T>> attn_;
};

/// Pre-normalization encoder layer:
///   h = x + MHSA(LN(x));  y = h + MLP(LN(h))
template <typename T>
class TransformerBlock : public Layer<T> {
 public:
  TransformerBlock(const std::string& name, Index features, Index heads, Index mlp_ratio, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) override;
  Tensor<T> backward(const Tensor<T>& grad_out) override;
  void collect_params(std::vector<Param<T>*>& out) override;

 private:
  LayerNorm<T> norm1_;
  MultiHeadSelfAttention<T> attn_;
  LayerNorm<T> norm2_;
  Sequential<T> mlp_;
};

}  // namespace petrec::nn
