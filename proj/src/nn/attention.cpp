#include "petrec/nn/attention.hpp"

#include <cmath>

namespace petrec::nn {

template <typename T>
MultiHeadSelfAttention<T>::MultiHeadSelfAttention(const std::string& name, Index features, Index heads, Rng& rng)
    : features_(features),
      heads_(heads),
      head_dim_(heads > 0 ? features / heads : 0),
      qkv_(name + ".qkv", features, 3 * features, rng),
      proj_(name + ".proj", features, features, rng) {
  if (heads < 1 || features % heads != 0)
    throw std::invalid_argument(name + ": features (" + std::to_string(features) + ") not divisible by heads (" +
                                std::to_string(heads) + ")");
}

template <typename T>
Tensor<T> MultiHeadSelfAttention<T>::forward(const Tensor<T>& x) {
  require_rank(x, 3, "MultiHeadSelfAttention");
  const Index batch = x.dim(0), tokens = x.dim(1);
  qkv_out_ = qkv_.forward(x);
  attn_.assign(static_cast<std::size_t>(batch * heads_), RowMatrix<T>());

  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim_));
  Tensor<T> merged({batch, tokens, features_});
  for (Index b = 0; b < batch; ++b) {
    const auto qkv = qkv_out_.matrix(tokens, 3 * features_, b * tokens * 3 * features_);
    auto out = merged.matrix(tokens, features_, b * tokens * features_);
    for (Index h = 0; h < heads_; ++h) {
      const auto q = qkv.middleCols(h * head_dim_, head_dim_);
      const auto k = qkv.middleCols(features_ + h * head_dim_, head_dim_);
      const auto v = qkv.middleCols(2 * features_ + h * head_dim_, head_dim_);
      auto& a = attn_[static_cast<std::size_t>(b * heads_ + h)];
      a.noalias() = (q * k.transpose()) * scale;
      for (Index r = 0; r < tokens; ++r) {
        auto row = a.row(r).array();
        row = (row - row.maxCoeff()).exp();
        row /= row.sum();
      }
      out.middleCols(h * head_dim_, head_dim_).noalias() = a * v;
    }
  }
  return proj_.forward(merged);
}

template <typename T>
Tensor<T> MultiHeadSelfAttention<T>::backward(const Tensor<T>& grad_out) {
  const Index batch = qkv_out_.dim(0), tokens = qkv_out_.dim(1);
  const Tensor<T> d_merged = proj_.backward(grad_out);
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim_));

  Tensor<T> d_qkv(qkv_out_.shape());
  RowMatrix<T> d_attn, d_scores;
  for (Index b = 0; b < batch; ++b) {
    const auto qkv = qkv_out_.matrix(tokens, 3 * features_, b * tokens * 3 * features_);
    const auto dm = d_merged.matrix(tokens, features_, b * tokens * features_);
    auto dq = d_qkv.matrix(tokens, 3 * features_, b * tokens * 3 * features_);
    for (Index h = 0; h < heads_; ++h) {
      const auto q = qkv.middleCols(h * head_dim_, head_dim_);
      const auto k = qkv.middleCols(features_ + h * head_dim_, head_dim_);
      const auto v = qkv.middleCols(2 * features_ + h * head_dim_, head_dim_);
      const auto& a = attn_[static_cast<std::size_t>(b * heads_ + h)];
      const auto d_out = dm.middleCols(h * head_dim_, head_dim_);

      d_attn.noalias() = d_out * v.transpose();
      dq.middleCols(2 * features_ + h * head_dim_, head_dim_).noalias() = a.transpose() * d_out;
      // softmax Jacobian, row by row
      d_scores = a.array() * (d_attn.array().colwise() - (d_attn.array() * a.array()).rowwise().sum());
      d_scores *= scale;
      dq.middleCols(h * head_dim_, head_dim_).noalias() = d_scores * k;
      dq.middleCols(features_ + h * head_dim_, head_dim_).noalias() = d_scores.transpose() * q;
    }
  }
  return qkv_.backward(d_qkv);
}

template <typename T>
void MultiHeadSelfAttention<T>::collect_params(std::vector<Param<T>*>& out) {
  qkv_.collect_params(out);
  proj_.collect_params(out);
}

template <typename T>
TransformerBlock<T>::TransformerBlock(const std::string& name, Index features, Index heads, Index mlp_ratio,
                                      Rng& rng)
    : norm1_(name + ".norm1", features),
      attn_(name + ".attn", features, heads, rng),
      norm2_(name + ".norm2", features) {
  mlp_.template add<Linear<T>>(name + ".mlp.fc1", features, mlp_ratio * features, rng);
  mlp_.template add<Elementwise<T>>(Activation::GELU);
  mlp_.template add<Linear<T>>(name + ".mlp.fc2", mlp_ratio * features, features, rng);
}

template <typename T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& x) {
  Tensor<T> h = attn_.forward(norm1_.forward(x));
  h.array() += x.array();
  Tensor<T> y = mlp_.forward(norm2_.forward(h));
  y.array() += h.array();
  return y;
}

template <typename T>
Tensor<T> TransformerBlock<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> dh = norm2_.backward(mlp_.backward(grad_out));
  dh.array() += grad_out.array();
  Tensor<T> dx = norm1_.backward(attn_.backward(dh));
  dx.array() += dh.array();
  return dx;
}

template <typename T>
void TransformerBlock<T>::collect_params(std::vector<Param<T>*>& out) {
  norm1_.collect_params(out);
  attn_.collect_params(out);
  norm2_.collect_params(out);
  mlp_.collect_params(out);
}

template class MultiHeadSelfAttention<float>;
template class MultiHeadSelfAttention<double>;
template class TransformerBlock<float>;
template class TransformerBlock<double>;

}  // namespace petrec::nn
