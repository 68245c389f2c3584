#include "petrec/nn/layers.hpp"

#include <cmath>
#include <limits>

namespace petrec::nn {

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, ConvOptions opt, Rng& rng)
    : opt_(opt),
      weight_(name + ".weight", {opt.out_channels, opt.in_channels, opt.kernel, opt.kernel}),
      bias_(name + ".bias", {opt.bias ? opt.out_channels : 0}) {
  if (opt.kernel < 1 || opt.stride < 1 || opt.padding < 0 || opt.in_channels < 1 || opt.out_channels < 1)
    throw std::invalid_argument(name + ": invalid convolution options");
  const Index fan_in = opt.in_channels * opt.kernel * opt.kernel;
  initialize(weight_.value, fan_in, opt.init, rng);
  if (opt.bias) initialize(bias_.value, fan_in, opt.init == Init::Zero ? Init::Zero : Init::PyTorchDefault, rng);
}

template <typename T>
void Conv2d<T>::im2col(const T* image, Index h, Index w, RowMatrix<T>& cols) const {
  const Index k = opt_.kernel, ho = output_extent(h), wo = output_extent(w);
  cols.resize(opt_.in_channels * k * k, ho * wo);
  for (Index c = 0; c < opt_.in_channels; ++c) {
    const T* src = image + c * h * w;
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        T* dst = cols.data() + ((c * k + ky) * k + kx) * ho * wo;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * opt_.stride - opt_.padding + ky;
          T* row = dst + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill_n(row, wo, T(0));
            continue;
          }
          const T* src_row = src + iy * w;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * opt_.stride - opt_.padding + kx;
            row[ox] = (ix >= 0 && ix < w) ? src_row[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void Conv2d<T>::col2im(const RowMatrix<T>& cols, Index h, Index w, T* image) const {
  const Index k = opt_.kernel, ho = output_extent(h), wo = output_extent(w);
  for (Index c = 0; c < opt_.in_channels; ++c) {
    T* dst = image + c * h * w;
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const T* src = cols.data() + ((c * k + ky) * k + kx) * ho * wo;
        for (Index oy = 0; oy < ho; ++oy) {
          const Index iy = oy * opt_.stride - opt_.padding + ky;
          if (iy < 0 || iy >= h) continue;
          const T* row = src + oy * wo;
          T* dst_row = dst + iy * w;
          for (Index ox = 0; ox < wo; ++ox) {
            const Index ix = ox * opt_.stride - opt_.padding + kx;
            if (ix >= 0 && ix < w) dst_row[ix] += row[ox];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x) {
  require_rank(x, 4, weight_.name.c_str());
  if (x.dim(1) != opt_.in_channels)
    throw ShapeError(weight_.name + ": expected " + std::to_string(opt_.in_channels) + " input channels, got " +
                     to_string(x.shape()));
  const Index n = x.dim(0), h = x.dim(2), w = x.dim(3);
  const Index ho = output_extent(h), wo = output_extent(w);
  if (ho < 1 || wo < 1) throw ShapeError(weight_.name + ": input " + to_string(x.shape()) + " too small");
  in_shape_ = x.shape();
  cols_.resize(static_cast<std::size_t>(n));

  Tensor<T> y({n, opt_.out_channels, ho, wo});
  const auto wmat = weight_.value.matrix(opt_.out_channels, opt_.in_channels * opt_.kernel * opt_.kernel);
  const Index in_stride = opt_.in_channels * h * w, out_stride = opt_.out_channels * ho * wo;
  for (Index i = 0; i < n; ++i) {
    auto& cols = cols_[static_cast<std::size_t>(i)];
    im2col(x.data() + i * in_stride, h, w, cols);
    auto ymat = y.matrix(opt_.out_channels, ho * wo, i * out_stride);
    ymat.noalias() = wmat * cols;
    if (opt_.bias) ymat.colwise() += bias_.value.array().matrix();
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& grad_out) {
  const Index n = in_shape_[0], h = in_shape_[2], w = in_shape_[3];
  const Index ho = output_extent(h), wo = output_extent(w);
  require_shape(grad_out, {n, opt_.out_channels, ho, wo}, weight_.name.c_str());

  Tensor<T> dx(in_shape_);
  const Index ckk = opt_.in_channels * opt_.kernel * opt_.kernel;
  const auto wmat = weight_.value.matrix(opt_.out_channels, ckk);
  auto dw = weight_.grad.matrix(opt_.out_channels, ckk);
  RowMatrix<T> dcols;
  const Index in_stride = opt_.in_channels * h * w, out_stride = opt_.out_channels * ho * wo;
  for (Index i = 0; i < n; ++i) {
    const auto g = grad_out.matrix(opt_.out_channels, ho * wo, i * out_stride);
    const auto& cols = cols_[static_cast<std::size_t>(i)];
    if (weight_.trainable) {
      dw.noalias() += g * cols.transpose();
      if (opt_.bias) bias_.grad.array() += g.rowwise().sum().array();
    }
    dcols.noalias() = wmat.transpose() * g;
    col2im(dcols, h, w, dx.data() + i * in_stride);
  }
  return dx;
}

template <typename T>
void Conv2d<T>::collect_params(std::vector<Param<T>*>& out) {
  out.push_back(&weight_);
  if (opt_.bias) out.push_back(&bias_);
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(const std::string& name, Index in_features, Index out_features, Rng& rng, Init init)
    : in_(in_features),
      out_(out_features),
      weight_(name + ".weight", {out_features, in_features}),
      bias_(name + ".bias", {out_features}) {
  initialize(weight_.value, in_, init, rng);
  initialize(bias_.value, in_, init == Init::Zero ? Init::Zero : Init::PyTorchDefault, rng);
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x) {
  if (x.rank() < 1 || x.shape().back() != in_)
    throw ShapeError(weight_.name + ": expected trailing dimension " + std::to_string(in_) + ", got " +
                     to_string(x.shape()));
  input_ = x;
  const Index m = x.size() / in_;
  Shape out_shape = x.shape();
  out_shape.back() = out_;
  Tensor<T> y(out_shape);
  auto ymat = y.matrix(m, out_);
  ymat.noalias() = x.matrix(m, in_) * weight_.value.matrix(out_, in_).transpose();
  ymat.rowwise() += bias_.value.array().matrix().transpose();
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out) {
  const Index m = input_.size() / in_;
  if (grad_out.size() != m * out_) throw ShapeError(weight_.name + ": gradient shape mismatch");
  const auto g = grad_out.matrix(m, out_);
  if (weight_.trainable) {
    weight_.grad.matrix(out_, in_).noalias() += g.transpose() * input_.matrix(m, in_);
    bias_.grad.array() += g.colwise().sum().transpose().array();
  }
  Tensor<T> dx(input_.shape());
  dx.matrix(m, in_).noalias() = g * weight_.value.matrix(out_, in_);
  return dx;
}

template <typename T>
void Linear<T>::collect_params(std::vector<Param<T>*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ---------------------------------------------------------------- LayerNorm

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, Index features, double eps)
    : features_(features), eps_(eps), gamma_(name + ".gamma", {features}), beta_(name + ".beta", {features}) {
  gamma_.value.array().setOnes();
}

template <typename T>
Tensor<T> LayerNorm<T>::forward(const Tensor<T>& x) {
  if (x.rank() < 1 || x.shape().back() != features_) throw ShapeError(gamma_.name + ": feature mismatch");
  const Index m = x.size() / features_;
  normalized_ = Tensor<T>(x.shape());
  inv_std_.resize(m);
  Tensor<T> y(x.shape());
  const auto xm = x.matrix(m, features_);
  auto nm = normalized_.matrix(m, features_);
  auto ym = y.matrix(m, features_);
  for (Index r = 0; r < m; ++r) {
    const T mean = xm.row(r).mean();
    const auto centered = (xm.row(r).array() - mean).eval();
    const T var = centered.square().mean();
    inv_std_[r] = T(1) / std::sqrt(var + static_cast<T>(eps_));
    nm.row(r) = (centered * inv_std_[r]).matrix();
    ym.row(r) = (nm.row(r).array() * gamma_.value.array().transpose() + beta_.value.array().transpose()).matrix();
  }
  return y;
}

template <typename T>
Tensor<T> LayerNorm<T>::backward(const Tensor<T>& grad_out) {
  const Index m = normalized_.size() / features_;
  const auto g = grad_out.matrix(m, features_);
  const auto nm = normalized_.matrix(m, features_);
  if (gamma_.trainable) {
    gamma_.grad.array() += (g.array() * nm.array()).colwise().sum().transpose();
    beta_.grad.array() += g.array().colwise().sum().transpose();
  }
  Tensor<T> dx(normalized_.shape());
  auto dxm = dx.matrix(m, features_);
  for (Index r = 0; r < m; ++r) {
    const auto dn = (g.row(r).array() * gamma_.value.array().transpose()).eval();
    const T mean_dn = dn.mean();
    const T mean_dn_n = (dn * nm.row(r).array()).mean();
    dxm.row(r) = (inv_std_[r] * (dn - mean_dn - nm.row(r).array() * mean_dn_n)).matrix();
  }
  return dx;
}

template <typename T>
void LayerNorm<T>::collect_params(std::vector<Param<T>*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

// ---------------------------------------------------------------- activations

template <typename T>
Tensor<T> Elementwise<T>::forward(const Tensor<T>& x) {
  input_ = x;
  Tensor<T> y(x.shape());
  const auto& a = x.array();
  auto& out = y.array();
  switch (kind_) {
    case Activation::ReLU:
      out = a.max(T(0));
      break;
    case Activation::LeakyReLU:
      out = (a > T(0)).select(a, a * static_cast<T>(slope_));
      break;
    case Activation::GELU:
      for (Index i = 0; i < a.size(); ++i)
        out[i] = T(0.5) * a[i] * (T(1) + std::erf(a[i] / std::sqrt(T(2))));
      break;
    case Activation::Softplus:
      for (Index i = 0; i < a.size(); ++i) out[i] = a[i] > T(20) ? a[i] : std::log1p(std::exp(a[i]));
      break;
  }
  return y;
}

template <typename T>
Tensor<T> Elementwise<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> dx(input_.shape());
  const auto& a = input_.array();
  const auto& g = grad_out.array();
  auto& out = dx.array();
  switch (kind_) {
    case Activation::ReLU:
      out = (a > T(0)).select(g, T(0));
      break;
    case Activation::LeakyReLU:
      out = (a > T(0)).select(g, g * static_cast<T>(slope_));
      break;
    case Activation::GELU: {
      const T inv_sqrt2pi = T(0.3989422804014327);
      for (Index i = 0; i < a.size(); ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(a[i] / std::sqrt(T(2))));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * a[i] * a[i]);
        out[i] = g[i] * (cdf + a[i] * pdf);
      }
      break;
    }
    case Activation::Softplus:
      for (Index i = 0; i < a.size(); ++i) out[i] = g[i] / (T(1) + std::exp(-a[i]));
      break;
  }
  return dx;
}

// ---------------------------------------------------------------- pooling

template <typename T>
Tensor<T> MaxPool2<T>::forward(const Tensor<T>& x) {
  require_rank(x, 4, "MaxPool2");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index ho = h / 2, wo = w / 2;
  if (ho < 1 || wo < 1) throw ShapeError("MaxPool2: input " + to_string(x.shape()) + " too small");
  in_shape_ = x.shape();
  Tensor<T> y({n, c, ho, wo});
  argmax_.assign(static_cast<std::size_t>(y.size()), 0);
  Index o = 0;
  for (Index plane = 0; plane < n * c; ++plane) {
    const T* src = x.data() + plane * h * w;
    for (Index oy = 0; oy < ho; ++oy) {
      for (Index ox = 0; ox < wo; ++ox, ++o) {
        Index best = (2 * oy) * w + 2 * ox;
        for (Index dy = 0; dy < 2; ++dy)
          for (Index dx = 0; dx < 2; ++dx) {
            const Index idx = (2 * oy + dy) * w + 2 * ox + dx;
            if (src[idx] > src[best]) best = idx;
          }
        y[o] = src[best];
        argmax_[static_cast<std::size_t>(o)] = plane * h * w + best;
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool2<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> dx(in_shape_);
  for (Index o = 0; o < grad_out.size(); ++o) dx[argmax_[static_cast<std::size_t>(o)]] += grad_out[o];
  return dx;
}

template <typename T>
Tensor<T> Upsample2<T>::forward(const Tensor<T>& x) {
  require_rank(x, 4, "Upsample2");
  in_shape_ = x.shape();
  const Index planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({x.dim(0), x.dim(1), 2 * h, 2 * w});
  for (Index p = 0; p < planes; ++p)
    for (Index yy = 0; yy < 2 * h; ++yy)
      for (Index xx = 0; xx < 2 * w; ++xx) y[(p * 2 * h + yy) * 2 * w + xx] = x[(p * h + yy / 2) * w + xx / 2];
  return y;
}

template <typename T>
Tensor<T> Upsample2<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> dx(in_shape_);
  const Index planes = in_shape_[0] * in_shape_[1], h = in_shape_[2], w = in_shape_[3];
  for (Index p = 0; p < planes; ++p)
    for (Index yy = 0; yy < 2 * h; ++yy)
      for (Index xx = 0; xx < 2 * w; ++xx) dx[(p * h + yy / 2) * w + xx / 2] += grad_out[(p * 2 * h + yy) * 2 * w + xx];
  return dx;
}

// ---------------------------------------------------------------- ResidualBlock

template <typename T>
ResidualBlock<T>::ResidualBlock(const std::string& name, Index channels, Rng& rng) {
  body_.template add<Conv2d<T>>(name + ".conv1", ConvOptions{channels, channels, 3, 1, 1}, rng);
  body_.template add<Elementwise<T>>(Activation::ReLU);
  body_.template add<Conv2d<T>>(name + ".conv2", ConvOptions{channels, channels, 3, 1, 1}, rng);
}

template <typename T>
Tensor<T> ResidualBlock<T>::forward(const Tensor<T>& x) {
  Tensor<T> y = body_.forward(x);
  y.array() += x.array();
  return y;
}

template <typename T>
Tensor<T> ResidualBlock<T>::backward(const Tensor<T>& grad_out) {
  Tensor<T> dx = body_.backward(grad_out);
  dx.array() += grad_out.array();
  return dx;
}

template class Conv2d<float>;
template class Conv2d<double>;
template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class Elementwise<float>;
template class Elementwise<double>;
template class MaxPool2<float>;
template class MaxPool2<double>;
template class Upsample2<float>;
template class Upsample2<double>;
template class ResidualBlock<float>;
template class ResidualBlock<double>;

}  // namespace petrec::nn
