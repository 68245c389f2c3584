#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include <Eigen/Core>

#include "petrec/nn/layer.hpp"
#include "petrec/random.hpp"

namespace petrec::test {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<T>(u(rng));
  return t;
}

/// ||a - b|| / max(||a||, ||b||), zero when both vanish.
inline double rel_err(const Eigen::ArrayXd& a, const Eigen::ArrayXd& b) {
  const double scale = std::max(a.matrix().norm(), b.matrix().norm());
  return scale == 0.0 ? 0.0 : (a - b).matrix().norm() / scale;
}

/// Central differences of `loss` with respect to every element of `x`.
inline Eigen::ArrayXd numeric_grad(Tensor<double>& x, const std::function<double()>& loss, double h = 1e-6) {
  Eigen::ArrayXd g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = loss();
    x[i] = keep - h;
    const double down = loss();
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Central difference of `loss` along direction v.
inline double directional_grad(Tensor<double>& x, const Tensor<double>& v, const std::function<double()>& loss,
                               double h = 1e-6) {
  const Tensor<double> keep = x;
  x.array() = keep.array() + h * v.array();
  const double up = loss();
  x.array() = keep.array() - h * v.array();
  const double down = loss();
  x = keep;
  return (up - down) / (2.0 * h);
}

/// Median of central differences at steps 1e-6, 1e-7 and 1e-8. A single
/// step that straddles a ReLU or near-absolute-value kink is outvoted.
inline double robust_directional_grad(Tensor<double>& x, const Tensor<double>& v, const std::function<double()>& loss) {
  double d[3] = {directional_grad(x, v, loss, 1e-6), directional_grad(x, v, loss, 1e-7),
                 directional_grad(x, v, loss, 1e-8)};
  std::sort(d, d + 3);
  return d[1];
}

/// Checks a layer's input and parameter gradients for L = sum(w * layer(x)).
/// Returns the largest normwise relative error.
inline double layer_gradient_error(nn::Layer<double>& layer, Tensor<double> x, Rng& rng, double h = 1e-6) {
  const Tensor<double> y0 = layer.forward(x);
  const Tensor<double> w = random_tensor(y0.shape(), rng);
  const auto loss = [&] { return (layer.forward(x).array() * w.array()).sum(); };

  layer.zero_grad();
  layer.forward(x);
  const Tensor<double> dx = layer.backward(w);
  double worst = rel_err(dx.array(), numeric_grad(x, loss, h));
  for (auto* p : layer.params()) {
    if (!p->trainable) continue;
    worst = std::max(worst, rel_err(p->grad.array(), numeric_grad(p->value, loss, h)));
  }
  return worst;
}

}  // namespace petrec::test
