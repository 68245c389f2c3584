#pragma once

#include <cmath>
#include <vector>

#include "petrec/nn/layer.hpp"

namespace petrec::nn {

struct AdamOptions {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer over the trainable parameters of a module.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Param<T>*> params, AdamOptions opt) : opt_(opt) {
    for (auto* p : params) {
      if (!p->trainable) continue;
      params_.push_back(p);
      m_.push_back(Tensor<T>::zeros_like(p->value));
      v_.push_back(Tensor<T>::zeros_like(p->value));
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->grad.set_zero();
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    const T step = static_cast<T>(opt_.lr * std::sqrt(c2) / c1);
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T eps = static_cast<T>(opt_.eps * std::sqrt(c2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& g = params_[i]->grad.array();
      auto& m = m_[i].array();
      auto& v = v_[i].array();
      m = b1 * m + (T(1) - b1) * g;
      v = b2 * v + (T(1) - b2) * g.square();
      params_[i]->value.array() -= step * m / (v.sqrt() + eps);
    }
  }

  long steps_taken() const { return t_; }
  const AdamOptions& options() const { return opt_; }

 private:
  AdamOptions opt_;
  std::vector<Param<T>*> params_;
  std::vector<Tensor<T>> m_, v_;
  long t_ = 0;
};

}  // namespace petrec::nn
