#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "petrec/nn/tensor.hpp"
#include "petrec/random.hpp"

namespace petrec::nn {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Param() = default;
  Param(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}
};

enum class Init { PyTorchDefault, HeNormal, Zero };

/// Fills a weight of the given fan-in. Biases use the same bound as the
/// PyTorch default (uniform in +-1/sqrt(fan_in)), or zero.
template <typename T>
void initialize(Tensor<T>& weight, Index fan_in, Init init, Rng& rng) {
  switch (init) {
    case Init::Zero:
      weight.set_zero();
      break;
    case Init::HeNormal: {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
      for (Index i = 0; i < weight.size(); ++i) weight[i] = static_cast<T>(dist(rng));
      break;
    }
    case Init::PyTorchDefault: {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Index i = 0; i < weight.size(); ++i) weight[i] = static_cast<T>(dist(rng));
      break;
    }
  }
}

/// Anything owning parameters.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual void collect_params(std::vector<Param<T>*>& out) = 0;

  std::vector<Param<T>*> params() {
    std::vector<Param<T>*> out;
    collect_params(out);
    return out;
  }

  void zero_grad() {
    for (auto* p : params()) p->grad.set_zero();
  }

  void set_trainable(bool trainable) {
    for (auto* p : params()) p->trainable = trainable;
  }
};

/// A differentiable stage. forward() caches whatever backward() needs, so a
/// backward call always refers to the most recent forward.
template <typename T>
class Layer : public Module<T> {
 public:
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  /// Returns dLoss/dInput and accumulates parameter gradients.
  virtual Tensor<T> backward(const Tensor<T>& grad_out) = 0;
  void collect_params(std::vector<Param<T>*>&) override {}
};

template <typename T>
class Sequential : public Layer<T> {
 public:
  template <typename L, typename... Args>
  L& add(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    Tensor<T> y = x;
    for (auto& l : layers_) y = l->forward(y);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& grad_out) override {
    Tensor<T> g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void collect_params(std::vector<Param<T>*>& out) override {
    for (auto& l : layers_) l->collect_params(out);
  }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& operator[](std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// Total trainable scalar parameter count.
template <typename T>
Index count_parameters(Module<T>& m) {
  Index n = 0;
  for (auto* p : m.params())
    if (p->trainable) n += p->value.size();
  return n;
}

}  // namespace petrec::nn
