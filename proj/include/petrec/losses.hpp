#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

namespace petrec {

inline constexpr double kCharbonnierEps = 1e-8;

/// Scalar objectives recorded for one training step.
struct LossBundle {
  double l_gan_d = 0.0;
  double l_gan_g = 0.0;
  double l_charbonnier = 0.0;
  double l_perceptual = 0.0;
  double l_total_g = 0.0;
  long step = 0;
};

namespace detail {
template <typename DerivedA, typename DerivedB>
void require_same_size(const Eigen::ArrayBase<DerivedA>& a, const Eigen::ArrayBase<DerivedB>& b, const char* what) {
  if (a.size() != b.size() || a.size() == 0)
    throw std::invalid_argument(std::string(what) + ": operands must be non-empty and of equal size (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
}
}  // namespace detail

/// mean_i sqrt((a_i - b_i)^2 + eps^2), accumulated in double.
/// Evaluated as eps + mean(sqrt(d^2 + eps^2) - eps) so identical inputs give eps exactly.
template <typename DerivedA, typename DerivedB>
double charbonnier_loss(const Eigen::ArrayBase<DerivedA>& a, const Eigen::ArrayBase<DerivedB>& b,
                        double eps = kCharbonnierEps) {
  detail::require_same_size(a, b, "charbonnier_loss");
  if (!(eps > 0.0)) throw std::invalid_argument("charbonnier_loss: eps must be > 0");
  const double eps2 = eps * eps;
  const auto d = (a.derived().template cast<double>() - b.derived().template cast<double>()).eval();
  return eps + ((d.square() + eps2).sqrt() - eps).mean();
}

/// d charbonnier_loss / d a.
template <typename DerivedA, typename DerivedB>
Eigen::Array<typename DerivedA::Scalar, Eigen::Dynamic, 1> charbonnier_gradient(const Eigen::ArrayBase<DerivedA>& a,
                                                                                const Eigen::ArrayBase<DerivedB>& b,
                                                                                double eps = kCharbonnierEps) {
  using T = typename DerivedA::Scalar;
  detail::require_same_size(a, b, "charbonnier_gradient");
  const auto d = (a.derived() - b.derived().template cast<T>()).eval();
  const T e2 = static_cast<T>(eps * eps);
  const T n = static_cast<T>(a.size());
  return (d / ((d.square() + e2).sqrt() * n)).reshaped();
}

struct AdversarialLosses {
  double l_d = 0.0;      // mean((real - 1)^2) + mean(fake^2)
  double l_g_adv = 0.0;  // mean((fake - 1)^2)
};

/// Least-squares GAN objectives over PatchGAN score maps.
template <typename DerivedR, typename DerivedF>
AdversarialLosses adversarial_losses(const Eigen::ArrayBase<DerivedR>& score_real,
                                     const Eigen::ArrayBase<DerivedF>& score_fake) {
  detail::require_same_size(score_real, score_fake, "adversarial_losses");
  const auto real = score_real.derived().template cast<double>();
  const auto fake = score_fake.derived().template cast<double>();
  return {(real - 1.0).square().mean() + fake.square().mean(), (fake - 1.0).square().mean()};
}

/// Gradients of l_d with respect to the real and fake score maps.
template <typename Derived>
Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, 1> lsgan_real_gradient(const Eigen::ArrayBase<Derived>& real) {
  using T = typename Derived::Scalar;
  return (T(2) * (real.derived() - T(1)) / static_cast<T>(real.size())).reshaped();
}
template <typename Derived>
Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, 1> lsgan_fake_gradient(const Eigen::ArrayBase<Derived>& fake) {
  using T = typename Derived::Scalar;
  return (T(2) * fake.derived() / static_cast<T>(fake.size())).reshaped();
}
/// Gradient of l_g_adv with respect to the fake score map.
template <typename Derived>
Eigen::Array<typename Derived::Scalar, Eigen::Dynamic, 1> lsgan_generator_gradient(
    const Eigen::ArrayBase<Derived>& fake) {
  using T = typename Derived::Scalar;
  return (T(2) * (fake.derived() - T(1)) / static_cast<T>(fake.size())).reshaped();
}

inline double total_generator_loss(double l_g_adv, double l_charb, double l_perc, double alpha = 100.0,
                                   double beta = 100.0) {
  if (alpha < 0.0 || beta < 0.0) throw std::invalid_argument("total_generator_loss: alpha and beta must be >= 0");
  return l_g_adv + alpha * l_charb + beta * l_perc;
}

enum class Reduction { Sum, Mean };

/// Sum (or mean) of squared errors between prediction and target.
template <typename DerivedP, typename DerivedY>
double sse_loss(const Eigen::ArrayBase<DerivedP>& pred, const Eigen::ArrayBase<DerivedY>& target,
                Reduction reduction = Reduction::Sum) {
  detail::require_same_size(pred, target, "sse_loss");
  const double s = (target.derived().template cast<double>() - pred.derived().template cast<double>()).square().sum();
  return reduction == Reduction::Sum ? s : s / static_cast<double>(pred.size());
}

/// d sse_loss / d pred.
template <typename DerivedP, typename DerivedY>
Eigen::Array<typename DerivedP::Scalar, Eigen::Dynamic, 1> sse_gradient(const Eigen::ArrayBase<DerivedP>& pred,
                                                                        const Eigen::ArrayBase<DerivedY>& target,
                                                                        Reduction reduction = Reduction::Sum) {
  using T = typename DerivedP::Scalar;
  detail::require_same_size(pred, target, "sse_gradient");
  const T scale = reduction == Reduction::Sum ? T(2) : T(2) / static_cast<T>(pred.size());
  return (scale * (pred.derived() - target.derived().template cast<T>())).reshaped();
}

}  // namespace petrec
