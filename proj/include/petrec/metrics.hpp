#pragma once

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "petrec/volume.hpp"

namespace petrec {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

/// 10 log10(range^2 / MSE); +infinity when the inputs are identical.
template <typename DerivedR, typename DerivedT>
double psnr(const Eigen::DenseBase<DerivedR>& ref, const Eigen::DenseBase<DerivedT>& test, double data_range) {
  if (ref.rows() != test.rows() || ref.cols() != test.cols() || ref.size() == 0)
    throw std::invalid_argument("psnr: shape mismatch");
  if (!(data_range > 0.0)) throw std::invalid_argument("psnr: data_range must be > 0");
  const double mse = (ref.derived().array().template cast<double>() - test.derived().array().template cast<double>())
                         .square()
                         .mean();
  if (mse == 0.0) return kInfinitePsnr;
  return 10.0 * std::log10(data_range * data_range / mse);
}

struct SsimOptions {
  int window_size = 7;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

namespace detail {
Eigen::MatrixXd gaussian_valid_filter(const Eigen::MatrixXd& img, const Eigen::VectorXd& kernel);
Eigen::VectorXd ssim_kernel(const SsimOptions& opt);
}  // namespace detail

/// Mean local SSIM over every position where the Gaussian window fits.
template <typename DerivedR, typename DerivedT>
double ssim(const Eigen::DenseBase<DerivedR>& ref, const Eigen::DenseBase<DerivedT>& test, double data_range,
            const SsimOptions& opt = {}) {
  if (ref.rows() != test.rows() || ref.cols() != test.cols()) throw std::invalid_argument("ssim: shape mismatch");
  if (opt.window_size < 1 || opt.window_size % 2 == 0) throw std::invalid_argument("ssim: window_size must be odd");
  if (ref.rows() < opt.window_size || ref.cols() < opt.window_size)
    throw std::invalid_argument("ssim: image smaller than window");
  if (!(data_range > 0.0)) throw std::invalid_argument("ssim: data_range must be > 0");

  const Eigen::MatrixXd a = ref.derived().matrix().template cast<double>();
  const Eigen::MatrixXd b = test.derived().matrix().template cast<double>();
  const Eigen::VectorXd k = detail::ssim_kernel(opt);
  const auto filt = [&](const Eigen::MatrixXd& m) { return detail::gaussian_valid_filter(m, k).array().eval(); };

  const auto mu_a = filt(a), mu_b = filt(b);
  const auto e_aa = filt(a.cwiseProduct(a)), e_bb = filt(b.cwiseProduct(b)), e_ab = filt(a.cwiseProduct(b));
  const auto var_a = (e_aa - mu_a * mu_a).eval();
  const auto var_b = (e_bb - mu_b * mu_b).eval();
  const auto cov = (e_ab - mu_a * mu_b).eval();
  const double c1 = std::pow(opt.k1 * data_range, 2), c2 = std::pow(opt.k2 * data_range, 2);
  const auto num = ((2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2)).eval();
  const auto den = ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)).eval();
  return (num / den).mean();
}

/// Relative total absolute metabolic difference over the mask:
///   sum_mask |ref - test| / sum_mask ref
template <typename DerivedR, typename DerivedT, typename DerivedM>
double vsmd(const Eigen::DenseBase<DerivedR>& ref, const Eigen::DenseBase<DerivedT>& test,
            const Eigen::DenseBase<DerivedM>& mask) {
  if (ref.size() != test.size() || ref.size() != mask.size()) throw std::invalid_argument("vsmd: shape mismatch");
  if (!mask.derived().array().any()) throw std::invalid_argument("vsmd: empty mask");
  const auto r = ref.derived().array().template cast<double>();
  const auto t = test.derived().array().template cast<double>();
  const auto& m = mask.derived().array();
  const double denom = m.select(r, 0.0).sum();
  if (denom == 0.0) throw std::domain_error("vsmd: reference sums to zero over the mask");
  return m.select((r - t).abs(), 0.0).sum() / denom;
}

struct MetricsReport {
  double psnr_db = 0.0;  // kInfinitePsnr when identical
  double ssim = 0.0;
  double vsmd = 0.0;
  Index n_voxels = 0;
  double mask_coverage = 0.0;
  std::vector<double> psnr_slices;
  std::vector<double> ssim_slices;

  bool psnr_infinite() const { return std::isinf(psnr_db); }
};

/// Voxels with a non-zero atlas label.
Mask brain_mask(const LabelVolume& atlas);

/// max - min of ref over the mask.
double masked_dynamic_range(const Volume3D& ref, const Mask& mask);

/// Per-slice PSNR/SSIM averaged over slices intersecting the mask, and
/// volume-level VSMD. data_range defaults to masked_dynamic_range(ref, mask).
MetricsReport evaluate_volume(const Volume3D& ref, const Volume3D& test, const Mask& mask,
                              std::optional<double> data_range = std::nullopt, const SsimOptions& opt = {});

/// psnr is serialised as null plus "psnr_infinite": true when identical.
nlohmann::json to_json(const MetricsReport& r);

}  // namespace petrec
