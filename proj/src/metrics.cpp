#include "petrec/metrics.hpp"

#include <numeric>

namespace petrec {

namespace detail {

Eigen::VectorXd ssim_kernel(const SsimOptions& opt) {
  const int r = opt.window_size / 2;
  Eigen::VectorXd k(opt.window_size);
  for (int i = -r; i <= r; ++i) k[i + r] = std::exp(-0.5 * i * i / (opt.sigma * opt.sigma));
  return k / k.sum();
}

Eigen::MatrixXd gaussian_valid_filter(const Eigen::MatrixXd& img, const Eigen::VectorXd& kernel) {
  const Index w = kernel.size();
  const Index rows = img.rows() - w + 1, cols = img.cols() - w + 1;
  Eigen::MatrixXd tmp = Eigen::MatrixXd::Zero(rows, img.cols());
  for (Index i = 0; i < w; ++i) tmp += kernel[i] * img.middleRows(i, rows);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(rows, cols);
  for (Index j = 0; j < w; ++j) out += kernel[j] * tmp.middleCols(j, cols);
  return out;
}

}  // namespace detail

Mask brain_mask(const LabelVolume& atlas) { return atlas.data != std::uint8_t{0}; }

double masked_dynamic_range(const Volume3D& ref, const Mask& mask) {
  if (mask.size() != ref.data.size()) throw std::invalid_argument("masked_dynamic_range: mask size mismatch");
  if (!mask.any()) throw std::invalid_argument("masked_dynamic_range: empty mask");
  const double hi = mask.select(ref.data.cast<double>(), -std::numeric_limits<double>::infinity()).maxCoeff();
  const double lo = mask.select(ref.data.cast<double>(), std::numeric_limits<double>::infinity()).minCoeff();
  return hi - lo;
}

MetricsReport evaluate_volume(const Volume3D& ref, const Volume3D& test, const Mask& mask,
                              std::optional<double> data_range, const SsimOptions& opt) {
  if (!(ref.dims == test.dims)) throw std::invalid_argument("evaluate_volume: dims " + to_string(ref.dims) + " vs " +
                                                            to_string(test.dims));
  if (mask.size() != ref.data.size()) throw std::invalid_argument("evaluate_volume: mask size mismatch");
  const double range = data_range ? *data_range : masked_dynamic_range(ref, mask);

  MetricsReport rep;
  const Index plane = ref.dims.slice_pixels();
  for (Index t = 0; t < ref.dims.depth; ++t) {
    if (!mask.segment(t * plane, plane).any()) continue;
    rep.psnr_slices.push_back(psnr(ref.slice(t), test.slice(t), range));
    rep.ssim_slices.push_back(ssim(ref.slice(t), test.slice(t), range, opt));
  }
  if (rep.psnr_slices.empty()) throw std::invalid_argument("evaluate_volume: mask intersects no slice");
  const double n = static_cast<double>(rep.psnr_slices.size());
  rep.psnr_db = std::accumulate(rep.psnr_slices.begin(), rep.psnr_slices.end(), 0.0) / n;
  rep.ssim = std::accumulate(rep.ssim_slices.begin(), rep.ssim_slices.end(), 0.0) / n;
  rep.vsmd = vsmd(ref.data, test.data, mask);
  rep.n_voxels = mask.count();
  rep.mask_coverage = static_cast<double>(rep.n_voxels) / static_cast<double>(ref.data.size());
  return rep;
}

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json j;
  if (r.psnr_infinite()) {
    j["psnr_db"] = nullptr;
    j["psnr_infinite"] = true;
  } else {
    j["psnr_db"] = r.psnr_db;
    j["psnr_infinite"] = false;
  }
  j["ssim"] = r.ssim;
  j["vsmd"] = r.vsmd;
  j["n_voxels"] = r.n_voxels;
  j["mask_coverage"] = r.mask_coverage;
  j["n_slices"] = r.psnr_slices.size();
  return j;
}

}  // namespace petrec
