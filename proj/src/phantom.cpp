#include "petrec/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "petrec/random.hpp"

namespace petrec {

void PhantomSpec::validate() const {
  if (dims.depth < 1 || dims.height < 1 || dims.width < 1)
    throw InvalidSpec("phantom.dims: every component must be >= 1, got " + to_string(dims));
  if (n_regions < 2 || n_regions > 255)
    throw InvalidSpec("phantom.n_regions: must lie in [2, 255], got " + std::to_string(n_regions));
  if (!(uptake_lo > 0.0) || !(uptake_hi >= uptake_lo))
    throw InvalidSpec("phantom.uptake_range: need 0 < lo <= hi");
  if (!(smoothing_sigma_vox >= 0.0)) throw InvalidSpec("phantom.smoothing_sigma_vox: must be >= 0");
  if (!(background_level >= 0.0)) throw InvalidSpec("phantom.background_level: must be >= 0");
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  for (int i = -radius; i <= radius; ++i) k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  const double sum = std::accumulate(k.begin(), k.end(), 0.0);
  for (auto& v : k) v /= sum;
  return k;
}

// Filters one axis in place; `stride` steps along the axis, `lines` enumerates starts.
void smooth_axis(Eigen::ArrayXd& data, const std::vector<double>& kernel, Index extent, Index stride,
                 const std::vector<Index>& starts) {
  const int radius = static_cast<int>(kernel.size() / 2);
  std::vector<double> line(static_cast<std::size_t>(extent));
  for (Index start : starts) {
    for (Index i = 0; i < extent; ++i) line[static_cast<std::size_t>(i)] = data[start + i * stride];
    for (Index i = 0; i < extent; ++i) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        const Index j = std::clamp<Index>(i + k, 0, extent - 1);
        acc += kernel[static_cast<std::size_t>(k + radius)] * line[static_cast<std::size_t>(j)];
      }
      data[start + i * stride] = acc;
    }
  }
}

}  // namespace

void gaussian_smooth(Volume3D& vol, double sigma_vox) {
  if (sigma_vox <= 0.0) return;
  const auto kernel = gaussian_kernel(sigma_vox);
  const Index d = vol.dims.depth, h = vol.dims.height, w = vol.dims.width;
  Eigen::ArrayXd data = vol.data.cast<double>();
  std::vector<Index> starts;

  starts.clear();
  for (Index z = 0; z < d; ++z)
    for (Index y = 0; y < h; ++y) starts.push_back((z * h + y) * w);
  smooth_axis(data, kernel, w, 1, starts);

  starts.clear();
  for (Index z = 0; z < d; ++z)
    for (Index x = 0; x < w; ++x) starts.push_back(z * h * w + x);
  smooth_axis(data, kernel, h, w, starts);

  starts.clear();
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) starts.push_back(y * w + x);
  smooth_axis(data, kernel, d, h * w, starts);

  vol.data = data.cast<float>().max(0.0f);
}

Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed, const std::string& subject_id) {
  spec.validate();
  const Dims dims = spec.dims;
  if (dims.depth < 3 || dims.height < 3 || dims.width < 3)
    throw InvalidSpec("phantom.dims: " + to_string(dims) + " too small to contain an ellipsoid (need >= 3 per axis)");

  Rng rng(derive_seed(seed, "phantom"));
  std::uniform_real_distribution<double> axis_scale(0.38, 0.46);
  const std::array<double, 3> center{(dims.depth - 1) / 2.0, (dims.height - 1) / 2.0, (dims.width - 1) / 2.0};
  const std::array<double, 3> semi{axis_scale(rng) * dims.depth, axis_scale(rng) * dims.height,
                                   axis_scale(rng) * dims.width};

  std::vector<Index> mask_voxels;
  for (Index z = 0; z < dims.depth; ++z)
    for (Index y = 0; y < dims.height; ++y)
      for (Index x = 0; x < dims.width; ++x) {
        const double dz = (z - center[0]) / semi[0], dy = (y - center[1]) / semi[1], dx = (x - center[2]) / semi[2];
        if (dz * dz + dy * dy + dx * dx <= 1.0) mask_voxels.push_back((z * dims.height + y) * dims.width + x);
      }
  if (static_cast<Index>(mask_voxels.size()) < spec.n_regions)
    throw InvalidSpec("phantom.dims: " + to_string(dims) + " ellipsoid holds " + std::to_string(mask_voxels.size()) +
                      " voxels, fewer than n_regions=" + std::to_string(spec.n_regions));

  // Voronoi seeds: distinct mask voxels.
  std::vector<Index> order(mask_voxels.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::array<double, 3>> seeds;
  for (int r = 0; r < spec.n_regions; ++r) {
    const Index v = mask_voxels[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])];
    seeds.push_back({static_cast<double>(v / (dims.height * dims.width)),
                     static_cast<double>((v / dims.width) % dims.height), static_cast<double>(v % dims.width)});
  }

  std::vector<int> cell(mask_voxels.size());
  std::vector<Index> cell_size(static_cast<std::size_t>(spec.n_regions), 0);
  for (std::size_t i = 0; i < mask_voxels.size(); ++i) {
    const Index v = mask_voxels[i];
    const double z = static_cast<double>(v / (dims.height * dims.width));
    const double y = static_cast<double>((v / dims.width) % dims.height);
    const double x = static_cast<double>(v % dims.width);
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int r = 0; r < spec.n_regions; ++r) {
      const auto& s = seeds[static_cast<std::size_t>(r)];
      const double d = (z - s[0]) * (z - s[0]) + (y - s[1]) * (y - s[1]) + (x - s[2]) * (x - s[2]);
      if (d < best_d) {
        best_d = d;
        best = r;
      }
    }
    cell[i] = best;
    ++cell_size[static_cast<std::size_t>(best)];
  }

  // Relabel so label 1 is the largest cell.
  std::vector<int> by_size(static_cast<std::size_t>(spec.n_regions));
  std::iota(by_size.begin(), by_size.end(), 0);
  std::stable_sort(by_size.begin(), by_size.end(), [&](int a, int b) {
    return cell_size[static_cast<std::size_t>(a)] > cell_size[static_cast<std::size_t>(b)];
  });
  std::vector<int> label_of(static_cast<std::size_t>(spec.n_regions));
  for (int rank = 0; rank < spec.n_regions; ++rank) label_of[static_cast<std::size_t>(by_size[static_cast<std::size_t>(rank)])] = rank + 1;

  std::uniform_real_distribution<double> uptake(spec.uptake_lo, spec.uptake_hi);
  std::vector<double> region_uptake(static_cast<std::size_t>(spec.n_regions + 1), 0.0);
  for (int label = 1; label <= spec.n_regions; ++label)
    region_uptake[static_cast<std::size_t>(label)] = spec.uptake_lo == spec.uptake_hi ? spec.uptake_lo : uptake(rng);

  Phantom out;
  out.atlas = LabelVolume(dims, subject_id, Modality::Atlas, 0);
  out.fpet = Volume3D(dims, subject_id, Modality::FPET, static_cast<float>(spec.background_level));
  for (std::size_t i = 0; i < mask_voxels.size(); ++i) {
    const int label = label_of[static_cast<std::size_t>(cell[i])];
    out.atlas.data[mask_voxels[i]] = static_cast<std::uint8_t>(label);
    out.fpet.data[mask_voxels[i]] = static_cast<float>(region_uptake[static_cast<std::size_t>(label)]);
  }
  gaussian_smooth(out.fpet, spec.smoothing_sigma_vox);
  return out;
}

Eigen::ArrayXd sample_counts(const Volume3D& fpet, double dose_fraction, double scale_counts, std::uint64_t seed) {
  if (!(dose_fraction > 0.0 && dose_fraction <= 1.0))
    throw std::domain_error("simulate_low_dose: dose_fraction must lie in (0, 1], got " + std::to_string(dose_fraction));
  if (!(scale_counts > 0.0)) throw std::domain_error("simulate_low_dose: scale_counts must be > 0");
  validate(fpet);
  Rng rng(derive_seed(seed, "low-dose"));
  Eigen::ArrayXd counts(fpet.data.size());
  for (Index i = 0; i < fpet.data.size(); ++i) {
    const double mean = dose_fraction * scale_counts * static_cast<double>(fpet.data[i]);
    if (mean <= 0.0) {
      counts[i] = 0.0;
      continue;
    }
    std::poisson_distribution<long long> poisson(mean);
    counts[i] = static_cast<double>(poisson(rng));
  }
  return counts;
}

Volume3D simulate_low_dose(const Volume3D& fpet, double dose_fraction, double scale_counts, std::uint64_t seed) {
  const Eigen::ArrayXd counts = sample_counts(fpet, dose_fraction, scale_counts, seed);
  Volume3D out = fpet;
  out.modality = Modality::LPET;
  out.data = (counts / (dose_fraction * scale_counts)).cast<float>();
  return out;
}

}  // namespace petrec
