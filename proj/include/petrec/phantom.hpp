#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "petrec/volume.hpp"

namespace petrec {

class InvalidSpec : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct PhantomSpec {
  Dims dims{32, 64, 64};
  int n_regions = 8;
  double uptake_lo = 0.5;
  double uptake_hi = 2.5;
  double smoothing_sigma_vox = 1.0;
  double background_level = 0.05;

  void validate() const;
};

struct Phantom {
  Volume3D fpet;
  /// 0 = background, 1..n_regions = regions ordered by decreasing size.
  LabelVolume atlas;
};

/// Ellipsoidal brain partitioned into n_regions contiguous regions (Voronoi
/// cells of random seed voxels) of constant uptake, Gaussian-smoothed.
/// Deterministic in (spec, seed).
Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed, const std::string& subject_id = "phantom");

/// Raw Poisson counts with mean dose_fraction * scale_counts * fpet per voxel.
Eigen::ArrayXd sample_counts(const Volume3D& fpet, double dose_fraction, double scale_counts, std::uint64_t seed);

/// Low-dose surrogate: counts from sample_counts rescaled by
/// 1 / (dose_fraction * scale_counts) so it shares the full-dose intensity scale.
Volume3D simulate_low_dose(const Volume3D& fpet, double dose_fraction, double scale_counts, std::uint64_t seed);

/// Separable 3D Gaussian filter with edge replication; sigma 0 is identity.
void gaussian_smooth(Volume3D& vol, double sigma_vox);

}  // namespace petrec
