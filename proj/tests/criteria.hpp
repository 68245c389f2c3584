#pragma once

// Independent oracles and measurement routines shared by the unit tests and
// the acceptance binary. Everything here is deterministic in its seed.

#include <cstdint>
#include <string>
#include <vector>

#include "petrec/nn/tensor.hpp"
#include "petrec/sdam.hpp"

namespace petrec::criteria {

/// Direct per-position evaluation of the deformable aggregation, using the
/// triangle-kernel form of bilinear interpolation:
///   C(y, x) = sum_{i,j} max(0, 1-|y-i|) max(0, 1-|x-j|) C[i][j]
/// over in-bounds pixels only. Shapes follow deformable_aggregate.
Tensor<double> brute_force_deformable(const Tensor<double>& window, const Tensor<double>& offsets,
                                      const Tensor<double>& kernel);

struct GradientReport {
  int cases = 0;
  double charbonnier = 0.0;  // worst normwise relative error
  double perceptual = 0.0;
  double sdam_loss = 0.0;    // gradient of the summed squared error
  double sdam_model = 0.0;   // full SDAM chain under the same loss
};

/// Finite-difference checks of the three objectives on `cases` random inputs each.
GradientReport loss_gradient_errors(int cases, std::uint64_t seed);

struct DeformableReport {
  int cases = 0;
  double oracle_max_abs = 0.0;       // float implementation vs brute force
  double zero_offset_max_abs = 0.0;  // zero offsets vs plain convolution
  double gradient_rel = 0.0;         // d window, d offsets, d kernel vs central differences
};

DeformableReport deformable_checks(int cases, std::uint64_t seed);

struct OffsetShapeCase {
  Index radius, kernel, height, width;
  Shape got;
  bool ok;
};

std::vector<OffsetShapeCase> offset_shape_checks();

struct OverfitReport {
  double first = 0.0;
  double last = 0.0;
  long steps = 0;
  double ratio() const { return first / last; }
};

/// Memorisation run of the full transGAN objective on 4 slice pairs; reports
/// the Charbonnier term at the first and last step.
OverfitReport overfit_transgan(long steps, std::uint64_t seed);

/// Memorisation run of SDAM on 4 windows; reports the loss at the first and last step.
OverfitReport overfit_sdam(long steps, std::uint64_t seed);

/// Two-pass Bland-Altman reference written independently of the library.
struct AgreementOracle {
  double mean, sd, r;
};

AgreementOracle two_pass_agreement(const std::vector<double>& a, const std::vector<double>& b);

/// Largest absolute deviation of bland_altman from the two-pass reference
/// over `trials` random paired tables, across mean, sd, limits, CI and r.
double bland_altman_oracle_error(int trials, std::uint64_t seed);

/// True when scaling a phantom by several constants leaves every regional SUVR bit-identical.
bool suvr_scaling_exact(std::uint64_t seed);

struct FoldProtocolReport {
  int test_folds_checked = 0;
  bool ok = true;
  std::string failure;  // first violated property, empty when ok
};

/// Checks that every test-fold choice gives a (k-2)/1/1 train/validation/test
/// partition of the folds whose subject sets are disjoint and cover everyone.
FoldProtocolReport fold_protocol_check(int k, int n_subjects, std::uint64_t seed);

}  // namespace petrec::criteria
