#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "petrec/volume.hpp"

namespace petrec {

class SuvrError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ROIAtlas {
  LabelVolume labels;
  std::vector<int> region_ids;  // non-zero labels present, ascending
  int reference_region_id = 1;

  /// Builds the region list from the labels and checks the reference region exists.
  static ROIAtlas from_labels(LabelVolume labels, int reference_region_id = 1);
};

struct SUVRTable {
  std::map<int, double> suvr;
  std::string subject_id;
  Modality modality = Modality::FPET;
};

/// Region mean uptake over reference-region mean uptake.
SUVRTable compute_suvr(const Volume3D& vol, const ROIAtlas& atlas);

struct AgreementStats {
  double mean_diff = 0.0;
  double sd_diff = 0.0;  // sample (n - 1) standard deviation
  double loa_low = 0.0;
  double loa_high = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::optional<double> pearson_r;  // empty when either series is constant
  Index n_points = 0;
};

/// Bland-Altman statistics of d_i = a_i - b_i: mean, limits mean +- 1.96 sd,
/// 95% CI of the mean (mean +- 1.96 sd / sqrt(n)), Pearson r of (a_i, b_i).
AgreementStats bland_altman(std::span<const double> a, std::span<const double> b);
AgreementStats bland_altman(const SUVRTable& a, const SUVRTable& b);

struct ScatterPoint {
  std::string subject_id;
  int region_id = 0;
  double mean = 0.0;  // (a + b) / 2
  double diff = 0.0;  // a - b
};

struct AgreementReport {
  AgreementStats stats;
  std::vector<ScatterPoint> points;
};

/// Pools per-region SUVR pairs (test, reference) across subjects.
AgreementReport agreement_report(const std::vector<std::pair<SUVRTable, SUVRTable>>& pairs);

nlohmann::json to_json(const AgreementStats& s);
std::string suvr_csv(const std::vector<SUVRTable>& tables);
std::string scatter_csv(const std::vector<ScatterPoint>& points);

}  // namespace petrec
