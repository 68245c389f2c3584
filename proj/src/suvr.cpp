#include "petrec/suvr.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace petrec {

ROIAtlas ROIAtlas::from_labels(LabelVolume labels, int reference_region_id) {
  ROIAtlas atlas;
  std::set<int> ids;
  for (Index i = 0; i < labels.data.size(); ++i)
    if (labels.data[i] != 0) ids.insert(labels.data[i]);
  if (!ids.count(reference_region_id))
    throw SuvrError("atlas '" + labels.subject_id + "': reference region " + std::to_string(reference_region_id) +
                    " has no voxels");
  atlas.labels = std::move(labels);
  atlas.region_ids.assign(ids.begin(), ids.end());
  atlas.reference_region_id = reference_region_id;
  return atlas;
}

SUVRTable compute_suvr(const Volume3D& vol, const ROIAtlas& atlas) {
  if (!(vol.dims == atlas.labels.dims))
    throw SuvrError("compute_suvr: volume dims " + to_string(vol.dims) + " != atlas dims " +
                    to_string(atlas.labels.dims));
  std::map<int, double> sum;
  std::map<int, Index> count;
  for (Index i = 0; i < vol.data.size(); ++i) {
    const int label = atlas.labels.data[i];
    if (label == 0) continue;
    sum[label] += static_cast<double>(vol.data[i]);
    ++count[label];
  }
  const auto ref = atlas.reference_region_id;
  if (!count.count(ref)) throw SuvrError("compute_suvr: reference region missing");
  const double ref_mean = sum[ref] / static_cast<double>(count[ref]);
  if (!(ref_mean > 0.0)) throw SuvrError("compute_suvr: reference region mean uptake is zero");

  SUVRTable table;
  table.subject_id = vol.subject_id;
  table.modality = vol.modality;
  for (int id : atlas.region_ids) {
    const double mean = sum[id] / static_cast<double>(count[id]);
    table.suvr[id] = id == ref ? 1.0 : mean / ref_mean;
  }
  return table;
}

AgreementStats bland_altman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw SuvrError("bland_altman: series lengths differ");
  if (a.size() < 3) throw SuvrError("bland_altman: need at least 3 paired points");

  // Welford accumulation of differences, means and co-moments.
  double n = 0, mean_d = 0, m2_d = 0, mean_a = 0, mean_b = 0, c_ab = 0, m2_a = 0, m2_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    n += 1.0;
    const double d = a[i] - b[i];
    const double dd = d - mean_d;
    mean_d += dd / n;
    m2_d += dd * (d - mean_d);

    const double da = a[i] - mean_a;
    const double db = b[i] - mean_b;
    mean_a += da / n;
    mean_b += db / n;
    m2_a += da * (a[i] - mean_a);
    m2_b += db * (b[i] - mean_b);
    c_ab += da * (b[i] - mean_b);
  }

  AgreementStats s;
  s.n_points = static_cast<Index>(a.size());
  s.mean_diff = mean_d;
  s.sd_diff = std::sqrt(m2_d / (n - 1.0));
  s.loa_low = mean_d - 1.96 * s.sd_diff;
  s.loa_high = mean_d + 1.96 * s.sd_diff;
  const double half_ci = 1.96 * s.sd_diff / std::sqrt(n);
  s.ci_low = mean_d - half_ci;
  s.ci_high = mean_d + half_ci;
  if (m2_a > 0.0 && m2_b > 0.0) s.pearson_r = std::clamp(c_ab / std::sqrt(m2_a * m2_b), -1.0, 1.0);
  return s;
}

namespace {

std::pair<std::vector<double>, std::vector<double>> matched(const SUVRTable& a, const SUVRTable& b) {
  if (a.suvr.size() != b.suvr.size()) throw SuvrError("bland_altman: region sets differ");
  std::vector<double> va, vb;
  for (const auto& [id, v] : a.suvr) {
    const auto it = b.suvr.find(id);
    if (it == b.suvr.end()) throw SuvrError("bland_altman: region " + std::to_string(id) + " missing");
    va.push_back(v);
    vb.push_back(it->second);
  }
  return {va, vb};
}

}  // namespace

AgreementStats bland_altman(const SUVRTable& a, const SUVRTable& b) {
  const auto [va, vb] = matched(a, b);
  return bland_altman(va, vb);
}

AgreementReport agreement_report(const std::vector<std::pair<SUVRTable, SUVRTable>>& pairs) {
  if (pairs.empty()) throw SuvrError("agreement_report: no subject pairs");
  AgreementReport rep;
  std::vector<double> all_a, all_b;
  for (const auto& [ta, tb] : pairs) {
    const auto [va, vb] = matched(ta, tb);
    std::size_t i = 0;
    for (const auto& [id, v] : ta.suvr) {
      rep.points.push_back({ta.subject_id, id, 0.5 * (va[i] + vb[i]), va[i] - vb[i]});
      ++i;
    }
    all_a.insert(all_a.end(), va.begin(), va.end());
    all_b.insert(all_b.end(), vb.begin(), vb.end());
  }
  rep.stats = bland_altman(all_a, all_b);
  return rep;
}

nlohmann::json to_json(const AgreementStats& s) {
  nlohmann::json j{{"mean_diff", s.mean_diff}, {"sd_diff", s.sd_diff}, {"loa_low", s.loa_low},
                   {"loa_high", s.loa_high},   {"ci_low", s.ci_low},   {"ci_high", s.ci_high},
                   {"n_points", s.n_points}};
  if (s.pearson_r) {
    j["pearson_r"] = *s.pearson_r;
    j["pearson_undefined"] = false;
  } else {
    j["pearson_r"] = nullptr;
    j["pearson_undefined"] = true;
  }
  return j;
}

std::string suvr_csv(const std::vector<SUVRTable>& tables) {
  std::ostringstream os;
  os.precision(17);
  os << "subject_id,modality,region_id,suvr\n";
  for (const auto& t : tables)
    for (const auto& [id, v] : t.suvr) os << t.subject_id << ',' << to_string(t.modality) << ',' << id << ',' << v << '\n';
  return os.str();
}

std::string scatter_csv(const std::vector<ScatterPoint>& points) {
  std::ostringstream os;
  os.precision(17);
  os << "subject_id,region_id,mean,diff\n";
  for (const auto& p : points) os << p.subject_id << ',' << p.region_id << ',' << p.mean << ',' << p.diff << '\n';
  return os.str();
}

}  // namespace petrec
