#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "criteria.hpp"
#include "petrec/folds.hpp"
#include "petrec/phantom.hpp"
#include "petrec/volume_io.hpp"

using namespace petrec;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "petrec_test_phantom";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<std::string> ids(int n) {
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back("s" + std::to_string(i));
  return out;
}

}  // namespace

TEST_CASE("phantom with a degenerate uptake range is uniform inside the mask") {
  PhantomSpec spec;
  spec.dims = {12, 32, 32};
  spec.n_regions = 2;
  spec.uptake_lo = spec.uptake_hi = 1.0;
  spec.smoothing_sigma_vox = 0.0;
  spec.background_level = 0.0;
  const auto p = generate_phantom(spec, 3);
  Index inside = 0;
  for (Index i = 0; i < p.fpet.data.size(); ++i) {
    if (p.atlas.data[i] != 0) {
      ++inside;
      CHECK(p.fpet.data[i] == 1.0f);
    } else {
      CHECK(p.fpet.data[i] == 0.0f);
    }
  }
  CHECK(inside > 0);
}

TEST_CASE("phantom is deterministic and has the requested regions") {
  PhantomSpec spec;
  spec.dims = {16, 64, 64};
  spec.n_regions = 8;
  const auto a = generate_phantom(spec, 7);
  const auto b = generate_phantom(spec, 7);
  CHECK((a.fpet.data == b.fpet.data).all());
  CHECK((a.atlas.data == b.atlas.data).all());

  std::set<int> labels;
  for (Index i = 0; i < a.atlas.data.size(); ++i)
    if (a.atlas.data[i] != 0) labels.insert(a.atlas.data[i]);
  CHECK(labels.size() == 8);
  CHECK((a.fpet.data >= 0.0f).all());

  // Regions are ordered by decreasing size.
  std::vector<Index> sizes(9, 0);
  for (Index i = 0; i < a.atlas.data.size(); ++i) ++sizes[a.atlas.data[i]];
  for (int r = 2; r <= 8; ++r) CHECK(sizes[r - 1] >= sizes[r]);

  const auto c = generate_phantom(spec, 8);
  CHECK_FALSE((a.fpet.data == c.fpet.data).all());
}

TEST_CASE("phantom spec validation") {
  PhantomSpec spec;
  spec.dims = {2, 4, 4};
  spec.n_regions = 8;
  CHECK_THROWS_AS(generate_phantom(spec, 1), InvalidSpec);
  spec = {};
  spec.n_regions = 1;
  CHECK_THROWS_AS(spec.validate(), InvalidSpec);
  spec.n_regions = 256;
  CHECK_THROWS_AS(spec.validate(), InvalidSpec);
  spec = {};
  spec.uptake_lo = 3.0;
  spec.uptake_hi = 2.0;
  CHECK_THROWS_AS(spec.validate(), InvalidSpec);
}

TEST_CASE("low-dose simulation") {
  PhantomSpec spec;
  spec.dims = {8, 48, 48};
  const auto p = generate_phantom(spec, 11);

  SUBCASE("full dose with huge counts converges to the input") {
    const auto l = simulate_low_dose(p.fpet, 1.0, 1e6, 5);
    const double rel = (l.data - p.fpet.data).matrix().norm() / p.fpet.data.matrix().norm();
    CHECK(p.fpet.data.size() >= 10000);
    CHECK(rel < 0.01);
  }
  SUBCASE("zero input stays zero") {
    Volume3D z(spec.dims, "z", Modality::FPET, 0.0f);
    CHECK((simulate_low_dose(z, 0.05, 100, 1).data == 0.0f).all());
  }
  SUBCASE("raw counts have the Poisson expectation") {
    // Constant field: every voxel has expectation 0.05 * 100 * 2 = 10.
    Volume3D c({4, 50, 50}, "c", Modality::FPET, 2.0f);
    const auto counts = sample_counts(c, 0.05, 100.0, 9);
    const double n = static_cast<double>(counts.size());
    const double se = std::sqrt(10.0 / n);
    CHECK(std::abs(counts.mean() - 10.0) < 3.0 * se);
    CHECK((counts >= 0.0).all());
    CHECK((counts == counts.round()).all());
  }
  SUBCASE("lower dose is noisier") {
    const auto rel_var = [&](double df) {
      const auto l = simulate_low_dose(p.fpet, df, 100.0, 21);
      return (l.data.cast<double>() - p.fpet.data.cast<double>()).square().mean();
    };
    CHECK(rel_var(0.05) > rel_var(0.5));
  }
  SUBCASE("domain errors and determinism") {
    CHECK_THROWS_AS(simulate_low_dose(p.fpet, 0.0, 100, 1), std::domain_error);
    CHECK_THROWS_AS(simulate_low_dose(p.fpet, 1.5, 100, 1), std::domain_error);
    const auto a = simulate_low_dose(p.fpet, 0.05, 100, 4);
    const auto b = simulate_low_dose(p.fpet, 0.05, 100, 4);
    CHECK((a.data == b.data).all());
    CHECK(a.modality == Modality::LPET);
  }
}

TEST_CASE("slice windows replicate edges") {
  Volume3D v({10, 2, 3}, "v", Modality::FPET);
  for (Index t = 0; t < 10; ++t) v.slice(t).setConstant(static_cast<float>(t));
  const auto single = extract_window(v, 4, 0);
  REQUIRE(single.count() == 1);
  CHECK(single.center()(0, 0) == 4.0f);

  const auto edge = extract_window(v, 0, 2);
  REQUIRE(edge.count() == 5);
  CHECK(edge.slices[0](1, 2) == 0.0f);
  CHECK(edge.slices[1](1, 2) == 0.0f);
  CHECK(edge.center_index == 2);

  const auto mid = extract_window(v, 5, 2);
  for (Index i = 0; i < 5; ++i) CHECK(mid.slices[i](0, 0) == static_cast<float>(3 + i));
  CHECK(mid.t0 == 5);
  CHECK_THROWS(extract_window(v, 10, 1));
}

TEST_CASE("pvol round trip and format errors") {
  PhantomSpec spec;
  spec.dims = {4, 16, 12};
  auto p = generate_phantom(spec, 2, "sub-x");
  p.fpet.voxel_size_mm = {1.0, 1.0, 1.0};
  const auto path = scratch("v.pvol");
  write_volume(p.fpet, path);
  const auto back = read_volume(path);
  CHECK(back.dims == p.fpet.dims);
  CHECK(back.subject_id == "sub-x");
  CHECK(back.modality == p.fpet.modality);
  CHECK(back.voxel_size_mm == std::array<double, 3>{1.0, 1.0, 1.0});
  CHECK(std::memcmp(back.data.data(), p.fpet.data.data(), sizeof(float) * p.fpet.data.size()) == 0);

  const auto lpath = scratch("a.pvol");
  write_labels(p.atlas, lpath);
  CHECK((read_labels(lpath).data == p.atlas.data).all());
  CHECK_THROWS_AS(read_volume(lpath), VolumeFormatError);  // dtype mismatch

  // Header dims disagree with payload length.
  {
    std::ofstream out(scratch("bad.pvol"), std::ios::binary);
    out << R"({"magic":"PVOL1","dims":[2,2,2],"voxel_size_mm":[1,1,1],"dtype":"f32le","subject_id":"x","modality":"FPET"})"
        << '\n';
    const float v[4] = {1, 2, 3, 4};
    out.write(reinterpret_cast<const char*>(v), sizeof v);
  }
  CHECK_THROWS_AS(read_volume(scratch("bad.pvol")), VolumeFormatError);
  {
    std::ofstream out(scratch("magic.pvol"), std::ios::binary);
    out << R"({"magic":"XXXX","dims":[1,1,1],"voxel_size_mm":[1,1,1],"dtype":"f32le","subject_id":"x","modality":"FPET"})"
        << '\n';
  }
  CHECK_THROWS_WITH_AS(read_volume(scratch("magic.pvol")), doctest::Contains("magic"), VolumeFormatError);
  {
    std::ofstream out(scratch("header.pvol"), std::ios::binary);
    out << "not json\n";
  }
  CHECK_THROWS_AS(read_volume(scratch("header.pvol")), VolumeFormatError);
}

TEST_CASE("fold assignment") {
  SUBCASE("45 subjects in 10 folds") {
    const auto f = make_folds(ids(45), 10, 123);
    auto sizes = f.fold_sizes();
    std::sort(sizes.begin(), sizes.end());
    CHECK(sizes == std::vector<int>{4, 4, 4, 4, 4, 5, 5, 5, 5, 5});
  }
  SUBCASE("three subjects in three folds") {
    const auto f = make_folds(ids(3), 3, 1);
    CHECK(f.fold_sizes() == std::vector<int>{1, 1, 1});
  }
  SUBCASE("deterministic and seed-dependent") {
    CHECK(make_folds(ids(20), 5, 9).subject_to_fold() == make_folds(ids(20), 5, 9).subject_to_fold());
    CHECK(make_folds(ids(20), 5, 9).subject_to_fold() != make_folds(ids(20), 5, 10).subject_to_fold());
  }
  SUBCASE("roles partition subjects") {
    const auto all = ids(12);
    const auto f = make_folds(all, 4, 77);
    for (int t = 0; t < 4; ++t) {
      const auto r = f.roles(t);
      CHECK(r.validation_fold == (t + 1) % 4);
      CHECK(r.train_folds.size() == 2);
      std::multiset<std::string> seen(r.train.begin(), r.train.end());
      seen.insert(r.validation.begin(), r.validation.end());
      seen.insert(r.test.begin(), r.test.end());
      CHECK(seen == std::multiset<std::string>(all.begin(), all.end()));
    }
  }
  SUBCASE("ten-fold protocol on 45 subjects") {
    const auto rep = criteria::fold_protocol_check(10, 45, 20240501);
    INFO(rep.failure);
    CHECK(rep.ok);
    CHECK(rep.test_folds_checked == 10);
  }
  SUBCASE("argument errors") {
    CHECK_THROWS_AS(make_folds(ids(3), 4, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_folds(ids(5), 2, 1), std::invalid_argument);
  }
}
