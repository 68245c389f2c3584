#include <doctest.h>

#include <cstdlib>
#include <fstream>

#include "petrec/config.hpp"

using namespace petrec;
using nlohmann::json;

TEST_CASE("profiles") {
  const auto desk = default_config(Profile::Desk);
  CHECK(desk.n_subjects == 6);
  CHECK(desk.phantom.dims == Dims{32, 64, 64});
  CHECK(desk.folds_used.size() == 2);
  CHECK(desk.dose_fraction == 0.05);
  CHECK(desk.transgan_hyper.alpha == 100.0);
  CHECK(desk.transgan_hyper.beta == 100.0);
  CHECK(desk.transgan_hyper.adam_g.lr == 2e-4);
  CHECK(desk.transgan_hyper.adam_g.beta1 == 0.5);
  CHECK(desk.sdam.radius == 2);
  CHECK(desk.sdam.kernel_size == 3);
  CHECK_NOTHROW(desk.validate());

  const auto full = default_config(Profile::PaperShape);
  CHECK(full.k_folds == 10);
  CHECK(full.phantom.dims.height == 256);
  CHECK(full.transgan.generator.height == 256);
  CHECK_NOTHROW(full.validate());
  CHECK(profile_from_string("paper-shape") == Profile::PaperShape);
  CHECK_THROWS_AS(profile_from_string("huge"), ConfigError);
}

TEST_CASE("json overlay and error paths") {
  const auto cfg = config_from_json(json::parse(R"({"seed": 5, "data": {"n_subjects": 8}, "folds": {"k": 4}})"));
  CHECK(cfg.seed == 5);
  CHECK(cfg.n_subjects == 8);
  CHECK(cfg.k_folds == 4);
  CHECK(cfg.phantom.dims == Dims{32, 64, 64});

  CHECK_THROWS_WITH_AS(config_from_json(json::parse(R"({"data": {"n_subject": 8}})")),
                       doctest::Contains("data.n_subject"), ConfigError);
  CHECK_THROWS_WITH_AS(config_from_json(json::parse(R"({"transgan": {"train": {"steps": "many"}}})")),
                       doctest::Contains("transgan.train.steps"), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"folds": {"k": 2}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"folds": {"k": 3, "used": [3]}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"data": {"n_subjects": 2}})")), ConfigError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"data": {"dose_fraction": 0}})")), ConfigError);
  // Generator dims must match the phantom slices.
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"transgan": {"generator": {"height": 32}}})")), ConfigError);

  // Round trip through the canonical form.
  const auto again = config_from_json(to_json(cfg));
  CHECK(to_json(again) == to_json(cfg));
}

TEST_CASE("config hash changes with every field") {
  const auto base = default_config(Profile::Desk);
  const auto h = config_hash(base);
  CHECK(h == config_hash(default_config(Profile::Desk)));
  CHECK(h.size() == 16);

  auto c = base;
  c.seed += 1;
  CHECK(config_hash(c) != h);
  c = base;
  c.transgan_hyper.adam_d.beta2 = 0.99;
  CHECK(config_hash(c) != h);
  c = base;
  c.sdam.loss_reduction = Reduction::Mean;
  CHECK(config_hash(c) != h);
  c = base;
  c.phantom.smoothing_sigma_vox = 1.5;
  CHECK(config_hash(c) != h);
  c = base;
  c.plots = false;
  CHECK(config_hash(c) != h);
}

TEST_CASE("load_config resolves paths and honours PETREC_SEED") {
  const auto dir = std::filesystem::temp_directory_path() / "petrec_test_config";
  std::filesystem::create_directories(dir);
  const auto path = dir / "c.json";
  std::ofstream(path) << R"({"output_dir": "runs/a", "seed": 3})";

  ::unsetenv("PETREC_SEED");
  auto cfg = load_config(path);
  CHECK(cfg.output_dir == dir / "runs/a");
  CHECK(cfg.seed == 3);

  ::setenv("PETREC_SEED", "99", 1);
  CHECK(load_config(path).seed == 99);
  ::setenv("PETREC_SEED", "abc", 1);
  CHECK_THROWS_AS(load_config(path), ConfigError);
  ::unsetenv("PETREC_SEED");

  CHECK(load_config(path, Profile::PaperShape).profile == Profile::PaperShape);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
  std::ofstream(dir / "bad.json") << "{not json";
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
}
