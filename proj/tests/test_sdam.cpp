#include <doctest.h>

#include "criteria.hpp"
#include "petrec/phantom.hpp"
#include "petrec/sdam.hpp"
#include "support.hpp"

using namespace petrec;
using petrec::test::random_tensor;

namespace {

/// Unit weight on the centre tap of a single-slice S=3 kernel.
Tensor<float> centre_tap() {
  Tensor<float> k({1, 1, 3, 3});
  k(0, 0, 1, 1) = 1.0f;
  return k;
}

Tensor<float> ramp(Index h, Index w) {
  Tensor<float> x({1, 1, h, w});
  for (Index y = 0; y < h; ++y)
    for (Index c = 0; c < w; ++c) x(0, 0, y, c) = static_cast<float>(y * w + c);
  return x;
}

SdamConfig small_config() {
  SdamConfig c;
  c.radius = 1;
  c.deform_channels = 4;
  c.unet_base = 4;
  c.unet_depth = 2;
  c.recon_channels = 4;
  c.recon_blocks = 1;
  return c;
}

}  // namespace

TEST_CASE("deformable aggregation agrees with the brute-force oracle and plain convolution") {
  const auto r = criteria::deformable_checks(50, 2024);
  CHECK(r.oracle_max_abs <= 1e-5);
  CHECK(r.zero_offset_max_abs <= 1e-6);
  CHECK(r.gradient_rel <= 1e-3);
}

TEST_CASE("unit-offset shift") {
  const auto x = ramp(4, 5);
  Tensor<float> off({1, 18, 4, 5});
  // Tap 4 is the centre; channel 2*4 holds dy and 2*4+1 holds dx.
  off.matrix(1, 20, 9 * 20).setConstant(1.0f);
  const auto y = deformable_aggregate(x, off, centre_tap());
  for (Index r = 0; r < 4; ++r)
    for (Index c = 0; c < 5; ++c) CHECK(y(0, 0, r, c) == (c + 1 < 5 ? x(0, 0, r, c + 1) : 0.0f));
}

TEST_CASE("half-pixel vertical offset averages neighbouring rows") {
  const auto x = ramp(4, 4);
  Tensor<float> off({1, 18, 4, 4});
  off.matrix(1, 16, 8 * 16).setConstant(0.5f);
  const auto y = deformable_aggregate(x, off, centre_tap());
  for (Index r = 0; r < 4; ++r)
    for (Index c = 0; c < 4; ++c) {
      const float below = r + 1 < 4 ? x(0, 0, r + 1, c) : 0.0f;
      CHECK(y(0, 0, r, c) == doctest::Approx(0.5f * (x(0, 0, r, c) + below)).epsilon(1e-6));
    }
}

TEST_CASE("shape errors") {
  const auto x = ramp(4, 4);
  CHECK_THROWS_AS(deformable_aggregate(x, Tensor<float>({1, 17, 4, 4}), centre_tap()), ShapeError);
  CHECK_THROWS_AS(deformable_aggregate(x, Tensor<float>({1, 18, 4, 4}), Tensor<float>({1, 1, 2, 2})), ShapeError);
  SdamConfig bad;
  bad.kernel_size = 2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("offset field shape") {
  for (const auto& c : criteria::offset_shape_checks()) {
    INFO("r=" << c.radius << " S=" << c.kernel << " got " << to_string(c.got));
    CHECK(c.ok);
  }
  SdamConfig cfg;
  Rng rng(1);
  OffsetNet<float> net(cfg, rng);
  Volume3D v({3, 16, 16}, "v", Modality::Generated, 1.0f);
  CHECK_THROWS_AS(predict_offsets(net, cfg, extract_window(v, 1, 1)), ShapeError);

  // Deterministic, and zero at initialisation because of the zero-initialised head.
  Rng rng2(1);
  OffsetNet<float> twin(cfg, rng2);
  const auto w = extract_window(v, 1, 2);
  const auto a = predict_offsets(net, cfg, w);
  CHECK((a.array() == predict_offsets(twin, cfg, w).array()).all());
  CHECK((a.array() == 0.0f).all());
}

TEST_CASE("residual reconstruction") {
  const auto cfg = small_config();
  Rng rng(3);
  ReconNet<float> recon(cfg, rng);
  Image target = Image::Random(8, 8).array().abs();
  const auto fused = random_tensor<float>({1, cfg.deform_channels, 8, 8}, rng);

  const auto zero = reconstruct_residual(recon, fused, target, 4);
  CHECK((zero.residual.array() == 0.0f).all());
  CHECK((zero.data.array() == target.array()).all());
  CHECK(zero.target_index == 4);

  recon.output_layer().weight().value.array() = 0.1f;
  const auto some = reconstruct_residual(recon, fused, target);
  CHECK(some.data.rows() == 8);
  CHECK(some.data.cols() == 8);
  CHECK_FALSE((some.residual.array() == 0.0f).all());
  // The stored identity is exact; subtracting back loses at most rounding.
  CHECK((some.data.array() == (some.residual + target).array()).all());
  CHECK(((some.data - some.residual).array() - target.array()).abs().maxCoeff() <= 1e-6f);

  CHECK_THROWS_AS(reconstruct_residual(recon, random_tensor<float>({1, cfg.deform_channels, 4, 8}, rng), target),
                  ShapeError);
}

TEST_CASE("sdam loss") {
  RefinedSlice r;
  r.data = Image::Constant(2, 2, 1.0f);
  CHECK(sdam_loss(r, r.data) == 0.0);
  CHECK(sdam_loss(r, Image::Constant(2, 2, 2.0f)) == 4.0);
  CHECK(sdam_loss(r, Image::Constant(2, 2, 2.0f), Reduction::Mean) == 1.0);
  CHECK_THROWS_AS(sdam_loss(r, Image::Zero(3, 2)), ShapeError);
}

TEST_CASE("sdam and deformable gradients") {
  const auto g = criteria::loss_gradient_errors(4, 77);
  CHECK(g.sdam_loss <= 1e-4);
  CHECK(g.sdam_model <= 1e-3);
}

TEST_CASE("refine_volume") {
  const auto cfg = small_config();
  Sdam<float> model(cfg, 5);
  Volume3D gen({1, 16, 16}, "g", Modality::Generated);
  gen.data = Eigen::ArrayXf::Random(gen.data.size()).abs();

  const auto one = refine_volume(model, gen, 2.0);
  CHECK(one.dims == gen.dims);
  CHECK(one.modality == Modality::Refined);
  // Zero-initialised reconstruction head: refinement is the identity.
  CHECK((one.data == gen.data).all());

  PhantomSpec spec;
  spec.dims = {5, 16, 16};
  gen = generate_phantom(spec, 2).fpet;
  model.recon_net().output_layer().weight().value.array() = 0.05f;
  const auto many = refine_volume(model, gen, 2.0, 2);
  CHECK(many.dims == gen.dims);
  CHECK((many.data >= 0.0f).all());
  CHECK_FALSE((many.data == gen.data).all());
  CHECK((refine_volume(model, gen, 2.0, 5).data == many.data).all());
}

TEST_CASE("sdam memorises four windows") {
  const auto o = criteria::overfit_sdam(300, 5);
  CHECK(o.steps == 300);
  CHECK(o.ratio() >= 10.0);
}

TEST_CASE("train_sdam bookkeeping") {
  PhantomSpec spec;
  spec.dims = {4, 16, 16};
  spec.n_regions = 3;
  const auto p = generate_phantom(spec, 9);
  GeneratedSubject s{simulate_low_dose(p.fpet, 0.2, 100, 1), p.fpet, p.atlas};
  SdamHyper h;
  h.steps = 6;
  h.batch_size = 2;
  h.eval_every = 3;
  h.seed = 4;
  const auto cfg = small_config();
  const auto res = train_sdam({s}, {s}, cfg, h, 2.0);
  CHECK(res.history.size() == 6);
  REQUIRE(res.validation.size() == 3);
  CHECK(res.validation[0].step == 0);
  double best = -1e300;
  long best_step = -1;
  for (const auto& v : res.validation)
    if (v.psnr_db > best) best = v.psnr_db, best_step = v.step;
  CHECK(res.best_step == best_step);
  CHECK(res.best_val_psnr == best);

  const auto again = train_sdam({s}, {s}, cfg, h, 2.0);
  CHECK(again.history == res.history);
  CHECK_THROWS_AS(train_sdam({}, {s}, cfg, h, 2.0), TrainingError);
}
