#include <doctest.h>

#include <filesystem>

#include "criteria.hpp"
#include "petrec/losses.hpp"
#include "petrec/nn/checkpoint.hpp"
#include "petrec/phantom.hpp"
#include "petrec/transgan.hpp"
#include "support.hpp"

using namespace petrec;
using petrec::test::random_tensor;

namespace {

GeneratorConfig small_generator(Index side = 32) {
  GeneratorConfig g;
  g.height = g.width = side;
  g.patch_size = 8;
  g.embed_dim = 16;
  g.n_attention_heads = 2;
  g.n_encoder_layers = 1;
  g.n_resnet_blocks = 1;
  g.base_channels = 8;
  return g;
}

std::uint64_t param_hash(nn::Module<float>& m) {
  std::uint64_t h = 1469598103934665603ull;
  for (auto* p : m.params()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    for (std::size_t i = 0; i < sizeof(float) * static_cast<std::size_t>(p->value.size()); ++i)
      h = (h ^ bytes[i]) * 1099511628211ull;
  }
  return h;
}

}  // namespace

TEST_CASE("charbonnier loss") {
  const Eigen::ArrayXd a = Eigen::ArrayXd::Random(64);
  CHECK(charbonnier_loss(a, a) == kCharbonnierEps);
  CHECK(charbonnier_loss(a, a, 0.5) == 0.5);
  const Eigen::ArrayXd b = a - 3.0;
  CHECK(std::abs(charbonnier_loss(a, b) - 3.0) < 1e-12);
  CHECK(charbonnier_loss(a, b) > charbonnier_loss(a, (a - 2.0).eval()));
  CHECK(charbonnier_loss(a, (a + 0.1).eval()) >= kCharbonnierEps);
  CHECK_THROWS_AS(charbonnier_loss(a, Eigen::ArrayXd::Zero(3)), std::invalid_argument);
  CHECK_THROWS_AS(charbonnier_loss(a, a, 0.0), std::invalid_argument);
}

TEST_CASE("adversarial losses and the weighted total") {
  const Eigen::ArrayXd one = Eigen::ArrayXd::Ones(36), zero = Eigen::ArrayXd::Zero(36);
  CHECK(adversarial_losses(one, zero).l_d == 0.0);
  CHECK(adversarial_losses(zero, one).l_g_adv == 0.0);
  CHECK(adversarial_losses(zero, one).l_d == 2.0);
  CHECK(total_generator_loss(1.0, 0.5, 0.2, 100.0, 100.0) == 71.0);
  CHECK(total_generator_loss(0.3, 0.5, 0.2, 0.0, 0.0) == 0.3);
  CHECK(total_generator_loss(1.0, 0.5, 0.2) == 71.0);
  TransganHyper h;
  CHECK(h.alpha == 100.0);
  CHECK(h.beta == 100.0);
  CHECK_THROWS_AS(total_generator_loss(1, 1, 1, -1, 0), std::invalid_argument);

  // LSGAN gradients against central differences.
  Rng rng(2);
  auto s = random_tensor({36}, rng);
  const auto fd = [&](auto f) { return petrec::test::numeric_grad(s, f); };
  CHECK(petrec::test::rel_err(lsgan_generator_gradient(s.array()),
                              fd([&] { return adversarial_losses(s.array(), s.array()).l_g_adv; })) < 1e-8);
  CHECK(petrec::test::rel_err(lsgan_fake_gradient(s.array()),
                              fd([&] { return adversarial_losses(one, s.array()).l_d; })) < 1e-8);
  CHECK(petrec::test::rel_err(lsgan_real_gradient(s.array()),
                              fd([&] { return adversarial_losses(s.array(), zero).l_d; })) < 1e-8);
}

TEST_CASE("loss gradients match finite differences") {
  const auto g = criteria::loss_gradient_errors(6, 31);
  CHECK(g.charbonnier <= 1e-4);
  CHECK(g.perceptual <= 1e-3);
}

TEST_CASE("perceptual loss") {
  PerceptualPair<float> enc(PerceptualConfig{}, 9);
  Rng rng(1);
  const auto y = random_tensor<float>({1, 1, 32, 32}, rng, 0.0, 1.0);
  const auto g = random_tensor<float>({1, 1, 32, 32}, rng, 0.0, 1.0);
  CHECK(perceptual_loss(enc, y, y, kCharbonnierEps) == 2 * kCharbonnierEps);
  CHECK(perceptual_loss(enc, y, g, kCharbonnierEps) == perceptual_loss(enc, g, y, kCharbonnierEps));
  CHECK(nn::count_parameters(enc.vgg16) == 0);
  CHECK(nn::count_parameters(enc.vgg19) == 0);
  CHECK_FALSE(enc.vgg16.params().empty());
  CHECK_THROWS(perceptual_loss(enc, y, random_tensor<float>({1, 1, 30, 30}, rng), kCharbonnierEps));
}

TEST_CASE("perceptual encoders load supplied weights") {
  // Write a weights file from one seed, load it into a pair built from another.
  PerceptualPair<float> source(PerceptualConfig{}, 100);
  std::vector<nn::Param<float>*> all = source.vgg16.params();
  for (auto* p : source.vgg19.params()) all.push_back(p);
  nn::Checkpoint ck;
  for (auto* p : all) ck.tensors[p->name] = p->value;
  const auto path = std::filesystem::temp_directory_path() / "petrec_test_vgg.ckpt";
  nn::write_checkpoint(path, ck);

  PerceptualConfig cfg;
  cfg.weights_path = path.string();
  PerceptualPair<float> loaded(cfg, 200);
  PerceptualPair<float> fresh(PerceptualConfig{}, 200);
  CHECK(param_hash(loaded.vgg16) == param_hash(source.vgg16));
  CHECK(param_hash(loaded.vgg19) == param_hash(source.vgg19));
  CHECK(param_hash(loaded.vgg16) != param_hash(fresh.vgg16));
  CHECK(nn::count_parameters(loaded.vgg16) == 0);

  Rng rng(3);
  const auto y = random_tensor<float>({1, 1, 16, 16}, rng, 0.0, 1.0);
  CHECK(perceptual_loss(loaded, y, y, kCharbonnierEps) == 2 * kCharbonnierEps);

  cfg.weights_path = (std::filesystem::temp_directory_path() / "petrec_missing.ckpt").string();
  CHECK_THROWS(PerceptualPair<float>(cfg, 1));
}

TEST_CASE("generator contract") {
  const auto cfg = small_generator(64);
  Generator<float> gen(cfg, 3);
  CHECK(cfg.tokens() == 64);
  Rng rng(4);
  const auto x = random_tensor<float>({2, 3, 64, 64}, rng, 0.0, 1.0);
  const auto y = gen.forward(x);
  CHECK(y.shape() == Shape{2, 1, 64, 64});
  CHECK(y.array().allFinite());
  CHECK((y.array() >= 0.0f).all());

  Generator<float> twin(cfg, 3);
  CHECK((twin.forward(x).array() == y.array()).all());

  // One input pixel in a corner changes outputs far from it: attention is global.
  auto x2 = x;
  x2(0, 1, 0, 0) += 1.0f;
  const auto y2 = gen.forward(x2);
  CHECK((y2.array() - y.array()).abs().maxCoeff() > 0.0f);
  float far = 0.0f;
  for (Index r = 48; r < 64; ++r)
    for (Index c = 48; c < 64; ++c) far = std::max(far, std::abs(y2(0, 0, r, c) - y(0, 0, r, c)));
  CHECK(far > 0.0f);

  // Single-window helper returns an H x W slice.
  Volume3D v({3, 64, 64}, "v", Modality::LPET, 0.5f);
  const auto slice = generator_forward(gen, extract_window(v, 1, 1));
  CHECK(slice.rows() == 64);
  CHECK(slice.cols() == 64);
  CHECK_THROWS_AS(gen.forward(random_tensor<float>({1, 5, 64, 64}, rng)), ShapeError);

  GeneratorConfig bad = cfg;
  bad.patch_size = 7;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.embed_dim = 18;
  bad.n_attention_heads = 4;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("patch folding round trip") {
  Rng rng(6);
  const auto x = random_tensor<double>({2, 3, 8, 12}, rng);
  const auto t = unfold_patches(x, 4);
  CHECK(t.shape() == Shape{2, 6, 48});
  CHECK((fold_patches(t, 3, 4, 8, 12).array() == x.array()).all());
  const auto e = random_tensor<double>({2, 5, 3, 4}, rng);
  CHECK((from_tokens(to_tokens(e), 3, 4).array() == e.array()).all());
}

TEST_CASE("generator and discriminator gradients") {
  Rng rng(8);
  GeneratorConfig cfg = small_generator(16);
  cfg.patch_size = 4;
  cfg.embed_dim = 8;
  cfg.base_channels = 4;
  Generator<double> gen(cfg, 2);
  auto x = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
  const auto w = random_tensor({1, 1, 16, 16}, rng);
  const auto loss = [&] { return (gen.forward(x).array() * w.array()).sum(); };
  gen.zero_grad();
  gen.forward(x);
  const auto dx = gen.backward(w);
  std::vector<double> a, n;
  for (auto* p : gen.params()) {
    const auto v = random_tensor(p->value.shape(), rng);
    a.push_back((p->grad.array() * v.array()).sum());
    n.push_back(petrec::test::robust_directional_grad(p->value, v, loss));
  }
  const auto v = random_tensor(x.shape(), rng);
  a.push_back((dx.array() * v.array()).sum());
  n.push_back(petrec::test::robust_directional_grad(x, v, loss));
  CHECK(petrec::test::rel_err(Eigen::Map<Eigen::ArrayXd>(a.data(), a.size()),
                              Eigen::Map<Eigen::ArrayXd>(n.data(), n.size())) < 1e-5);

  Discriminator<double> disc(DiscriminatorConfig{4}, 3);
  const auto cond = random_tensor({1, 1, 32, 32}, rng, 0.0, 1.0);
  auto cand = random_tensor({1, 1, 32, 32}, rng, 0.0, 1.0);
  const auto s0 = disc.forward(cond, cand);
  const auto ws = random_tensor(s0.shape(), rng);
  const auto dloss = [&] { return (disc.forward(cond, cand).array() * ws.array()).sum(); };
  disc.zero_grad();
  disc.forward(cond, cand);
  const auto dc = disc.backward(ws);
  const auto vc = random_tensor(cand.shape(), rng);
  CHECK((dc.array() * vc.array()).sum() ==
        doctest::Approx(petrec::test::robust_directional_grad(cand, vc, dloss)).epsilon(1e-5));
}

TEST_CASE("discriminator score map") {
  CHECK(Discriminator<float>::score_extent(64) == 6);
  // Receptive-field arithmetic from the layer table: k4 with strides 2,2,2,1,1.
  Index extent = 64;
  for (Index s : {2, 2, 2, 1, 1}) extent = (extent + 2 - 4) / s + 1;
  CHECK(extent == 6);
  Index rf = 1;
  for (Index s : {1, 1, 2, 2, 2}) rf = (rf - 1) * s + 4;
  CHECK(rf == 70);

  Discriminator<float> d(DiscriminatorConfig{}, 5);
  Rng rng(7);
  const auto cond = random_tensor<float>({1, 1, 64, 64}, rng, 0.0, 1.0);
  const auto a = random_tensor<float>({1, 1, 64, 64}, rng, 0.0, 1.0);
  const auto b = random_tensor<float>({1, 1, 64, 64}, rng, 0.0, 1.0);
  const auto sa = d.forward(cond, a);
  CHECK(sa.shape() == Shape{1, 1, 6, 6});
  CHECK(sa.array().allFinite());
  CHECK_FALSE((d.forward(cond, b).array() == sa.array()).all());
  CHECK_THROWS_AS(d.forward(cond, random_tensor<float>({1, 1, 32, 32}, rng)), ShapeError);
}

TEST_CASE("normalisation scale is the 99.5th percentile") {
  Volume3D f({1, 20, 10}, "s", Modality::FPET);
  for (Index i = 0; i < 200; ++i) f.data[i] = static_cast<float>(i);
  const PairedSubject s{f, f, LabelVolume({1, 20, 10}, "s", Modality::Atlas, 1)};
  // floor(0.995 * 199) = 198
  CHECK(normalization_scale({s}) == 198.0);
}

TEST_CASE("transgan memorises four slice pairs") {
  const auto o = criteria::overfit_transgan(300, 5);
  CHECK(o.steps == 300);
  CHECK(o.ratio() >= 10.0);
}

TEST_CASE("train_transgan bookkeeping") {
  PhantomSpec spec;
  spec.dims = {4, 32, 32};
  spec.n_regions = 3;
  const auto p = generate_phantom(spec, 3);
  PairedSubject s{simulate_low_dose(p.fpet, 0.05, 100, 2), p.fpet, p.atlas};
  TransganConfig cfg;
  cfg.generator = small_generator(32);
  cfg.discriminator.base_channels = 4;
  TransganHyper h;
  h.steps = 4;
  h.batch_size = 2;
  h.eval_every = 2;
  h.seed = 11;
  PerceptualPair<float> enc(cfg.perceptual, 1);
  const auto before = param_hash(enc.vgg16) ^ (param_hash(enc.vgg19) << 1);

  const auto res = train_transgan({s}, {s}, cfg, h, enc);
  CHECK((param_hash(enc.vgg16) ^ (param_hash(enc.vgg19) << 1)) == before);
  CHECK(res.history.size() == 4);
  for (std::size_t i = 0; i < res.history.size(); ++i) {
    const auto& b = res.history[i];
    CHECK(b.step == static_cast<long>(i + 1));
    CHECK(b.l_charbonnier >= h.eps);
    CHECK(b.l_perceptual >= 2 * h.eps);
    CHECK(b.l_total_g == doctest::Approx(b.l_gan_g + 100 * b.l_charbonnier + 100 * b.l_perceptual));
  }
  REQUIRE(res.validation.size() == 3);
  double best = -1e300;
  for (const auto& v : res.validation) best = std::max(best, v.psnr_db);
  CHECK(res.best_val_psnr == best);

  const auto again = train_transgan({s}, {s}, cfg, h, enc);
  CHECK(again.history.back().l_total_g == res.history.back().l_total_g);
  CHECK(param_hash(*again.generator) == param_hash(*res.generator));

  const auto vol = generate_volume(*res.generator, s.lpet, res.norm_scale);
  CHECK(vol.dims == s.lpet.dims);
  CHECK(vol.modality == Modality::Generated);
  CHECK((vol.data >= 0.0f).all());

  CHECK_THROWS_AS(train_transgan({}, {s}, cfg, h, enc), TrainingError);
  TransganConfig wrong = cfg;
  wrong.generator = small_generator(64);
  CHECK_THROWS_AS(train_transgan({s}, {}, wrong, h, enc), ConfigError);
}
