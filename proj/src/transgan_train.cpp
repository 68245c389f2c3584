#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "petrec/metrics.hpp"
#include "petrec/nn/checkpoint.hpp"
#include "petrec/transgan.hpp"

namespace petrec {

double normalization_scale(const std::vector<PairedSubject>& train) {
  if (train.empty()) throw TrainingError("normalization_scale: empty training split");
  std::vector<float> all;
  for (const auto& s : train) all.insert(all.end(), s.fpet.data.begin(), s.fpet.data.end());
  const auto k = static_cast<std::size_t>(std::floor(0.995 * static_cast<double>(all.size() - 1)));
  std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end());
  const double scale = all[k];
  if (!(scale > 0.0) || !std::isfinite(scale))
    throw TrainingError("normalization_scale: 99.5th percentile of F-PET is not positive");
  return scale;
}

namespace {

Volume3D scaled(const Volume3D& v, double factor) {
  Volume3D out = v;
  out.data *= static_cast<float>(factor);
  return out;
}

/// Reshuffled pass over every (subject, slice) pair.
class SliceSampler {
 public:
  SliceSampler(const std::vector<Index>& depths, std::uint64_t seed) : rng_(seed) {
    for (std::size_t s = 0; s < depths.size(); ++s)
      for (Index t = 0; t < depths[s]; ++t) order_.push_back({s, t});
    pos_ = order_.size();
  }

  std::vector<std::pair<std::size_t, Index>> next(Index batch) {
    std::vector<std::pair<std::size_t, Index>> out;
    while (static_cast<Index>(out.size()) < batch) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  Rng rng_;
  std::vector<std::pair<std::size_t, Index>> order_;
  std::size_t pos_ = 0;
};

double mean_validation_psnr(Generator<float>& gen, const std::vector<PairedSubject>& val, double scale) {
  double total = 0.0;
  for (const auto& s : val) {
    const Volume3D g = generate_volume(gen, s.lpet, scale);
    total += evaluate_volume(s.fpet, g, brain_mask(s.atlas)).psnr_db;
  }
  return total / static_cast<double>(val.size());
}

void check_finite(const LossBundle& b) {
  for (double v : {b.l_gan_d, b.l_gan_g, b.l_charbonnier, b.l_perceptual, b.l_total_g})
    if (!std::isfinite(v))
      throw TrainingError("transgan: non-finite loss at step " + std::to_string(b.step) +
                          " (l_d=" + std::to_string(b.l_gan_d) + ", l_total_g=" + std::to_string(b.l_total_g) + ")");
}

}  // namespace

TransganResult train_transgan(const std::vector<PairedSubject>& train, const std::vector<PairedSubject>& validation,
                              const TransganConfig& cfg, const TransganHyper& hyper,
                              PerceptualPair<float>& encoders) {
  if (train.empty()) throw TrainingError("transgan: empty training split");
  cfg.generator.validate();
  cfg.discriminator.validate();
  if (hyper.steps < 0 || hyper.batch_size < 1 || hyper.eval_every < 1)
    throw ConfigError("transgan: steps >= 0, batch_size >= 1 and eval_every >= 1 are required");
  for (const auto& s : train)
    if (s.lpet.dims.height != cfg.generator.height || s.lpet.dims.width != cfg.generator.width ||
        !(s.lpet.dims == s.fpet.dims))
      throw ConfigError("transgan: subject '" + s.fpet.subject_id + "' has dims " + to_string(s.fpet.dims) +
                        " incompatible with generator " + std::to_string(cfg.generator.height) + "x" +
                        std::to_string(cfg.generator.width));

  TransganResult res;
  res.norm_scale = normalization_scale(train);
  const double inv = 1.0 / res.norm_scale;
  std::vector<Volume3D> lpet, fpet;
  std::vector<Index> depths;
  for (const auto& s : train) {
    lpet.push_back(scaled(s.lpet, inv));
    fpet.push_back(scaled(s.fpet, inv));
    depths.push_back(s.fpet.dims.depth);
  }

  res.generator = std::make_unique<Generator<float>>(cfg.generator, derive_seed(hyper.seed, "generator"));
  res.discriminator = std::make_unique<Discriminator<float>>(cfg.discriminator, derive_seed(hyper.seed, "discriminator"));
  auto& gen = *res.generator;
  auto& disc = *res.discriminator;
  nn::Adam<float> opt_g(gen.params(), hyper.adam_g);
  nn::Adam<float> opt_d(disc.params(), hyper.adam_d);
  SliceSampler sampler(depths, derive_seed(hyper.seed, "batches"));
  const Index r = cfg.generator.input_slices / 2;

  nn::Checkpoint best;
  res.best_val_psnr = -std::numeric_limits<double>::infinity();
  const auto evaluate = [&](long step) {
    if (validation.empty()) return;
    const double p = mean_validation_psnr(gen, validation, res.norm_scale);
    res.validation.push_back({step, p});
    if (p > res.best_val_psnr) {
      res.best_val_psnr = p;
      res.best_step = step;
      best = nn::Checkpoint::capture(gen);
    }
  };
  evaluate(0);

  for (long step = 1; step <= hyper.steps; ++step) {
    std::vector<SliceWindow> windows;
    std::vector<Image> targets;
    for (const auto& [s, t] : sampler.next(hyper.batch_size)) {
      windows.push_back(extract_window(lpet[s], t, r));
      targets.push_back(fpet[s].slice(t));
    }
    const Tensor<float> x = to_tensor<float>(windows);
    const Tensor<float> cond = slice_channels(x, r, 1);
    const Tensor<float> y = images_to_tensor<float>(targets);

    LossBundle b;
    b.step = step;
    const Tensor<float> g = gen.forward(x);

    // Discriminator update on real then fake pairs.
    opt_d.zero_grad();
    const Tensor<float> s_real = disc.forward(cond, y);
    disc.backward(Tensor<float>(s_real.shape(), lsgan_real_gradient(s_real.array())));
    const Tensor<float> s_fake = disc.forward(cond, g);
    disc.backward(Tensor<float>(s_fake.shape(), lsgan_fake_gradient(s_fake.array())));
    b.l_gan_d = adversarial_losses(s_real.array(), s_fake.array()).l_d;
    opt_d.step();

    // Generator update against the refreshed discriminator.
    opt_g.zero_grad();
    const Tensor<float> s_gen = disc.forward(cond, g);
    b.l_gan_g = adversarial_losses(s_real.array(), s_gen.array()).l_g_adv;
    Tensor<float> grad = disc.backward(Tensor<float>(s_gen.shape(), lsgan_generator_gradient(s_gen.array())));
    b.l_charbonnier = charbonnier_loss(g.array(), y.array(), hyper.eps);
    grad.array() += static_cast<float>(hyper.alpha) * charbonnier_gradient(g.array(), y.array(), hyper.eps);
    Tensor<float> grad_perc;
    b.l_perceptual = perceptual_loss(encoders, y, g, hyper.eps, &grad_perc);
    grad.array() += static_cast<float>(hyper.beta) * grad_perc.array();
    b.l_total_g = total_generator_loss(b.l_gan_g, b.l_charbonnier, b.l_perceptual, hyper.alpha, hyper.beta);
    check_finite(b);
    gen.backward(grad);
    opt_g.step();
    res.history.push_back(b);

    if (step % hyper.eval_every == 0 || step == hyper.steps) evaluate(step);
  }

  if (validation.empty()) {
    res.best_step = hyper.steps;
    res.best_val_psnr = std::numeric_limits<double>::quiet_NaN();
  } else {
    best.restore(gen);
  }
  return res;
}

Volume3D generate_volume(Generator<float>& gen, const Volume3D& lpet, double norm_scale, Index batch_size) {
  const auto& cfg = gen.config();
  if (lpet.dims.height != cfg.height || lpet.dims.width != cfg.width)
    throw ShapeError("generate_volume: volume " + to_string(lpet.dims) + " does not match generator " +
                     std::to_string(cfg.height) + "x" + std::to_string(cfg.width));
  if (!(norm_scale > 0.0)) throw std::invalid_argument("generate_volume: norm_scale must be > 0");
  batch_size = std::max<Index>(batch_size, 1);

  const Volume3D x = scaled(lpet, 1.0 / norm_scale);
  Volume3D out(lpet.dims, lpet.subject_id, Modality::Generated);
  out.voxel_size_mm = lpet.voxel_size_mm;
  const Index r = cfg.input_slices / 2;
  for (Index t0 = 0; t0 < lpet.dims.depth; t0 += batch_size) {
    const Index n = std::min(batch_size, lpet.dims.depth - t0);
    std::vector<SliceWindow> windows;
    for (Index i = 0; i < n; ++i) windows.push_back(extract_window(x, t0 + i, r));
    const auto images = tensor_to_images(gen.forward(to_tensor<float>(windows)));
    for (Index i = 0; i < n; ++i) out.slice(t0 + i) = images[static_cast<std::size_t>(i)] * static_cast<float>(norm_scale);
  }
  return out;
}

}  // namespace petrec
