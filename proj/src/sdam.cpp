#include "petrec/sdam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "petrec/metrics.hpp"
#include "petrec/nn/checkpoint.hpp"

namespace petrec {

using nn::Activation;
using nn::ConvOptions;

void SdamConfig::validate() const {
  if (radius < 0) throw ConfigError("sdam.radius: must be >= 0, got " + std::to_string(radius));
  if (kernel_size < 1 || kernel_size % 2 == 0)
    throw ConfigError("sdam.kernel_size: must be odd and >= 1, got " + std::to_string(kernel_size));
  if (deform_channels < 1 || unet_base < 1 || recon_channels < 1)
    throw ConfigError("sdam: channel widths must be >= 1");
  if (unet_depth < 1 || unet_depth > 6) throw ConfigError("sdam.unet_depth: must be in [1, 6]");
  if (recon_blocks < 0) throw ConfigError("sdam.recon_blocks: must be >= 0");
}

// ---------------------------------------------------------------- deformable aggregation

namespace {

struct Geometry {
  Index n, slices, h, w, taps, k;
};

template <typename T>
Geometry check_geometry(const Tensor<T>& window, const Tensor<T>& offsets, const Tensor<T>& kernel) {
  require_rank(window, 4, "deformable_aggregate window");
  require_rank(kernel, 4, "deformable_aggregate kernel");
  const Index n = window.dim(0), t = window.dim(1), h = window.dim(2), w = window.dim(3);
  const Index k = kernel.dim(2);
  if (kernel.dim(1) != t || kernel.dim(3) != k || k % 2 == 0)
    throw ShapeError("deformable_aggregate: kernel " + to_string(kernel.shape()) + " incompatible with window " +
                     to_string(window.shape()));
  require_shape(offsets, {n, t * 2 * k * k, h, w}, "deformable_aggregate offsets");
  return {n, t, h, w, k * k, k};
}

/// Bilinear read of slice `img` at (py, px); outside pixels count as zero.
/// Optionally reports the corner indices/weights and the spatial derivatives.
template <typename T>
struct Sample {
  T value = 0, d_dy = 0, d_dx = 0;
  Index idx[4] = {-1, -1, -1, -1};
  T weight[4] = {0, 0, 0, 0};
};

template <typename T>
Sample<T> bilinear(const T* img, Index h, Index w, T py, T px) {
  Sample<T> s;
  const T fy = std::floor(py), fx = std::floor(px);
  const T ly = py - fy, lx = px - fx;
  if (!(std::abs(fy) < T(1e6)) || !(std::abs(fx) < T(1e6))) return s;  // non-finite or absurdly far
  const Index y0 = static_cast<Index>(fy), x0 = static_cast<Index>(fx);
  T v[4];
  const Index ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const Index xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const T ws[4] = {(1 - ly) * (1 - lx), (1 - ly) * lx, ly * (1 - lx), ly * lx};
  for (int c = 0; c < 4; ++c) {
    const bool inside = ys[c] >= 0 && ys[c] < h && xs[c] >= 0 && xs[c] < w;
    s.idx[c] = inside ? ys[c] * w + xs[c] : -1;
    v[c] = inside ? img[s.idx[c]] : T(0);
    s.weight[c] = ws[c];
    s.value += ws[c] * v[c];
  }
  s.d_dy = (1 - lx) * (v[2] - v[0]) + lx * (v[3] - v[1]);
  s.d_dx = (1 - ly) * (v[1] - v[0]) + ly * (v[3] - v[2]);
  return s;
}

/// Visits every (slice, tap, pixel) sample of batch item b.
template <typename T, typename F>
void for_each_sample(const Tensor<T>& window, const Tensor<T>& offsets, const Geometry& g, Index b, F&& f) {
  const Index hw = g.h * g.w, half = g.k / 2;
  for (Index t = 0; t < g.slices; ++t) {
    const T* img = window.data() + (b * g.slices + t) * hw;
    for (Index s = 0; s < g.taps; ++s) {
      const Index ky = s / g.k, kx = s % g.k;
      const Index ch = t * 2 * g.taps + 2 * s;
      const T* dy = offsets.data() + (b * offsets.dim(1) + ch) * hw;
      const T* dx = dy + hw;
      for (Index y = 0; y < g.h; ++y)
        for (Index x = 0; x < g.w; ++x) {
          const Index p = y * g.w + x;
          const T py = static_cast<T>(y + ky - half) + dy[p];
          const T px = static_cast<T>(x + kx - half) + dx[p];
          f(t, s, p, img, ch, bilinear(img, g.h, g.w, py, px));
        }
    }
  }
}

template <typename T>
RowMatrix<T> sampled_columns(const Tensor<T>& window, const Tensor<T>& offsets, const Geometry& g, Index b) {
  RowMatrix<T> cols(g.slices * g.taps, g.h * g.w);
  for_each_sample(window, offsets, g, b, [&](Index t, Index s, Index p, const T*, Index, const Sample<T>& smp) {
    cols(t * g.taps + s, p) = smp.value;
  });
  return cols;
}

}  // namespace

template <typename T>
Tensor<T> deformable_aggregate(const Tensor<T>& window, const Tensor<T>& offsets, const Tensor<T>& kernel) {
  const Geometry g = check_geometry(window, offsets, kernel);
  const Index c = kernel.dim(0), hw = g.h * g.w, rows = g.slices * g.taps;
  Tensor<T> out({g.n, c, g.h, g.w});
  const auto k = kernel.matrix(c, rows);
  for (Index b = 0; b < g.n; ++b) out.matrix(c, hw, b * c * hw).noalias() = k * sampled_columns(window, offsets, g, b);
  return out;
}

template <typename T>
DeformableGrads<T> deformable_aggregate_backward(const Tensor<T>& window, const Tensor<T>& offsets,
                                                 const Tensor<T>& kernel, const Tensor<T>& grad_out) {
  const Geometry g = check_geometry(window, offsets, kernel);
  const Index c = kernel.dim(0), hw = g.h * g.w, rows = g.slices * g.taps;
  require_shape(grad_out, {g.n, c, g.h, g.w}, "deformable_aggregate grad_out");
  DeformableGrads<T> d{Tensor<T>::zeros_like(window), Tensor<T>::zeros_like(offsets), Tensor<T>::zeros_like(kernel)};
  const auto k = kernel.matrix(c, rows);
  for (Index b = 0; b < g.n; ++b) {
    const auto go = grad_out.matrix(c, hw, b * c * hw);
    d.kernel.matrix(c, rows).noalias() += go * sampled_columns(window, offsets, g, b).transpose();
    const RowMatrix<T> dcols = k.transpose() * go;
    for_each_sample(window, offsets, g, b,
                    [&](Index t, Index s, Index p, const T*, Index ch, const Sample<T>& smp) {
                      const T gv = dcols(t * g.taps + s, p);
                      if (gv == T(0)) return;
                      T* dwin = d.window.data() + (b * g.slices + t) * hw;
                      for (int q = 0; q < 4; ++q)
                        if (smp.idx[q] >= 0) dwin[smp.idx[q]] += gv * smp.weight[q];
                      T* doff = d.offsets.data() + (b * offsets.dim(1) + ch) * hw;
                      doff[p] += gv * smp.d_dy;
                      doff[hw + p] += gv * smp.d_dx;
                    });
  }
  return d;
}

template <typename T>
DeformableAggregation<T>::DeformableAggregation(Index out_channels, Index slices, Index kernel_size, Rng& rng)
    : kernel_("sdam.deform.kernel", {out_channels, slices, kernel_size, kernel_size}) {
  nn::initialize(kernel_.value, slices * kernel_size * kernel_size, nn::Init::PyTorchDefault, rng);
}

template <typename T>
Tensor<T> DeformableAggregation<T>::forward(const Tensor<T>& window, const Tensor<T>& offsets) {
  window_ = window;
  offsets_ = offsets;
  return deformable_aggregate(window, offsets, kernel_.value);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> DeformableAggregation<T>::backward(const Tensor<T>& grad_out) {
  auto d = deformable_aggregate_backward(window_, offsets_, kernel_.value, grad_out);
  if (kernel_.trainable) kernel_.grad.array() += d.kernel.array();
  return {std::move(d.window), std::move(d.offsets)};
}

// ---------------------------------------------------------------- offset U-Net

namespace {

template <typename T>
std::unique_ptr<nn::Sequential<T>> double_conv(const std::string& name, Index in, Index out, Rng& rng) {
  auto seq = std::make_unique<nn::Sequential<T>>();
  seq->template add<nn::Conv2d<T>>(name + ".conv1", ConvOptions{in, out, 3, 1, 1}, rng);
  seq->template add<nn::Elementwise<T>>(Activation::ReLU);
  seq->template add<nn::Conv2d<T>>(name + ".conv2", ConvOptions{out, out, 3, 1, 1}, rng);
  seq->template add<nn::Elementwise<T>>(Activation::ReLU);
  return seq;
}

}  // namespace

template <typename T>
OffsetNet<T>::OffsetNet(const SdamConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index depth = cfg.unet_depth;
  Index in = cfg.window();
  for (Index l = 0; l < depth; ++l) {
    const Index width = cfg.unet_base << l;
    down_.push_back(double_conv<T>("sdam.offset.down" + std::to_string(l), in, width, rng));
    if (l + 1 < depth) {
      pool_.push_back(std::make_unique<nn::MaxPool2<T>>());
      up_.push_back(std::make_unique<nn::Upsample2<T>>());
      skip_channels_.push_back(width);
    }
    in = width;
  }
  for (Index l = 0; l + 1 < depth; ++l) {
    const Index width = cfg.unet_base << l;
    dec_.push_back(double_conv<T>("sdam.offset.up" + std::to_string(l), 2 * width + width, width, rng));
  }
  head_ = std::make_unique<nn::Conv2d<T>>(
      "sdam.offset.head", ConvOptions{cfg.unet_base, cfg.offset_channels(), 3, 1, 1, true, nn::Init::Zero}, rng);
}

template <typename T>
Tensor<T> OffsetNet<T>::forward(const Tensor<T>& window) {
  require_rank(window, 4, "offset net");
  const Index levels = static_cast<Index>(down_.size());
  const Index factor = Index{1} << (levels - 1);
  if (window.dim(2) % factor != 0 || window.dim(3) % factor != 0)
    throw ShapeError("offset net: H and W must be multiples of " + std::to_string(factor) + ", got " +
                     to_string(window.shape()));
  std::vector<Tensor<T>> skips;
  Tensor<T> h = window;
  for (Index l = 0; l < levels; ++l) {
    h = down_[l]->forward(h);
    if (l + 1 < levels) {
      skips.push_back(h);
      h = pool_[l]->forward(h);
    }
  }
  for (Index l = levels - 2; l >= 0; --l) h = dec_[l]->forward(concat_channels(up_[l]->forward(h), skips[l]));
  return head_->forward(h);
}

template <typename T>
Tensor<T> OffsetNet<T>::backward(const Tensor<T>& grad_offsets) {
  const Index levels = static_cast<Index>(down_.size());
  std::vector<Tensor<T>> d_skip(static_cast<std::size_t>(std::max<Index>(levels - 1, 0)));
  Tensor<T> g = head_->backward(grad_offsets);
  for (Index l = 0; l + 1 < levels; ++l) {
    g = dec_[l]->backward(g);
    const Index up_channels = g.dim(1) - skip_channels_[l];
    d_skip[l] = slice_channels(g, up_channels, skip_channels_[l]);
    g = up_[l]->backward(slice_channels(g, 0, up_channels));
  }
  for (Index l = levels - 1; l >= 0; --l) {
    if (l + 1 < levels) {
      g = pool_[l]->backward(g);
      g.array() += d_skip[l].array();
    }
    g = down_[l]->backward(g);
  }
  return g;
}

template <typename T>
void OffsetNet<T>::collect_params(std::vector<nn::Param<T>*>& out) {
  for (auto& d : down_) d->collect_params(out);
  for (auto& d : dec_) d->collect_params(out);
  head_->collect_params(out);
}

// ---------------------------------------------------------------- reconstruction

template <typename T>
ReconNet<T>::ReconNet(const SdamConfig& cfg, Rng& rng) {
  const Index c = cfg.recon_channels;
  this->template add<nn::Conv2d<T>>("sdam.recon.stem", ConvOptions{cfg.deform_channels, c, 3, 1, 1}, rng);
  this->template add<nn::Elementwise<T>>(Activation::ReLU);
  for (Index b = 0; b < cfg.recon_blocks; ++b)
    this->template add<nn::ResidualBlock<T>>("sdam.recon.res" + std::to_string(b), c, rng);
  output_ = &this->template add<nn::Conv2d<T>>("sdam.recon.out", ConvOptions{c, 1, 3, 1, 1, true, nn::Init::Zero}, rng);
}

// ---------------------------------------------------------------- composite

template <typename T>
Sdam<T>::Sdam(const SdamConfig& cfg, std::uint64_t seed) : cfg_((cfg.validate(), cfg)) {
  Rng rng_offset(derive_seed(seed, "sdam.offset"));
  Rng rng_deform(derive_seed(seed, "sdam.deform"));
  Rng rng_recon(derive_seed(seed, "sdam.recon"));
  offset_net_ = std::make_unique<OffsetNet<T>>(cfg_, rng_offset);
  aggregation_ = std::make_unique<DeformableAggregation<T>>(cfg_.deform_channels, cfg_.window(), cfg_.kernel_size,
                                                            rng_deform);
  recon_ = std::make_unique<ReconNet<T>>(cfg_, rng_recon);
}

template <typename T>
SdamOutput<T> Sdam<T>::forward(const Tensor<T>& window) {
  require_rank(window, 4, "sdam");
  if (window.dim(1) != cfg_.window())
    throw ShapeError("sdam: expected " + std::to_string(cfg_.window()) + " slices, got " + to_string(window.shape()));
  SdamOutput<T> o;
  o.offsets = offset_net_->forward(window);
  o.fused = aggregation_->forward(window, o.offsets);
  o.residual = recon_->forward(o.fused);
  o.refined = o.residual;
  o.refined.array() += slice_channels(window, cfg_.radius, 1).array();
  shape_n_ = window.dim(0);
  return o;
}

template <typename T>
Tensor<T> Sdam<T>::backward(const Tensor<T>& grad_refined) {
  const Tensor<T> d_fused = recon_->backward(grad_refined);
  auto [d_window, d_offsets] = aggregation_->backward(d_fused);
  d_window.array() += offset_net_->backward(d_offsets).array();
  const Index hw = grad_refined.dim(2) * grad_refined.dim(3), t = cfg_.window();
  for (Index b = 0; b < shape_n_; ++b) d_window.matrix(1, hw, (b * t + cfg_.radius) * hw) += grad_refined.matrix(1, hw, b * hw);
  return d_window;
}

template <typename T>
void Sdam<T>::collect_params(std::vector<nn::Param<T>*>& out) {
  offset_net_->collect_params(out);
  aggregation_->collect_params(out);
  recon_->collect_params(out);
}

template Tensor<float> deformable_aggregate(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> deformable_aggregate(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);
template DeformableGrads<float> deformable_aggregate_backward(const Tensor<float>&, const Tensor<float>&,
                                                              const Tensor<float>&, const Tensor<float>&);
template DeformableGrads<double> deformable_aggregate_backward(const Tensor<double>&, const Tensor<double>&,
                                                               const Tensor<double>&, const Tensor<double>&);
template class DeformableAggregation<float>;
template class DeformableAggregation<double>;
template class OffsetNet<float>;
template class OffsetNet<double>;
template class ReconNet<float>;
template class ReconNet<double>;
template class Sdam<float>;
template class Sdam<double>;

// ---------------------------------------------------------------- single-window helpers

Tensor<float> predict_offsets(OffsetNet<float>& net, const SdamConfig& cfg, const SliceWindow& window) {
  if (window.count() != cfg.window())
    throw ShapeError("predict_offsets: window has " + std::to_string(window.count()) + " slices, expected " +
                     std::to_string(cfg.window()));
  const Image& c = window.center();
  return net.forward(to_tensor<float>({window}))
      .reshaped({cfg.window(), 2 * cfg.kernel_size * cfg.kernel_size, c.rows(), c.cols()});
}

RefinedSlice reconstruct_residual(ReconNet<float>& recon, const Tensor<float>& fused, const Image& target,
                                  Index target_index) {
  require_rank(fused, 4, "reconstruct_residual");
  if (fused.dim(0) != 1 || fused.dim(2) != target.rows() || fused.dim(3) != target.cols())
    throw ShapeError("reconstruct_residual: fused " + to_string(fused.shape()) + " does not match target " +
                     std::to_string(target.rows()) + "x" + std::to_string(target.cols()));
  RefinedSlice out;
  out.residual = tensor_to_images(recon.forward(fused)).front();
  out.data = out.residual + target;
  out.target_index = target_index;
  return out;
}

double sdam_loss(const RefinedSlice& refined, const Image& y, Reduction reduction) {
  if (refined.data.rows() != y.rows() || refined.data.cols() != y.cols())
    throw ShapeError("sdam_loss: refined and ground truth shapes differ");
  return sse_loss(refined.data.array(), y.array(), reduction);
}

// ---------------------------------------------------------------- training

namespace {

Volume3D scaled(const Volume3D& v, double factor) {
  Volume3D out = v;
  out.data *= static_cast<float>(factor);
  return out;
}

double mean_validation_psnr(Sdam<float>& model, const std::vector<GeneratedSubject>& val, double scale) {
  double total = 0.0;
  for (const auto& s : val) total += evaluate_volume(s.fpet, refine_volume(model, s.generated, scale), brain_mask(s.atlas)).psnr_db;
  return total / static_cast<double>(val.size());
}

}  // namespace

SdamResult train_sdam(const std::vector<GeneratedSubject>& train, const std::vector<GeneratedSubject>& validation,
                      const SdamConfig& cfg, const SdamHyper& hyper, double norm_scale) {
  if (train.empty()) throw TrainingError("sdam: empty training split");
  cfg.validate();
  if (!(norm_scale > 0.0)) throw ConfigError("sdam: norm_scale must be > 0");
  if (hyper.steps < 0 || hyper.batch_size < 1 || hyper.eval_every < 1)
    throw ConfigError("sdam: steps >= 0, batch_size >= 1 and eval_every >= 1 are required");
  for (const auto& s : train)
    if (!(s.generated.dims == s.fpet.dims))
      throw ConfigError("sdam: subject '" + s.fpet.subject_id + "' generated and F-PET dims differ");

  SdamResult res;
  res.model = std::make_unique<Sdam<float>>(cfg, derive_seed(hyper.seed, "sdam"));
  auto& model = *res.model;
  nn::Adam<float> opt(model.params(), hyper.adam);

  const double inv = 1.0 / norm_scale;
  std::vector<Volume3D> gen, fpet;
  std::vector<std::pair<std::size_t, Index>> order;
  for (std::size_t s = 0; s < train.size(); ++s) {
    gen.push_back(scaled(train[s].generated, inv));
    fpet.push_back(scaled(train[s].fpet, inv));
    for (Index t = 0; t < train[s].fpet.dims.depth; ++t) order.push_back({s, t});
  }
  Rng rng(derive_seed(hyper.seed, "sdam.batches"));
  std::size_t pos = order.size();

  nn::Checkpoint best;
  res.best_val_psnr = -std::numeric_limits<double>::infinity();
  const auto evaluate = [&](long step) {
    if (validation.empty()) return;
    const double p = mean_validation_psnr(model, validation, norm_scale);
    res.validation.push_back({step, p});
    if (p > res.best_val_psnr) {
      res.best_val_psnr = p;
      res.best_step = step;
      best = nn::Checkpoint::capture(model);
    }
  };
  evaluate(0);

  for (long step = 1; step <= hyper.steps; ++step) {
    std::vector<SliceWindow> windows;
    std::vector<Image> targets;
    while (static_cast<Index>(windows.size()) < hyper.batch_size) {
      if (pos == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        pos = 0;
      }
      const auto [s, t] = order[pos++];
      windows.push_back(extract_window(gen[s], t, cfg.radius));
      targets.push_back(fpet[s].slice(t));
    }
    const Tensor<float> y = images_to_tensor<float>(targets);
    opt.zero_grad();
    const auto out = model.forward(to_tensor<float>(windows));
    const double loss = sse_loss(out.refined.array(), y.array(), cfg.loss_reduction);
    if (!std::isfinite(loss)) throw TrainingError("sdam: non-finite loss at step " + std::to_string(step));
    model.backward(Tensor<float>(y.shape(), sse_gradient(out.refined.array(), y.array(), cfg.loss_reduction)));
    opt.step();
    res.history.push_back(loss);
    if (step % hyper.eval_every == 0 || step == hyper.steps) evaluate(step);
  }

  if (validation.empty()) {
    res.best_step = hyper.steps;
    res.best_val_psnr = std::numeric_limits<double>::quiet_NaN();
  } else {
    best.restore(model);
  }
  return res;
}

Volume3D refine_volume(Sdam<float>& model, const Volume3D& generated, double norm_scale, Index batch_size) {
  if (!(norm_scale > 0.0)) throw std::invalid_argument("refine_volume: norm_scale must be > 0");
  batch_size = std::max<Index>(batch_size, 1);
  const Index r = model.config().radius;
  const Volume3D x = scaled(generated, 1.0 / norm_scale);
  Volume3D out(generated.dims, generated.subject_id, Modality::Refined);
  out.voxel_size_mm = generated.voxel_size_mm;
  const float s = static_cast<float>(norm_scale);
  for (Index t0 = 0; t0 < generated.dims.depth; t0 += batch_size) {
    const Index n = std::min(batch_size, generated.dims.depth - t0);
    std::vector<SliceWindow> windows;
    for (Index i = 0; i < n; ++i) windows.push_back(extract_window(x, t0 + i, r));
    const auto residual = tensor_to_images(model.forward(to_tensor<float>(windows)).residual);
    for (Index i = 0; i < n; ++i)
      out.slice(t0 + i) = (generated.slice(t0 + i).array() + s * residual[static_cast<std::size_t>(i)].array())
                              .max(0.0f)
                              .matrix();
  }
  return out;
}

// ---------------------------------------------------------------- config serialisation

nlohmann::json to_json(const SdamConfig& c) {
  return {{"radius", c.radius},
          {"kernel_size", c.kernel_size},
          {"deform_channels", c.deform_channels},
          {"unet_base", c.unet_base},
          {"unet_depth", c.unet_depth},
          {"recon_channels", c.recon_channels},
          {"recon_blocks", c.recon_blocks},
          {"loss_reduction", c.loss_reduction == Reduction::Sum ? "sum" : "mean"}};
}

void from_json(const nlohmann::json& j, SdamConfig& c) {
  c.radius = j.value("radius", c.radius);
  c.kernel_size = j.value("kernel_size", c.kernel_size);
  c.deform_channels = j.value("deform_channels", c.deform_channels);
  c.unet_base = j.value("unet_base", c.unet_base);
  c.unet_depth = j.value("unet_depth", c.unet_depth);
  c.recon_channels = j.value("recon_channels", c.recon_channels);
  c.recon_blocks = j.value("recon_blocks", c.recon_blocks);
  if (j.contains("loss_reduction")) {
    const auto r = j.at("loss_reduction").get<std::string>();
    if (r == "sum") c.loss_reduction = Reduction::Sum;
    else if (r == "mean") c.loss_reduction = Reduction::Mean;
    else throw ConfigError("sdam.loss_reduction: expected \"sum\" or \"mean\", got \"" + r + "\"");
  }
}

}  // namespace petrec
