#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include <nlohmann/json.hpp>

#include "petrec/losses.hpp"
#include "petrec/nn/adam.hpp"
#include "petrec/nn/layers.hpp"
#include "petrec/transgan.hpp"
#include "petrec/volume.hpp"

namespace petrec {

struct SdamConfig {
  Index radius = 2;           // window holds 2r+1 slices
  Index kernel_size = 3;      // S, odd
  Index deform_channels = 16;
  Index unet_base = 8;
  Index unet_depth = 3;       // resolution levels of the offset U-Net
  Index recon_channels = 16;
  Index recon_blocks = 4;
  Reduction loss_reduction = Reduction::Sum;

  void validate() const;
  Index window() const { return 2 * radius + 1; }
  Index offset_channels() const { return window() * 2 * kernel_size * kernel_size; }
};

// ------------------------------------------------------------ deformable aggregation
//
// window  (N, T, H, W)          T = 2r+1 slices
// offsets (N, T * 2 S^2, H, W)  channel t*2S^2 + 2s holds dy, +1 holds dx for tap s
// kernel  (C, T, S, S)
// out     (N, C, H, W)
//
//   out(n, c, p) = sum_t sum_s kernel(c, t, s) * window_t(p + p_s + delta(t, p, s))
//
// Sampling is bilinear; positions outside the slice read as zero.

template <typename T>
Tensor<T> deformable_aggregate(const Tensor<T>& window, const Tensor<T>& offsets, const Tensor<T>& kernel);

template <typename T>
struct DeformableGrads {
  Tensor<T> window;
  Tensor<T> offsets;
  Tensor<T> kernel;
};

template <typename T>
DeformableGrads<T> deformable_aggregate_backward(const Tensor<T>& window, const Tensor<T>& offsets,
                                                 const Tensor<T>& kernel, const Tensor<T>& grad_out);

/// Learnable position-specific deformable convolution over a slice window.
template <typename T>
class DeformableAggregation : public nn::Module<T> {
 public:
  DeformableAggregation(Index out_channels, Index slices, Index kernel_size, Rng& rng);

  Tensor<T> forward(const Tensor<T>& window, const Tensor<T>& offsets);
  /// Accumulates the kernel gradient; returns (d window, d offsets).
  std::pair<Tensor<T>, Tensor<T>> backward(const Tensor<T>& grad_out);
  void collect_params(std::vector<nn::Param<T>*>& out) override { out.push_back(&kernel_); }

  nn::Param<T>& kernel() { return kernel_; }

 private:
  nn::Param<T> kernel_;
  Tensor<T> window_, offsets_;
};

/// U-Net predicting the full offset field of every slice and tap in one pass.
/// Its final convolution is zero-initialised, so training starts from plain
/// convolution.
template <typename T>
class OffsetNet : public nn::Layer<T> {
 public:
  OffsetNet(const SdamConfig& cfg, Rng& rng);

  Tensor<T> forward(const Tensor<T>& window) override;
  Tensor<T> backward(const Tensor<T>& grad_offsets) override;
  void collect_params(std::vector<nn::Param<T>*>& out) override;

 private:
  std::vector<std::unique_ptr<nn::Sequential<T>>> down_;  // per level
  std::vector<std::unique_ptr<nn::MaxPool2<T>>> pool_;
  std::vector<std::unique_ptr<nn::Upsample2<T>>> up_;
  std::vector<std::unique_ptr<nn::Sequential<T>>> dec_;
  std::vector<Index> skip_channels_;
  std::unique_ptr<nn::Conv2d<T>> head_;
};

/// Residual network mapping fused features to a one-channel correction.
/// The output convolution is zero-initialised.
template <typename T>
class ReconNet : public nn::Sequential<T> {
 public:
  ReconNet(const SdamConfig& cfg, Rng& rng);
  nn::Conv2d<T>& output_layer() { return *output_; }

 private:
  nn::Conv2d<T>* output_ = nullptr;
};

template <typename T>
struct SdamOutput {
  Tensor<T> offsets;   // (N, T*2S^2, H, W)
  Tensor<T> fused;     // (N, C, H, W)
  Tensor<T> residual;  // (N, 1, H, W)
  Tensor<T> refined;   // residual + centre slice
};

/// Offset prediction -> deformable aggregation -> residual reconstruction.
template <typename T>
class Sdam : public nn::Module<T> {
 public:
  Sdam(const SdamConfig& cfg, std::uint64_t seed);

  SdamOutput<T> forward(const Tensor<T>& window);
  /// Backpropagates dLoss/dRefined; returns dLoss/dWindow.
  Tensor<T> backward(const Tensor<T>& grad_refined);
  void collect_params(std::vector<nn::Param<T>*>& out) override;

  const SdamConfig& config() const { return cfg_; }
  OffsetNet<T>& offset_net() { return *offset_net_; }
  DeformableAggregation<T>& aggregation() { return *aggregation_; }
  ReconNet<T>& recon_net() { return *recon_; }

 private:
  SdamConfig cfg_;
  std::unique_ptr<OffsetNet<T>> offset_net_;
  std::unique_ptr<DeformableAggregation<T>> aggregation_;
  std::unique_ptr<ReconNet<T>> recon_;
  Index shape_n_ = 0;
};

/// Offset field for a single window, shaped (2r+1, 2S^2, H, W).
Tensor<float> predict_offsets(OffsetNet<float>& net, const SdamConfig& cfg, const SliceWindow& window);

/// Refined centre slice; data = residual + target holds elementwise.
struct RefinedSlice {
  Image data;
  Image residual;
  Index target_index = 0;
};

/// Applies recon_net to fused features and adds the residual to target.
RefinedSlice reconstruct_residual(ReconNet<float>& recon, const Tensor<float>& fused, const Image& target,
                                  Index target_index = 0);

/// SDAM objective: summed (or mean) squared error of refined vs ground truth.
double sdam_loss(const RefinedSlice& refined, const Image& y, Reduction reduction = Reduction::Sum);

struct SdamHyper {
  long steps = 400;
  Index batch_size = 4;
  nn::AdamOptions adam{1e-4, 0.9, 0.999, 1e-8};
  long eval_every = 50;
  std::uint64_t seed = 0;
};

/// A subject's transGAN output paired with its ground truth.
struct GeneratedSubject {
  Volume3D generated;
  Volume3D fpet;
  LabelVolume atlas;
};

struct SdamResult {
  std::unique_ptr<Sdam<float>> model;
  std::vector<double> history;  // loss per step
  std::vector<ValidationPoint> validation;
  long best_step = 0;
  double best_val_psnr = 0.0;
};

/// Minimises sdam_loss over windows of generated slices. Validation PSNR is
/// recorded at step 0 (identity refinement) and every eval_every steps; the
/// returned model holds the best-scoring parameters.
SdamResult train_sdam(const std::vector<GeneratedSubject>& train, const std::vector<GeneratedSubject>& validation,
                      const SdamConfig& cfg, const SdamHyper& hyper, double norm_scale);

/// Refines every slice of a generated volume (edge-replicated windows):
/// refined = max(0, generated + norm_scale * residual).
Volume3D refine_volume(Sdam<float>& model, const Volume3D& generated, double norm_scale, Index batch_size = 8);

nlohmann::json to_json(const SdamConfig& c);
void from_json(const nlohmann::json& j, SdamConfig& c);

}  // namespace petrec
