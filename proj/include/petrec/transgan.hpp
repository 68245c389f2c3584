#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "petrec/losses.hpp"
#include "petrec/nn/adam.hpp"
#include "petrec/nn/attention.hpp"
#include "petrec/nn/layers.hpp"
#include "petrec/volume.hpp"

namespace petrec {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct GeneratorConfig {
  Index height = 64;
  Index width = 64;
  Index input_slices = 3;
  Index patch_size = 8;
  Index embed_dim = 64;
  Index n_attention_heads = 4;
  Index n_encoder_layers = 2;
  Index mlp_ratio = 2;
  Index n_resnet_blocks = 3;
  Index base_channels = 16;

  void validate() const;
  Index tokens() const { return (height / patch_size) * (width / patch_size); }
};

/// Transformer-encoded ResNet generator. Input (N, input_slices, H, W) L-PET
/// window, output (N, 1, H, W) non-negative F-PET estimate for the centre slice.
///
///   patch conv (k=P, s=P) -> tokens + learned position embedding
///   -> n_encoder_layers x pre-norm transformer block -> LayerNorm
///   -> per-token linear to C*P*P values, folded back to (C, H, W)
///   -> concat input window -> conv3x3 + ReLU -> n_resnet_blocks residual blocks
///   -> conv3x3 to one channel -> softplus
template <typename T>
class Generator : public nn::Module<T> {
 public:
  Generator(const GeneratorConfig& cfg, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x);
  /// Accumulates parameter gradients and returns dLoss/dInput.
  Tensor<T> backward(const Tensor<T>& grad_out);
  void collect_params(std::vector<nn::Param<T>*>& out) override;

  const GeneratorConfig& config() const { return cfg_; }

 private:
  GeneratorConfig cfg_;
  std::unique_ptr<nn::Conv2d<T>> patch_embed_;
  nn::Param<T> pos_embed_;
  std::vector<std::unique_ptr<nn::TransformerBlock<T>>> encoder_;
  nn::LayerNorm<T> encoder_norm_;
  std::unique_ptr<nn::Linear<T>> unpatch_;
  nn::Sequential<T> decoder_;
  Index input_channels_ = 0;
};

/// Generated F-PET slice for one L-PET window.
Image generator_forward(Generator<float>& gen, const SliceWindow& window);

/// Token <-> image layout helpers (exposed for tests).
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x);  // (N, E, h, w) -> (N, h*w, E)
template <typename T>
Tensor<T> from_tokens(const Tensor<T>& t, Index h, Index w);  // inverse
template <typename T>
Tensor<T> fold_patches(const Tensor<T>& t, Index channels, Index patch, Index h, Index w);  // (N, L, C*P*P) -> (N, C, H, W)
template <typename T>
Tensor<T> unfold_patches(const Tensor<T>& x, Index patch);  // inverse

struct DiscriminatorConfig {
  Index base_channels = 16;

  void validate() const;
};

/// Conditional PatchGAN. Layer table (k = kernel, s = stride, p = padding):
///
///   | layer | in  | out | k | s | p | activation |
///   |-------|-----|-----|---|---|---|------------|
///   | c1    | 2   | b   | 4 | 2 | 1 | LeakyReLU  |
///   | c2    | b   | 2b  | 4 | 2 | 1 | LeakyReLU  |
///   | c3    | 2b  | 4b  | 4 | 2 | 1 | LeakyReLU  |
///   | c4    | 4b  | 8b  | 4 | 1 | 1 | LeakyReLU  |
///   | c5    | 8b  | 1   | 4 | 1 | 1 | none       |
///
/// Receptive field 70x70; a 64x64 input yields a 6x6 score map.
template <typename T>
class Discriminator : public nn::Module<T> {
 public:
  Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);

  /// Score map (N, 1, h, w) for candidate F-PET conditioned on the L-PET centre slice.
  Tensor<T> forward(const Tensor<T>& condition, const Tensor<T>& candidate);
  /// Returns dLoss/dCandidate.
  Tensor<T> backward(const Tensor<T>& grad_scores);
  void collect_params(std::vector<nn::Param<T>*>& out) override { net_.collect_params(out); }

  static Index score_extent(Index input_extent);

 private:
  nn::Sequential<T> net_;
};

enum class VggTopology { Vgg16, Vgg19 };

struct PerceptualConfig {
  /// Channel widths are the VGG widths (64, 128, 256) divided by this.
  Index width_divisor = 8;
  /// Optional PCKPT1 file holding "vgg16.*" and "vgg19.*" tensors.
  std::string weights_path;
  double eps = kCharbonnierEps;
};

/// Frozen VGG-topology feature extractor truncated at the activation
/// preceding the third pooling stage (relu3_3 for VGG16, relu3_4 for VGG19).
/// Single-channel input is replicated to three channels.
template <typename T>
class PerceptualEncoder : public nn::Module<T> {
 public:
  PerceptualEncoder(VggTopology topology, Index width_divisor, std::uint64_t seed);

  Tensor<T> forward(const Tensor<T>& x);
  Tensor<T> backward(const Tensor<T>& grad_features);
  void collect_params(std::vector<nn::Param<T>*>& out) override { net_.collect_params(out); }

  VggTopology topology() const { return topology_; }

 private:
  VggTopology topology_;
  nn::Sequential<T> net_;
};

template <typename T>
struct PerceptualPair {
  PerceptualEncoder<T> vgg16;
  PerceptualEncoder<T> vgg19;

  PerceptualPair(const PerceptualConfig& cfg, std::uint64_t seed);
};

/// charbonnier(V1(y), V1(g)) + charbonnier(V2(y), V2(g)). When grad_g is
/// given it receives d/dg. y and g are (N, 1, H, W) with H, W divisible by 4.
template <typename T>
double perceptual_loss(PerceptualPair<T>& enc, const Tensor<T>& y, const Tensor<T>& g, double eps,
                       Tensor<T>* grad_g = nullptr);

// ------------------------------------------------------------------ training

struct TransganHyper {
  long steps = 600;
  Index batch_size = 4;
  nn::AdamOptions adam_g{2e-4, 0.5, 0.999, 1e-8};
  nn::AdamOptions adam_d{2e-4, 0.5, 0.999, 1e-8};
  double alpha = 100.0;
  double beta = 100.0;
  double eps = kCharbonnierEps;
  long eval_every = 100;
  std::uint64_t seed = 0;
};

struct TransganConfig {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  PerceptualConfig perceptual;
};

/// One subject's paired volumes in original intensity units.
struct PairedSubject {
  Volume3D lpet;
  Volume3D fpet;
  LabelVolume atlas;
};

struct ValidationPoint {
  long step = 0;
  double psnr_db = 0.0;
};

struct TransganResult {
  std::unique_ptr<Generator<float>> generator;
  std::unique_ptr<Discriminator<float>> discriminator;
  double norm_scale = 1.0;
  std::vector<LossBundle> history;
  std::vector<ValidationPoint> validation;
  long best_step = 0;
  double best_val_psnr = 0.0;
};

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 99.5th percentile of all full-dose voxels in the training set.
double normalization_scale(const std::vector<PairedSubject>& train);

/// Alternating LSGAN discriminator / generator updates. The generator step
/// minimises l_g_adv + alpha * Charbonnier + beta * perceptual. The returned
/// generator holds the parameters with the highest validation PSNR.
TransganResult train_transgan(const std::vector<PairedSubject>& train, const std::vector<PairedSubject>& validation,
                              const TransganConfig& cfg, const TransganHyper& hyper,
                              PerceptualPair<float>& encoders);

/// Runs the generator over every slice of an L-PET volume.
Volume3D generate_volume(Generator<float>& gen, const Volume3D& lpet, double norm_scale, Index batch_size = 8);

nlohmann::json to_json(const GeneratorConfig& c);
nlohmann::json to_json(const DiscriminatorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
void from_json(const nlohmann::json& j, DiscriminatorConfig& c);

}  // namespace petrec
