#include "petrec/transgan.hpp"

#include <algorithm>
#include <cmath>

#include "petrec/metrics.hpp"
#include "petrec/nn/checkpoint.hpp"

namespace petrec {

using nn::Activation;
using nn::ConvOptions;

void GeneratorConfig::validate() const {
  if (height < 1 || width < 1) throw ConfigError("generator: height and width must be >= 1");
  if (input_slices < 1 || input_slices % 2 == 0)
    throw ConfigError("generator.input_slices: must be odd and >= 1, got " + std::to_string(input_slices));
  if (patch_size < 1 || height % patch_size != 0 || width % patch_size != 0)
    throw ConfigError("generator.patch_size: " + std::to_string(patch_size) + " must divide H=" +
                      std::to_string(height) + " and W=" + std::to_string(width));
  if (n_attention_heads < 1 || embed_dim < 1 || embed_dim % n_attention_heads != 0)
    throw ConfigError("generator.embed_dim: " + std::to_string(embed_dim) + " must be divisible by n_attention_heads=" +
                      std::to_string(n_attention_heads));
  if (n_encoder_layers < 0 || n_resnet_blocks < 0 || base_channels < 1 || mlp_ratio < 1)
    throw ConfigError("generator: layer counts must be >= 0 and widths >= 1");
}

void DiscriminatorConfig::validate() const {
  if (base_channels < 1) throw ConfigError("discriminator.base_channels: must be >= 1");
}

// ---------------------------------------------------------------- layout helpers

template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  require_rank(x, 4, "to_tokens");
  const Index n = x.dim(0), e = x.dim(1), l = x.dim(2) * x.dim(3);
  Tensor<T> out({n, l, e});
  for (Index i = 0; i < n; ++i) out.matrix(l, e, i * l * e) = x.matrix(e, l, i * e * l).transpose();
  return out;
}

template <typename T>
Tensor<T> from_tokens(const Tensor<T>& t, Index h, Index w) {
  require_rank(t, 3, "from_tokens");
  const Index n = t.dim(0), l = t.dim(1), e = t.dim(2);
  if (l != h * w) throw ShapeError("from_tokens: token count does not match grid");
  Tensor<T> out({n, e, h, w});
  for (Index i = 0; i < n; ++i) out.matrix(e, l, i * e * l) = t.matrix(l, e, i * l * e).transpose();
  return out;
}

template <typename T>
Tensor<T> fold_patches(const Tensor<T>& t, Index channels, Index patch, Index h, Index w) {
  require_rank(t, 3, "fold_patches");
  const Index n = t.dim(0), gw = w / patch;
  require_shape(t, {n, (h / patch) * gw, channels * patch * patch}, "fold_patches");
  Tensor<T> out({n, channels, h, w});
  for (Index i = 0; i < n; ++i)
    for (Index tok = 0; tok < t.dim(1); ++tok) {
      const Index py = tok / gw, px = tok % gw;
      const T* src = t.data() + (i * t.dim(1) + tok) * t.dim(2);
      for (Index c = 0; c < channels; ++c)
        for (Index iy = 0; iy < patch; ++iy)
          for (Index ix = 0; ix < patch; ++ix)
            out(i, c, py * patch + iy, px * patch + ix) = src[(c * patch + iy) * patch + ix];
    }
  return out;
}

template <typename T>
Tensor<T> unfold_patches(const Tensor<T>& x, Index patch) {
  require_rank(x, 4, "unfold_patches");
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), gw = w / patch;
  const Index l = (h / patch) * gw, f = c * patch * patch;
  Tensor<T> out({n, l, f});
  for (Index i = 0; i < n; ++i)
    for (Index tok = 0; tok < l; ++tok) {
      const Index py = tok / gw, px = tok % gw;
      T* dst = out.data() + (i * l + tok) * f;
      for (Index ch = 0; ch < c; ++ch)
        for (Index iy = 0; iy < patch; ++iy)
          for (Index ix = 0; ix < patch; ++ix) dst[(ch * patch + iy) * patch + ix] = x(i, ch, py * patch + iy, px * patch + ix);
    }
  return out;
}

// ---------------------------------------------------------------- Generator

namespace {

Rng make_rng(std::uint64_t seed, const char* tag) { return Rng(derive_seed(seed, tag)); }

}  // namespace

template <typename T>
Generator<T>::Generator(const GeneratorConfig& cfg, std::uint64_t seed)
    : cfg_((cfg.validate(), cfg)),
      pos_embed_("gen.pos_embed", {cfg.tokens(), cfg.embed_dim}),
      encoder_norm_("gen.encoder_norm", cfg.embed_dim),
      input_channels_(cfg.input_slices) {
  Rng rng = make_rng(seed, "gen");
  patch_embed_ = std::make_unique<nn::Conv2d<T>>(
      "gen.patch_embed", ConvOptions{cfg.input_slices, cfg.embed_dim, cfg.patch_size, cfg.patch_size, 0}, rng);
  unpatch_ = std::make_unique<nn::Linear<T>>("gen.unpatch", cfg.embed_dim,
                                             cfg.base_channels * cfg.patch_size * cfg.patch_size, rng);
  std::normal_distribution<double> pos(0.0, 0.02);
  for (Index i = 0; i < pos_embed_.value.size(); ++i) pos_embed_.value[i] = static_cast<T>(pos(rng));
  for (Index l = 0; l < cfg.n_encoder_layers; ++l)
    encoder_.push_back(std::make_unique<nn::TransformerBlock<T>>("gen.encoder." + std::to_string(l), cfg.embed_dim,
                                                                 cfg.n_attention_heads, cfg.mlp_ratio, rng));
  const Index c = cfg.base_channels;
  decoder_.template add<nn::Conv2d<T>>("gen.stem", ConvOptions{c + cfg.input_slices, c, 3, 1, 1}, rng);
  decoder_.template add<nn::Elementwise<T>>(Activation::ReLU);
  for (Index b = 0; b < cfg.n_resnet_blocks; ++b)
    decoder_.template add<nn::ResidualBlock<T>>("gen.res." + std::to_string(b), c, rng);
  decoder_.template add<nn::Conv2d<T>>("gen.head", ConvOptions{c, 1, 3, 1, 1}, rng);
  decoder_.template add<nn::Elementwise<T>>(Activation::Softplus);
}

template <typename T>
Tensor<T> Generator<T>::forward(const Tensor<T>& x) {
  require_rank(x, 4, "generator");
  if (x.dim(1) != cfg_.input_slices || x.dim(2) != cfg_.height || x.dim(3) != cfg_.width)
    throw ShapeError("generator: expected (N, " + std::to_string(cfg_.input_slices) + ", " + std::to_string(cfg_.height) +
                     ", " + std::to_string(cfg_.width) + "), got " + to_string(x.shape()));
  const Index n = x.dim(0), gh = cfg_.height / cfg_.patch_size, gw = cfg_.width / cfg_.patch_size;
  Tensor<T> tokens = to_tokens(patch_embed_->forward(x));
  for (Index i = 0; i < n; ++i) tokens.matrix(gh * gw, cfg_.embed_dim, i * gh * gw * cfg_.embed_dim) += pos_embed_.value.matrix(gh * gw, cfg_.embed_dim);
  for (auto& block : encoder_) tokens = block->forward(tokens);
  tokens = encoder_norm_.forward(tokens);
  const Tensor<T> spatial =
      fold_patches(unpatch_->forward(tokens), cfg_.base_channels, cfg_.patch_size, cfg_.height, cfg_.width);
  return decoder_.forward(concat_channels(spatial, x));
}

template <typename T>
Tensor<T> Generator<T>::backward(const Tensor<T>& grad_out) {
  const Index gh = cfg_.height / cfg_.patch_size, gw = cfg_.width / cfg_.patch_size;
  const Tensor<T> d_cat = decoder_.backward(grad_out);
  Tensor<T> dx = slice_channels(d_cat, cfg_.base_channels, cfg_.input_slices);
  const Tensor<T> d_spatial = slice_channels(d_cat, 0, cfg_.base_channels);
  Tensor<T> d_tokens = unpatch_->backward(unfold_patches(d_spatial, cfg_.patch_size));
  d_tokens = encoder_norm_.backward(d_tokens);
  for (auto it = encoder_.rbegin(); it != encoder_.rend(); ++it) d_tokens = (*it)->backward(d_tokens);
  if (pos_embed_.trainable) {
    const Index l = gh * gw, e = cfg_.embed_dim;
    for (Index i = 0; i < d_tokens.dim(0); ++i) pos_embed_.grad.matrix(l, e) += d_tokens.matrix(l, e, i * l * e);
  }
  dx.array() += patch_embed_->backward(from_tokens(d_tokens, gh, gw)).array();
  return dx;
}

template <typename T>
void Generator<T>::collect_params(std::vector<nn::Param<T>*>& out) {
  patch_embed_->collect_params(out);
  out.push_back(&pos_embed_);
  for (auto& block : encoder_) block->collect_params(out);
  encoder_norm_.collect_params(out);
  unpatch_->collect_params(out);
  decoder_.collect_params(out);
}

Image generator_forward(Generator<float>& gen, const SliceWindow& window) {
  const auto& cfg = gen.config();
  if (window.count() != cfg.input_slices)
    throw ShapeError("generator_forward: window has " + std::to_string(window.count()) + " slices, generator expects " +
                     std::to_string(cfg.input_slices));
  return tensor_to_images(gen.forward(to_tensor<float>({window}))).front();
}

// ---------------------------------------------------------------- Discriminator

template <typename T>
Discriminator<T>::Discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = make_rng(seed, "disc");
  const Index b = cfg.base_channels;
  struct Row {
    Index in, out, stride;
    bool act;
  };
  const Row table[] = {{2, b, 2, true}, {b, 2 * b, 2, true}, {2 * b, 4 * b, 2, true}, {4 * b, 8 * b, 1, true}, {8 * b, 1, 1, false}};
  int i = 1;
  for (const auto& row : table) {
    net_.template add<nn::Conv2d<T>>("disc.c" + std::to_string(i++), ConvOptions{row.in, row.out, 4, row.stride, 1}, rng);
    if (row.act) net_.template add<nn::Elementwise<T>>(Activation::LeakyReLU, 0.2);
  }
}

template <typename T>
Index Discriminator<T>::score_extent(Index input_extent) {
  Index e = input_extent;
  for (Index stride : {2, 2, 2, 1, 1}) e = (e + 2 - 4) / stride + 1;
  return e;
}

template <typename T>
Tensor<T> Discriminator<T>::forward(const Tensor<T>& condition, const Tensor<T>& candidate) {
  if (condition.shape() != candidate.shape() || condition.rank() != 4 || condition.dim(1) != 1)
    throw ShapeError("discriminator: condition " + to_string(condition.shape()) + " and candidate " +
                     to_string(candidate.shape()) + " must both be (N, 1, H, W)");
  return net_.forward(concat_channels(condition, candidate));
}

template <typename T>
Tensor<T> Discriminator<T>::backward(const Tensor<T>& grad_scores) {
  return slice_channels(net_.backward(grad_scores), 1, 1);
}

// ---------------------------------------------------------------- perceptual encoders

template <typename T>
PerceptualEncoder<T>::PerceptualEncoder(VggTopology topology, Index width_divisor, std::uint64_t seed)
    : topology_(topology) {
  if (width_divisor < 1 || 64 % width_divisor != 0)
    throw ConfigError("perceptual.width_divisor: must divide 64, got " + std::to_string(width_divisor));
  const std::string prefix = topology == VggTopology::Vgg16 ? "vgg16" : "vgg19";
  Rng rng = make_rng(seed, prefix.c_str());
  const Index widths[] = {64 / width_divisor, 128 / width_divisor, 256 / width_divisor};
  const int convs_per_block[] = {2, 2, topology == VggTopology::Vgg16 ? 3 : 4};
  Index in = 3;
  for (int block = 0; block < 3; ++block) {
    if (block > 0) net_.template add<nn::MaxPool2<T>>();
    for (int c = 0; c < convs_per_block[block]; ++c) {
      const std::string name = prefix + ".conv" + std::to_string(block + 1) + "_" + std::to_string(c + 1);
      net_.template add<nn::Conv2d<T>>(name, ConvOptions{in, widths[block], 3, 1, 1, true, nn::Init::HeNormal}, rng);
      net_.template add<nn::Elementwise<T>>(Activation::ReLU);
      in = widths[block];
    }
  }
  this->set_trainable(false);
}

template <typename T>
Tensor<T> PerceptualEncoder<T>::forward(const Tensor<T>& x) {
  require_rank(x, 4, "perceptual encoder");
  if (x.dim(1) != 1) throw ShapeError("perceptual encoder: expected single-channel input");
  if (x.dim(2) < 4 || x.dim(3) < 4 || x.dim(2) % 4 != 0 || x.dim(3) % 4 != 0)
    throw ShapeError("perceptual encoder: H and W must be multiples of 4, got " + to_string(x.shape()));
  return net_.forward(concat_channels(concat_channels(x, x), x));
}

template <typename T>
Tensor<T> PerceptualEncoder<T>::backward(const Tensor<T>& grad_features) {
  const Tensor<T> g3 = net_.backward(grad_features);
  Tensor<T> dx = slice_channels(g3, 0, 1);
  dx.array() += slice_channels(g3, 1, 1).array() + slice_channels(g3, 2, 1).array();
  return dx;
}

template <typename T>
PerceptualPair<T>::PerceptualPair(const PerceptualConfig& cfg, std::uint64_t seed)
    : vgg16(VggTopology::Vgg16, cfg.width_divisor, seed), vgg19(VggTopology::Vgg19, cfg.width_divisor, seed) {
  if (!cfg.weights_path.empty()) {
    const auto ckpt = nn::read_checkpoint(cfg.weights_path);
    ckpt.restore(vgg16);
    ckpt.restore(vgg19);
  }
  vgg16.set_trainable(false);
  vgg19.set_trainable(false);
}

template <typename T>
double perceptual_loss(PerceptualPair<T>& enc, const Tensor<T>& y, const Tensor<T>& g, double eps, Tensor<T>* grad_g) {
  if (y.shape() != g.shape()) throw ShapeError("perceptual_loss: y and g shapes differ");
  double total = 0.0;
  if (grad_g) *grad_g = Tensor<T>(g.shape());
  for (auto* e : {&enc.vgg16, &enc.vgg19}) {
    const Tensor<T> fy = e->forward(y);
    const Tensor<T> fg = e->forward(g);
    total += charbonnier_loss(fg.array(), fy.array(), eps);
    if (grad_g) {
      const Tensor<T> d(fg.shape(), charbonnier_gradient(fg.array(), fy.array(), eps));
      grad_g->array() += e->backward(d).array();
    }
  }
  return total;
}

template class Generator<float>;
template class Generator<double>;
template class Discriminator<float>;
template class Discriminator<double>;
template class PerceptualEncoder<float>;
template class PerceptualEncoder<double>;
template struct PerceptualPair<float>;
template struct PerceptualPair<double>;
template double perceptual_loss<float>(PerceptualPair<float>&, const Tensor<float>&, const Tensor<float>&, double,
                                       Tensor<float>*);
template double perceptual_loss<double>(PerceptualPair<double>&, const Tensor<double>&, const Tensor<double>&, double,
                                        Tensor<double>*);
template Tensor<float> to_tokens(const Tensor<float>&);
template Tensor<double> to_tokens(const Tensor<double>&);
template Tensor<float> from_tokens(const Tensor<float>&, Index, Index);
template Tensor<double> from_tokens(const Tensor<double>&, Index, Index);
template Tensor<float> fold_patches(const Tensor<float>&, Index, Index, Index, Index);
template Tensor<double> fold_patches(const Tensor<double>&, Index, Index, Index, Index);
template Tensor<float> unfold_patches(const Tensor<float>&, Index);
template Tensor<double> unfold_patches(const Tensor<double>&, Index);

// ---------------------------------------------------------------- config JSON

nlohmann::json to_json(const GeneratorConfig& c) {
  return {{"height", c.height},
          {"width", c.width},
          {"input_slices", c.input_slices},
          {"patch_size", c.patch_size},
          {"embed_dim", c.embed_dim},
          {"n_attention_heads", c.n_attention_heads},
          {"n_encoder_layers", c.n_encoder_layers},
          {"mlp_ratio", c.mlp_ratio},
          {"n_resnet_blocks", c.n_resnet_blocks},
          {"base_channels", c.base_channels}};
}

nlohmann::json to_json(const DiscriminatorConfig& c) { return {{"base_channels", c.base_channels}}; }

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  c.height = j.at("height");
  c.width = j.at("width");
  c.input_slices = j.at("input_slices");
  c.patch_size = j.at("patch_size");
  c.embed_dim = j.at("embed_dim");
  c.n_attention_heads = j.at("n_attention_heads");
  c.n_encoder_layers = j.at("n_encoder_layers");
  c.mlp_ratio = j.at("mlp_ratio");
  c.n_resnet_blocks = j.at("n_resnet_blocks");
  c.base_channels = j.at("base_channels");
}

void from_json(const nlohmann::json& j, DiscriminatorConfig& c) { c.base_channels = j.at("base_channels"); }

}  // namespace petrec
