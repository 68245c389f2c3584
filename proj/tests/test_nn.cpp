#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "petrec/nn/adam.hpp"
#include "petrec/nn/attention.hpp"
#include "petrec/nn/checkpoint.hpp"
#include "petrec/nn/layers.hpp"
#include "support.hpp"

using namespace petrec;
using petrec::test::layer_gradient_error;
using petrec::test::random_tensor;

TEST_CASE("conv2d matches a direct convolution loop") {
  Rng rng(1);
  nn::Conv2d<double> conv("c", {2, 3, 3, 2, 1}, rng);
  const auto x = random_tensor({2, 2, 7, 6}, rng);
  const auto y = conv.forward(x);
  CHECK(y.shape() == Shape{2, 3, 4, 3});
  double worst = 0.0;
  for (Index n = 0; n < 2; ++n)
    for (Index o = 0; o < 3; ++o)
      for (Index oy = 0; oy < 4; ++oy)
        for (Index ox = 0; ox < 3; ++ox) {
          double acc = conv.bias().value[o];
          for (Index c = 0; c < 2; ++c)
            for (Index ky = 0; ky < 3; ++ky)
              for (Index kx = 0; kx < 3; ++kx) {
                const Index iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
                acc += conv.weight().value[((o * 2 + c) * 3 + ky) * 3 + kx] * x(n, c, iy, ix);
              }
          worst = std::max(worst, std::abs(acc - y(n, o, oy, ox)));
        }
  CHECK(worst < 1e-12);
}

TEST_CASE("layer gradients match central differences") {
  Rng rng(2);
  SUBCASE("conv stride 1") {
    nn::Conv2d<double> l("c", {2, 3, 3, 1, 1}, rng);
    CHECK(layer_gradient_error(l, random_tensor({2, 2, 5, 5}, rng), rng) < 1e-6);
  }
  SUBCASE("conv stride 2 kernel 4") {
    nn::Conv2d<double> l("c", {2, 2, 4, 2, 1}, rng);
    CHECK(layer_gradient_error(l, random_tensor({1, 2, 8, 8}, rng), rng) < 1e-6);
  }
  SUBCASE("linear") {
    nn::Linear<double> l("l", 5, 4, rng);
    CHECK(layer_gradient_error(l, random_tensor({2, 3, 5}, rng), rng) < 1e-6);
  }
  SUBCASE("layer norm") {
    nn::LayerNorm<double> l("ln", 6);
    CHECK(layer_gradient_error(l, random_tensor({2, 3, 6}, rng), rng) < 1e-6);
  }
  SUBCASE("activations") {
    for (auto kind : {nn::Activation::ReLU, nn::Activation::LeakyReLU, nn::Activation::GELU, nn::Activation::Softplus}) {
      nn::Elementwise<double> l(kind);
      CHECK(layer_gradient_error(l, random_tensor({1, 2, 4, 4}, rng), rng) < 1e-6);
    }
  }
  SUBCASE("pooling and upsampling") {
    nn::MaxPool2<double> p;
    CHECK(layer_gradient_error(p, random_tensor({1, 2, 6, 4}, rng), rng) < 1e-6);
    nn::Upsample2<double> u;
    CHECK(layer_gradient_error(u, random_tensor({1, 2, 3, 2}, rng), rng) < 1e-6);
  }
  SUBCASE("residual block") {
    nn::ResidualBlock<double> l("r", 3, rng);
    CHECK(layer_gradient_error(l, random_tensor({1, 3, 5, 5}, rng), rng) < 1e-6);
  }
  SUBCASE("multi-head attention") {
    nn::MultiHeadSelfAttention<double> l("a", 8, 2, rng);
    CHECK(layer_gradient_error(l, random_tensor({2, 5, 8}, rng), rng) < 1e-6);
  }
  SUBCASE("transformer block") {
    nn::TransformerBlock<double> l("t", 8, 4, 2, rng);
    CHECK(layer_gradient_error(l, random_tensor({1, 6, 8}, rng), rng) < 1e-6);
  }
}

TEST_CASE("attention rows are probability distributions") {
  Rng rng(3);
  nn::MultiHeadSelfAttention<double> l("a", 8, 2, rng);
  l.forward(random_tensor({2, 5, 8}, rng));
  REQUIRE(l.attention().size() == 4);
  for (const auto& a : l.attention()) {
    CHECK((a.array() >= 0.0).all());
    CHECK((a.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("parameter counting") {
  Rng rng(4);
  nn::Conv2d<float> conv("c", {1, 8, 3, 1, 1}, rng);
  CHECK(nn::count_parameters(conv) == 80);
  conv.set_trainable(false);
  CHECK(nn::count_parameters(conv) == 0);
}

TEST_CASE("adam minimises a quadratic and skips frozen parameters") {
  nn::Param<double> p("p", {3});
  p.value.array() << 1.0, -2.0, 3.0;
  nn::Param<double> frozen("f", {1});
  frozen.value[0] = 5.0;
  frozen.trainable = false;
  nn::Adam<double> opt({&p, &frozen}, {0.05, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    p.grad.array() = 2.0 * p.value.array();
    frozen.grad[0] = 1.0;
    opt.step();
  }
  CHECK(p.value.array().abs().maxCoeff() < 1e-2);
  CHECK(frozen.value[0] == 5.0);
}

TEST_CASE("checkpoint round trip and error reporting") {
  Rng rng(5);
  nn::Sequential<float> net;
  net.add<nn::Conv2d<float>>("a", nn::ConvOptions{1, 2, 3, 1, 1}, rng);
  net.add<nn::Linear<float>>("b", 4, 3, rng);
  const auto dir = std::filesystem::temp_directory_path() / "petrec_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = dir / "m.ckpt";
  nn::write_checkpoint(path, nn::Checkpoint::capture(net, {{"note", "x"}}));

  Rng other(99);
  nn::Sequential<float> copy;
  copy.add<nn::Conv2d<float>>("a", nn::ConvOptions{1, 2, 3, 1, 1}, other);
  copy.add<nn::Linear<float>>("b", 4, 3, other);
  const auto ckpt = nn::read_checkpoint(path);
  CHECK(ckpt.meta.at("note") == "x");
  ckpt.restore(copy);
  const auto a = net.params(), b = copy.params();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK((a[i]->value.array() == b[i]->value.array()).all());

  nn::Sequential<float> wrong;
  wrong.add<nn::Conv2d<float>>("a", nn::ConvOptions{1, 3, 3, 1, 1}, other);
  CHECK_THROWS_AS(ckpt.restore(wrong), nn::CheckpointError);

  // Truncate the payload.
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 4);
  CHECK_THROWS_WITH_AS(nn::read_checkpoint(path), doctest::Contains("truncated"), nn::CheckpointError);
  std::ofstream(path) << "{\"magic\":\"NOPE\"}\n";
  CHECK_THROWS_WITH_AS(nn::read_checkpoint(path), doctest::Contains("magic"), nn::CheckpointError);
}
