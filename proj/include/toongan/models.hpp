#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "toongan/errors.hpp"
#include "toongan/layers.hpp"
#include "toongan/random.hpp"

namespace toongan {

/// Widths are config values; the defaults are the published architecture.
struct GeneratorConfig {
  std::size_t base = 64;  // flat block width; down blocks use 2x and 4x
  std::size_t residual_blocks = 8;
  std::size_t flat_kernel = 7;

  void validate() const {
    if (base < 1) throw ConfigError("generator base width must be >= 1");
    if (flat_kernel < 1 || flat_kernel % 2 == 0) throw ConfigError("generator flat kernel must be odd");
  }
};

struct DiscriminatorConfig {
  std::size_t base = 32;  // flat width; down blocks reach 2x, 4x, 8x

  void validate() const {
    if (base < 1) throw ConfigError("discriminator base width must be >= 1");
  }
};

namespace detail {

template <typename T>
std::unique_ptr<Conv2d<T>> conv(std::size_t in, std::size_t k, std::size_t n, std::size_t s, Rng& rng) {
  return std::make_unique<Conv2d<T>>(in, ConvSpec{k, n, s, k / 2, 0, true}, rng);
}

/// Convolution feeding a norm layer. A bias there is cancelled by the mean
/// subtraction, so it is left out.
template <typename T>
std::unique_ptr<Conv2d<T>> conv_nb(std::size_t in, std::size_t k, std::size_t n, std::size_t s, Rng& rng) {
  return std::make_unique<Conv2d<T>>(in, ConvSpec{k, n, s, k / 2, 0, false}, rng);
}

}  // namespace detail

/// Photo -> cartoon generator. The spine is flat, down1, down2, res1..resN,
/// up1, up2, final; with 8 residual blocks that is 14 blocks.
template <typename T>
class Generator final : public Layer<T> {
 public:
  explicit Generator(const GeneratorConfig& cfg = {}, std::uint64_t seed = 42) : cfg_(cfg) {
    cfg.validate();
    Rng rng(derive_seed(seed, "generator"));
    const std::size_t b = cfg.base;
    using detail::conv;
    using detail::conv_nb;

    auto flat = std::make_unique<Sequential<T>>();
    flat->add("conv", conv_nb<T>(3, cfg.flat_kernel, b, 1, rng));
    flat->add("norm", std::make_unique<BatchNorm2d<T>>(b));
    flat->add("relu", std::make_unique<Activation<T>>(ActivationKind::relu));
    spine_.add("flat", std::move(flat));

    std::size_t ch = b;
    for (int i = 1; i <= 2; ++i) {
      auto down = std::make_unique<Sequential<T>>();
      down->add("conv_s2", conv<T>(ch, 3, 2 * ch, 2, rng));
      down->add("conv", conv_nb<T>(2 * ch, 3, 2 * ch, 1, rng));
      down->add("norm", std::make_unique<BatchNorm2d<T>>(2 * ch));
      down->add("relu", std::make_unique<Activation<T>>(ActivationKind::relu));
      spine_.add("down" + std::to_string(i), std::move(down));
      ch *= 2;
    }

    for (std::size_t i = 1; i <= cfg.residual_blocks; ++i) {
      auto body = std::make_unique<Sequential<T>>();
      body->add("conv1", conv_nb<T>(ch, 3, ch, 1, rng));
      body->add("norm1", std::make_unique<BatchNorm2d<T>>(ch));
      body->add("relu", std::make_unique<Activation<T>>(ActivationKind::relu));
      body->add("conv2", conv_nb<T>(ch, 3, ch, 1, rng));
      body->add("norm2", std::make_unique<BatchNorm2d<T>>(ch));
      spine_.add("res" + std::to_string(i), std::make_unique<Residual<T>>(std::move(body)));
    }

    for (int i = 1; i <= 2; ++i) {
      auto up = std::make_unique<Sequential<T>>();
      up->add("deconv", std::make_unique<ConvTranspose2d<T>>(ch, ConvSpec{3, ch / 2, 2, 1, 1}, rng));
      up->add("conv", conv_nb<T>(ch / 2, 3, ch / 2, 1, rng));
      up->add("norm", std::make_unique<BatchNorm2d<T>>(ch / 2));
      up->add("relu", std::make_unique<Activation<T>>(ActivationKind::relu));
      spine_.add("up" + std::to_string(i), std::move(up));
      ch /= 2;
    }

    spine_.add("final", conv<T>(ch, cfg.flat_kernel, 3, 1, rng));
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override {
    const Shape& s = x.shape();
    if (s.c != 3) throw ShapeError("generator expects 3 input channels, got " + s.str());
    if (s.h % 4 != 0 || s.w % 4 != 0) throw ShapeError("generator input H and W must be divisible by 4, got " + s.str());
    return spine_.forward(x, mode);
  }

  BasicTensor<T> backward(const BasicTensor<T>& gy) override { return spine_.backward(gy); }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override { spine_.visit(prefix, v); }

  std::string kind() const override { return "generator"; }

  const GeneratorConfig& config() const { return cfg_; }
  Sequential<T>& spine() { return spine_; }
  std::size_t spine_block_count() const { return spine_.size(); }

  Residual<T>& residual(std::size_t i) { return dynamic_cast<Residual<T>&>(spine_.at(3 + i)); }

 private:
  GeneratorConfig cfg_;
  Sequential<T> spine_;
};

/// Fully convolutional patch discriminator: flat, down1, down2, feature, final.
/// Output is N x 1 x ceil(H/4) x ceil(W/4) patch logits.
template <typename T>
class Discriminator final : public Layer<T> {
 public:
  explicit Discriminator(const DiscriminatorConfig& cfg = {}, std::uint64_t seed = 42) : cfg_(cfg) {
    cfg.validate();
    Rng rng(derive_seed(seed, "discriminator"));
    const std::size_t b = cfg.base;
    using detail::conv;
    using detail::conv_nb;
    const auto lrelu = [] { return std::make_unique<Activation<T>>(ActivationKind::lrelu); };

    auto flat = std::make_unique<Sequential<T>>();
    flat->add("conv", conv<T>(3, 3, b, 1, rng));
    flat->add("lrelu", lrelu());
    blocks_.add("flat", std::move(flat));

    // down1: b -> 2b -> 4b, down2: 4b -> 4b -> 8b
    std::size_t ch = b;
    for (std::size_t i = 1; i <= 2; ++i) {
      const std::size_t mid = 2 * i * b, out = 4 * i * b;
      auto down = std::make_unique<Sequential<T>>();
      down->add("conv_s2", conv<T>(ch, 3, mid, 2, rng));
      down->add("conv", conv_nb<T>(mid, 3, out, 1, rng));
      down->add("norm", std::make_unique<BatchNorm2d<T>>(out));
      down->add("lrelu", lrelu());
      blocks_.add("down" + std::to_string(i), std::move(down));
      ch = out;
    }

    auto feature = std::make_unique<Sequential<T>>();
    feature->add("conv", conv_nb<T>(ch, 3, ch, 1, rng));
    feature->add("norm", std::make_unique<BatchNorm2d<T>>(ch));
    feature->add("lrelu", lrelu());
    blocks_.add("feature", std::move(feature));

    blocks_.add("final", conv<T>(ch, 3, 1, 1, rng));
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override {
    if (x.shape().c != 3) throw ShapeError("discriminator expects 3 input channels, got " + x.shape().str());
    return blocks_.forward(x, mode);
  }

  BasicTensor<T> backward(const BasicTensor<T>& gy) override { return blocks_.backward(gy); }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override { blocks_.visit(prefix, v); }

  std::string kind() const override { return "discriminator"; }

  const DiscriminatorConfig& config() const { return cfg_; }
  Sequential<T>& blocks() { return blocks_; }

 private:
  DiscriminatorConfig cfg_;
  Sequential<T> blocks_;
};

}  // namespace toongan
