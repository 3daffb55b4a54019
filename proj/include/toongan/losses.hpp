#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>

#include "toongan/errors.hpp"
#include "toongan/kink.hpp"
#include "toongan/layers.hpp"
#include "toongan/random.hpp"

namespace toongan {

struct LossWeights {
  double omega = 10.0;
  // Discriminator terms on cartoons, edge-smoothed cartoons and generated images.
  double real = 1.0;
  double edge = 1.0;
  double fake = 1.0;

  void validate() const {
    if (!(omega >= 0.0) || !std::isfinite(omega)) throw ConfigError("omega must be finite and >= 0");
    for (double w : {real, edge, fake})
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("discriminator term weights must be finite and >= 0");
  }
};

/// log(1 + e^x) without overflow.
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Mean binary cross-entropy of logits against a constant target (0 or 1).
/// When `grad` is given it receives d(loss)/d(logits) scaled by `scale`.
template <typename T>
double bce_logits(const BasicTensor<T>& logits, int target, BasicTensor<T>* grad = nullptr, double scale = 1.0) {
  if (target != 0 && target != 1) throw ConfigError("bce target must be 0 or 1");
  if (!logits.all_finite()) throw NumericError("bce_logits: non-finite logits");
  const double inv_n = 1.0 / static_cast<double>(logits.size());
  if (grad) *grad = BasicTensor<T>(logits.shape());
  double acc = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = logits[i];
    acc += target == 1 ? softplus(-z) : softplus(z);
    if (grad) (*grad)[i] = static_cast<T>(scale * inv_n * (sigmoid(z) - target));
  }
  return acc * inv_n;
}

template <typename T>
struct DiscriminatorLoss {
  double total = 0.0;
  double real = 0.0;  // cartoons labelled 1
  double edge = 0.0;  // edge-smoothed cartoons labelled 0
  double fake = 0.0;  // generated images labelled 0
  BasicTensor<T> grad_real, grad_edge, grad_fake;
};

/// Discriminator objective over the three populations. Gradients are with
/// respect to each logit map.
template <typename T>
DiscriminatorLoss<T> adversarial_loss_d(const BasicTensor<T>& d_c, const BasicTensor<T>& d_e,
                                        const BasicTensor<T>& d_gp, const LossWeights& w = {}) {
  d_c.require_same_shape(d_e, "adversarial_loss_d");
  d_c.require_same_shape(d_gp, "adversarial_loss_d");
  DiscriminatorLoss<T> out;
  out.real = bce_logits(d_c, 1, &out.grad_real, w.real);
  out.edge = bce_logits(d_e, 0, &out.grad_edge, w.edge);
  out.fake = bce_logits(d_gp, 0, &out.grad_fake, w.fake);
  out.total = w.real * out.real + w.edge * out.edge + w.fake * out.fake;
  return out;
}

/// Non-saturating generator objective: the fakes should be called real.
template <typename T>
double adversarial_loss_g(const BasicTensor<T>& d_gp, BasicTensor<T>* grad = nullptr) {
  return bce_logits(d_gp, 1, grad);
}

/// Generator objective: adversarial loss plus omega times content loss.
inline double total_loss(double adv, double con, const LossWeights& w) { return adv + w.omega * con; }

struct FeatureExtractorConfig {
  std::size_t base = 32;  // stage widths base, 2x, 4x, 8x

  void validate() const {
    if (base < 1) throw ConfigError("feature extractor base width must be >= 1");
  }
};

/// Frozen content network: four 3x3 conv + leaky ReLU stages with strides
/// 1, 2, 2, 2. Weights are seeded Kaiming draws unless restored from a checkpoint.
template <typename T>
class FeatureExtractor final : public Layer<T> {
 public:
  explicit FeatureExtractor(const FeatureExtractorConfig& cfg = {}, std::uint64_t seed = 42) : cfg_(cfg) {
    cfg.validate();
    Rng rng(derive_seed(seed, "features"));
    std::size_t in = 3;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t out = cfg.base << i;
      auto stage = std::make_unique<Sequential<T>>();
      stage->add("conv", std::make_unique<Conv2d<T>>(in, ConvSpec{3, out, i == 0 ? 1u : 2u, 1, 0, true}, rng));
      stage->add("lrelu", std::make_unique<Activation<T>>(ActivationKind::lrelu));
      stages_.add("stage" + std::to_string(i + 1), std::move(stage));
      in = out;
    }
    set_frozen(stages_, true);
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override { return stages_.forward(x, mode); }
  BasicTensor<T> backward(const BasicTensor<T>& gy) override { return stages_.backward(gy); }
  void visit(const std::string& prefix, const StateVisitor<T>& v) override { stages_.visit(prefix, v); }
  std::string kind() const override { return "feature_extractor"; }

  const FeatureExtractorConfig& config() const { return cfg_; }

 private:
  FeatureExtractorConfig cfg_;
  Sequential<T> stages_;
};

/// Mean absolute difference between f(p) and f(gp). With `grad_gp`, also the
/// gradient with respect to gp (subgradient 0 where the features coincide).
template <typename T>
double content_loss(Layer<T>& f, const BasicTensor<T>& p, const BasicTensor<T>& gp, BasicTensor<T>* grad_gp = nullptr,
                    double scale = 1.0) {
  p.require_same_shape(gp, "content_loss");
  const BasicTensor<T> fp = f.forward(p, Mode::eval);
  const BasicTensor<T> fg = f.forward(gp, Mode::eval);  // cached for backward
  const double inv_n = 1.0 / static_cast<double>(fg.size());
  BasicTensor<T> g;
  if (grad_gp) g = BasicTensor<T>(fg.shape());
  const bool monitor = KinkMonitor::active();
  double acc = 0.0;
  for (std::size_t i = 0; i < fg.size(); ++i) {
    const double d = static_cast<double>(fg[i]) - static_cast<double>(fp[i]);
    acc += std::abs(d);
    if (monitor) KinkMonitor::observe(d >= 0.0);
    if (grad_gp) g[i] = static_cast<T>(d > 0.0 ? scale * inv_n : d < 0.0 ? -scale * inv_n : 0.0);
  }
  if (!std::isfinite(acc)) throw NumericError("content_loss: non-finite features");
  if (grad_gp) *grad_gp = f.backward(g);
  return acc * inv_n;
}

}  // namespace toongan
