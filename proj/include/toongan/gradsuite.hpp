#pragma once

// The standard gradient suite: every differentiable layer and the three
// training objectives through tiny networks, float32 analytic gradients
// against float64 central differences of an identical twin.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "toongan/gradcheck.hpp"
#include "toongan/layers.hpp"
#include "toongan/losses.hpp"
#include "toongan/models.hpp"

namespace toongan::gradsuite {

/// Finite-difference step for the float32-vs-float64 twin checks. The twin has
/// no rounding floor worth mentioning here, and the eps^2 truncation term stays
/// far below the tolerance even on small coordinates of composite networks.
inline constexpr double kTwinEpsilon = 1e-4;
inline constexpr double kTolerance = 1e-3;

template <typename T>
BasicTensor<T> normal_tensor(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  BasicTensor<T> t(s);
  for (auto& v : t.vec()) v = static_cast<T>(static_cast<float>(rng.normal()));
  return t;
}

template <typename T>
std::vector<Parameter<T>*> named_params(Layer<T>& layer) {
  std::vector<Parameter<T>*> out;
  for (auto& [name, p] : named_parameters(layer)) {
    p->name = name;
    out.push_back(p);
  }
  return out;
}

template <typename T>
Parameter<T> input(Shape s, std::uint64_t seed, const char* name) {
  Parameter<T> p(normal_tensor<T>(s, seed));
  p.name = name;
  return p;
}

/// Float32 layer `a` against its float64 twin `b` (state copied from `a`).
/// Objective: a random projection of the output; the input is probed too.
inline GradCheckReport layer_twin(Layer<float>& a, Layer<double>& b, Shape in, Mode mode, std::uint64_t seed,
                                  GradCheckOptions opt = {}) {
  copy_state(a, b);
  Parameter<float> x32(normal_tensor<float>(in, seed));
  Parameter<double> x64(tensor_cast<double>(x32.value));
  x32.name = x64.name = "input";
  auto p32 = named_params(a);
  auto p64 = named_params(b);
  p32.push_back(&x32);
  p64.push_back(&x64);
  Tensor proj32;
  BasicTensor<double> proj64;
  const auto project = [](const auto& y, const auto& r) {
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += static_cast<double>(y[i]) * static_cast<double>(r[i]);
    return acc;
  };
  auto analytic = [&](bool with_grad) {
    Tensor y = a.forward(x32.value, mode);
    if (proj32.empty()) {
      proj32 = normal_tensor<float>(y.shape(), seed + 1000);
      proj64 = tensor_cast<double>(proj32);
    }
    const double v = project(y, proj32);
    if (with_grad) x32.grad += a.backward(proj32);
    return v;
  };
  auto numeric = [&](bool) { return project(b.forward(x64.value, mode), proj64); };
  opt.seed = seed;
  opt.epsilon = kTwinEpsilon;
  return grad_check_twin<float, double>(analytic, std::span<Parameter<float>* const>(p32), numeric,
                                        std::span<Parameter<double>* const>(p64), opt);
}

template <typename T>
std::vector<Parameter<T>*> collect(std::initializer_list<Layer<T>*> nets, std::initializer_list<Parameter<T>*> extra) {
  std::vector<Parameter<T>*> out;
  for (auto* n : nets)
    for (auto* p : named_params(*n)) out.push_back(p);
  for (auto* p : extra) out.push_back(p);
  return out;
}

// Each rig is an objective `double(bool with_grad)` over its params(); the
// float64 instance copies its state from the float32 one.

/// Discriminator objective on the concatenated three-population batch.
template <typename T>
struct DiscriminatorRig {
  Discriminator<T> d;
  Parameter<T> c, e, gp;
  explicit DiscriminatorRig(std::uint64_t seed)
      : d({.base = 2}, seed),
        c(input<T>({1, 3, 8, 8}, seed + 1, "c")),
        e(input<T>({1, 3, 8, 8}, seed + 2, "e")),
        gp(input<T>({1, 3, 8, 8}, seed + 3, "gp")) {}
  std::vector<Parameter<T>*> params() { return collect<T>({&d}, {&c, &e, &gp}); }
  template <typename U>
  void copy_from(DiscriminatorRig<U>& o) {
    copy_state(o.d, d);
  }
  double operator()(bool with_grad) {
    const BasicTensor<T> logits = d.forward(concat_batch<T>({&c.value, &e.value, &gp.value}), Mode::train);
    const auto loss = adversarial_loss_d(slice_batch(logits, 0, 1), slice_batch(logits, 1, 1), slice_batch(logits, 2, 1));
    if (with_grad) {
      const BasicTensor<T> g = d.backward(concat_batch<T>({&loss.grad_real, &loss.grad_edge, &loss.grad_fake}));
      c.grad += slice_batch(g, 0, 1);
      e.grad += slice_batch(g, 1, 1);
      gp.grad += slice_batch(g, 2, 1);
    }
    return loss.total;
  }
};

/// Generator adversarial objective: G(p) scored by D with frozen statistics.
template <typename T>
struct GeneratorAdvRig {
  Generator<T> g;
  Discriminator<T> d;
  Parameter<T> p;
  explicit GeneratorAdvRig(std::uint64_t seed)
      : g({.base = 2}, seed), d({.base = 2}, seed + 50), p(input<T>({2, 3, 8, 8}, seed + 1, "p")) {}
  std::vector<Parameter<T>*> params() { return collect<T>({&g}, {&p}); }
  template <typename U>
  void copy_from(GeneratorAdvRig<U>& o) {
    copy_state(o.g, g);
    copy_state(o.d, d);
  }
  double operator()(bool with_grad) {
    const BasicTensor<T> gp = g.forward(p.value, Mode::train);
    const BasicTensor<T> logits = d.forward(gp, Mode::train_frozen_stats);
    BasicTensor<T> gl;
    const double v = adversarial_loss_g(logits, with_grad ? &gl : nullptr);
    if (with_grad) p.grad += g.backward(d.backward(gl));
    return v;
  }
};

/// Content loss with respect to the generated batch.
template <typename T>
struct ContentRig {
  FeatureExtractor<T> f;
  Parameter<T> p, gp;
  explicit ContentRig(std::uint64_t seed)
      : f({.base = 4}, seed), p(input<T>({2, 3, 8, 8}, seed + 1, "p")), gp(input<T>({2, 3, 8, 8}, seed + 2, "gp")) {}
  std::vector<Parameter<T>*> params() { return {&gp}; }
  template <typename U>
  void copy_from(ContentRig<U>& o) {
    copy_state(o.f, f);
    p.value = tensor_cast<T>(o.p.value);
  }
  double operator()(bool with_grad) {
    BasicTensor<T> g;
    const double v = content_loss(f, p.value, gp.value, with_grad ? &g : nullptr);
    if (with_grad) gp.grad += g;
    return v;
  }
};

/// Full generator objective, adversarial + omega * content, through G.
template <typename T>
struct GeneratorTotalRig {
  Generator<T> g;
  Discriminator<T> d;
  FeatureExtractor<T> f;
  Parameter<T> p;
  explicit GeneratorTotalRig(std::uint64_t seed)
      : g({.base = 2}, seed), d({.base = 2}, seed + 50), f({.base = 2}, seed + 60), p(input<T>({2, 3, 8, 8}, seed + 1, "p")) {}
  std::vector<Parameter<T>*> params() { return collect<T>({&g}, {}); }
  template <typename U>
  void copy_from(GeneratorTotalRig<U>& o) {
    copy_state(o.g, g);
    copy_state(o.d, d);
    copy_state(o.f, f);
    p.value = tensor_cast<T>(o.p.value);
  }
  double operator()(bool with_grad) {
    const LossWeights w;
    const BasicTensor<T> gp = g.forward(p.value, Mode::train);
    const BasicTensor<T> logits = d.forward(gp, Mode::train_frozen_stats);
    BasicTensor<T> gl, gc, grad_gp;
    const double adv = adversarial_loss_g(logits, with_grad ? &gl : nullptr);
    if (with_grad) grad_gp = d.backward(gl);
    const double con = content_loss(f, p.value, gp, with_grad ? &gc : nullptr, w.omega);
    if (with_grad) {
      grad_gp += gc;
      g.backward(grad_gp);
    }
    return total_loss(adv, con, w);
  }
};

template <template <typename> class Rig>
double rig_twin(std::uint64_t seed, std::size_t probes = 30) {
  Rig<float> a(seed);
  Rig<double> b(seed);
  b.copy_from(a);
  auto pa = a.params();
  auto pb = b.params();
  for (std::size_t i = 0; i < pa.size(); ++i) pb[i]->value = tensor_cast<double>(pa[i]->value);
  GradCheckOptions opt;
  opt.seed = seed;
  opt.probe_count = probes;
  opt.epsilon = kTwinEpsilon;
  return grad_check_twin<float, double>(a, std::span<Parameter<float>* const>(pa), b,
                                        std::span<Parameter<double>* const>(pb), opt)
      .max_relative_error;
}

struct Entry {
  std::string name;
  double max_relative_error = 0.0;  // worst over all seeds
  bool passed() const { return max_relative_error <= kTolerance; }
};

/// Runs every check over seeds 1..`seeds`, input shapes at most 2x4x8x8.
inline std::vector<Entry> run(std::size_t seeds = 5, std::size_t probes = 30) {
  std::vector<std::pair<std::string, std::function<double(std::uint64_t)>>> checks;
  GradCheckOptions opt;
  opt.probe_count = probes;
  const auto layer = [&](std::string name, auto make32, auto make64, Shape in, Mode mode) {
    checks.emplace_back(std::move(name), [=](std::uint64_t seed) {
      auto a = make32(seed);
      auto b = make64(seed);
      return layer_twin(*a, *b, in, mode, seed, opt).max_relative_error;
    });
  };
  const auto conv = [](auto tag) {
    using T = decltype(tag);
    return [](std::uint64_t seed) {
      Rng rng(seed);
      return std::make_unique<Conv2d<T>>(4, ConvSpec{.k = 3, .n = 3, .s = 2, .padding = 1}, rng);
    };
  };
  const auto deconv = [](auto tag) {
    using T = decltype(tag);
    return [](std::uint64_t seed) {
      Rng rng(seed);
      return std::make_unique<ConvTranspose2d<T>>(4, ConvSpec{.k = 3, .n = 2, .s = 2, .padding = 1, .output_padding = 1}, rng);
    };
  };
  const auto bn = [](auto tag) {
    using T = decltype(tag);
    return [](std::uint64_t seed) {
      auto b = std::make_unique<BatchNorm2d<T>>(4);
      Rng rng(derive_seed(seed, "gamma"));
      for (auto& v : b->gamma().value.vec()) v = static_cast<T>(static_cast<float>(0.5 + rng.uniform()));
      return b;
    };
  };
  const auto act = [](auto tag, ActivationKind kind) {
    using T = decltype(tag);
    return [kind](std::uint64_t) { return std::make_unique<Activation<T>>(kind); };
  };
  layer("conv2d", conv(float{}), conv(double{}), {2, 4, 8, 8}, Mode::train);
  layer("conv_transpose2d", deconv(float{}), deconv(double{}), {2, 4, 4, 4}, Mode::train);
  layer("batch_norm2d", bn(float{}), bn(double{}), {2, 4, 8, 8}, Mode::train);
  layer("relu", act(float{}, ActivationKind::relu), act(double{}, ActivationKind::relu), {2, 4, 8, 8}, Mode::train);
  layer("lrelu", act(float{}, ActivationKind::lrelu), act(double{}, ActivationKind::lrelu), {2, 4, 8, 8}, Mode::train);
  checks.emplace_back("discriminator_loss", [=](std::uint64_t s) { return rig_twin<DiscriminatorRig>(s, probes); });
  checks.emplace_back("generator_adversarial_loss", [=](std::uint64_t s) { return rig_twin<GeneratorAdvRig>(s, probes); });
  checks.emplace_back("content_loss", [=](std::uint64_t s) { return rig_twin<ContentRig>(s, probes); });
  checks.emplace_back("generator_total_loss", [=](std::uint64_t s) { return rig_twin<GeneratorTotalRig>(s, probes); });

  std::vector<Entry> out;
  for (const auto& [name, fn] : checks) {
    Entry e{name, 0.0};
    for (std::uint64_t seed = 1; seed <= seeds; ++seed) e.max_relative_error = std::max(e.max_relative_error, fn(seed));
    out.push_back(e);
  }
  return out;
}

}  // namespace toongan::gradsuite
