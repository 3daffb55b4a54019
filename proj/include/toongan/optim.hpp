#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "toongan/errors.hpp"
#include "toongan/layers.hpp"

namespace toongan {

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// One decoupled-weight-decay Adam update. The gradient is left in place;
/// callers zero it before the next accumulation.
template <typename T>
void adamw_step(Parameter<T>& p, double lr, const AdamWOptions& opt = {}) {
  if (!p.grad.all_finite()) {
    throw NumericError("adamw: non-finite gradient in parameter '" + (p.name.empty() ? "<unnamed>" : p.name) + "'");
  }
  p.step_count += 1;
  const double t = static_cast<double>(p.step_count);
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double g = p.grad[i];
    const double m = opt.beta1 * p.m[i] + (1.0 - opt.beta1) * g;
    const double v = opt.beta2 * p.v[i] + (1.0 - opt.beta2) * g * g;
    p.m[i] = static_cast<T>(m);
    p.v[i] = static_cast<T>(v);
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    const double w = p.value[i];
    p.value[i] = static_cast<T>(w - lr * (m_hat / (std::sqrt(v_hat) + opt.eps)) - lr * opt.weight_decay * w);
  }
}

/// Triangular cyclic learning-rate policy.
struct LrSchedule {
  double base_lr = 1e-3;
  double max_lr = 1e-2;
  std::uint64_t half_cycle = 1;

  void validate() const {
    if (!(base_lr > 0.0) || !(base_lr <= max_lr)) throw ConfigError("lr schedule requires 0 < base_lr <= max_lr");
    if (half_cycle < 1) throw ConfigError("lr schedule requires half_cycle >= 1");
  }
};

/// Rises linearly from base_lr to max_lr over half_cycle steps, falls back
/// over the next half_cycle, and repeats.
inline double cyclic_lr(std::uint64_t t, const LrSchedule& s) {
  const std::uint64_t period = 2 * s.half_cycle;
  const std::uint64_t phase = t % period;
  const std::uint64_t dist = phase <= s.half_cycle ? phase : period - phase;
  if (dist == s.half_cycle) return s.max_lr;
  const double frac = static_cast<double>(dist) / static_cast<double>(s.half_cycle);
  return std::min(s.max_lr, s.base_lr + (s.max_lr - s.base_lr) * frac);
}

}  // namespace toongan
