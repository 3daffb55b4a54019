#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "toongan/errors.hpp"
#include "toongan/kink.hpp"
#include "toongan/layers.hpp"
#include "toongan/random.hpp"

namespace toongan {

struct GradCheckOptions {
  std::size_t probe_count = 20;
  double epsilon = 1e-3;
  std::uint64_t seed = 42;
  // Probes whose +-epsilon evaluations land on a different linear piece of a
  // ReLU/LReLU/|.| than the centre point are redrawn, at most this many times in total.
  std::size_t max_redraws = 200;
};

struct GradCheckProbe {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double relative_error = 0.0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t redraws = 0;
  std::vector<GradCheckProbe> probes;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace detail {

template <typename F>
double evaluate_monitored(F& f, bool with_grad, std::uint64_t& signature) {
  KinkMonitor monitor;
  double value;
  {
    KinkScope scope(monitor);
    value = f(with_grad);
  }
  if (!std::isfinite(value)) throw NumericError("grad_check: objective is not finite");
  signature = monitor.signature();
  return value;
}

}  // namespace detail

/// Checks analytic gradients of `analytic` (accumulated into `params`) against
/// central differences (f(x+e) - f(x-e)) / 2e of `numeric`, which reads the
/// coordinates of `probe_params`. The two lists correspond one-to-one; they are
/// the same objects for a same-precision check, or a higher-precision twin
/// holding identical values.
///
/// Both callables have signature `double(bool with_grad)`. With `with_grad`
/// set, `analytic` must add d f / d p into every `p->grad` (zeroed beforehand).
template <typename T, typename U, typename FA, typename FN>
GradCheckReport grad_check_twin(FA&& analytic, std::span<Parameter<T>* const> params, FN&& numeric,
                                std::span<Parameter<U>* const> probe_params, const GradCheckOptions& opt = {}) {
  if (params.empty()) throw ConfigError("grad_check: no parameters");
  if (params.size() != probe_params.size()) throw ConfigError("grad_check: parameter lists differ in length");
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k]->value.shape() != probe_params[k]->value.shape()) {
      throw ShapeError("grad_check: twin of '" + params[k]->name + "' has shape " +
                       probe_params[k]->value.shape().str());
    }
  }
  for (auto* p : params) p->zero_grad();

  std::uint64_t sig = 0;
  detail::evaluate_monitored(analytic, true, sig);
  for (auto* p : params) {
    if (!p->grad.all_finite()) throw NumericError("grad_check: non-finite analytic gradient in '" + p->name + "'");
  }
  std::uint64_t centre_sig = 0;
  detail::evaluate_monitored(numeric, false, centre_sig);

  std::size_t total = 0;
  for (auto* p : params) total += p->value.size();

  Rng rng(opt.seed);
  GradCheckReport report;
  while (report.probes.size() < opt.probe_count) {
    std::uint64_t flat = rng.below(total);
    std::size_t which = 0;
    while (flat >= params[which]->value.size()) flat -= params[which++]->value.size();
    const std::size_t i = static_cast<std::size_t>(flat);
    Parameter<U>& q = *probe_params[which];

    const U original = q.value[i];
    std::uint64_t sig_plus = 0, sig_minus = 0;
    q.value[i] = static_cast<U>(original + opt.epsilon);
    const double step_plus = static_cast<double>(q.value[i]) - original;
    const double f_plus = detail::evaluate_monitored(numeric, false, sig_plus);
    q.value[i] = static_cast<U>(original - opt.epsilon);
    const double step_minus = original - static_cast<double>(q.value[i]);
    const double f_minus = detail::evaluate_monitored(numeric, false, sig_minus);
    q.value[i] = original;

    if (sig_plus != centre_sig || sig_minus != centre_sig) {
      if (++report.redraws > opt.max_redraws) {
        throw NumericError("grad_check: too many probes straddle a non-differentiable point");
      }
      continue;
    }

    GradCheckProbe probe;
    probe.parameter = params[which]->name;
    probe.index = i;
    probe.analytic = params[which]->grad[i];
    // Divide by the step actually taken after rounding.
    probe.numeric = (f_plus - f_minus) / (step_plus + step_minus);
    probe.relative_error = relative_error(probe.analytic, probe.numeric);
    report.max_relative_error = std::max(report.max_relative_error, probe.relative_error);
    report.probes.push_back(std::move(probe));
  }
  return report;
}

/// Same-precision check: `f` both accumulates gradients and is differenced.
template <typename T, typename F>
GradCheckReport grad_check(F&& f, std::span<Parameter<T>* const> params, const GradCheckOptions& opt = {}) {
  return grad_check_twin<T, T>(f, params, f, params, opt);
}

template <typename T, typename F>
GradCheckReport grad_check(F&& f, std::initializer_list<Parameter<T>*> params, const GradCheckOptions& opt = {}) {
  std::vector<Parameter<T>*> v(params);
  return grad_check<T>(std::forward<F>(f), std::span<Parameter<T>* const>(v), opt);
}

/// Copies every parameter and buffer value of `from` into the same-named
/// slots of `to`, converting the element type. Both must share a layout.
template <typename T, typename U>
void copy_state(Layer<T>& from, Layer<U>& to) {
  std::vector<std::pair<std::string, const BasicTensor<T>*>> src;
  from.visit("", {[&](const std::string& n, Parameter<T>& p) { src.emplace_back(n, &p.value); },
                  [&](const std::string& n, BasicTensor<T>& b) { src.emplace_back(n, &b); }});
  std::size_t k = 0;
  const auto take = [&](const std::string& n, BasicTensor<U>& dst) {
    if (k >= src.size() || src[k].first != n || src[k].second->shape() != dst.shape()) {
      throw ShapeError("copy_state: layouts differ at '" + n + "'");
    }
    dst = tensor_cast<U>(*src[k++].second);
  };
  to.visit("", {[&](const std::string& n, Parameter<U>& p) { take(n, p.value); },
                [&](const std::string& n, BasicTensor<U>& b) { take(n, b); }});
  if (k != src.size()) throw ShapeError("copy_state: source has extra state");
}

}  // namespace toongan
