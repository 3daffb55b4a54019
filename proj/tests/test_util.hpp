#pragma once

#include <cstdint>
#include <vector>

#include "toongan/gradcheck.hpp"
#include "toongan/gradsuite.hpp"
#include "toongan/layers.hpp"
#include "toongan/random.hpp"
#include "toongan/tensor.hpp"

namespace toongan::testing {

template <typename T = float>
BasicTensor<T> random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  BasicTensor<T> t(s);
  for (auto& v : t.vec()) v = static_cast<T>(rng.normal() * scale);
  return t;
}

template <typename T = float>
BasicTensor<T> uniform_tensor(Shape s, std::uint64_t seed, double lo, double hi) {
  Rng rng(seed);
  BasicTensor<T> t(s);
  for (auto& v : t.vec()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return t;
}

/// sum_i r_i * y_i accumulated in double.
template <typename T>
double project(const BasicTensor<T>& y, const BasicTensor<T>& r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += static_cast<double>(y[i]) * r[i];
  return acc;
}

template <typename T>
std::vector<Parameter<T>*> parameters_of(Layer<T>& layer) {
  std::vector<Parameter<T>*> out;
  for (auto& [name, p] : named_parameters(layer)) {
    p->name = name;
    out.push_back(p);
  }
  return out;
}

inline constexpr double kTwinEpsilon = gradsuite::kTwinEpsilon;

inline GradCheckReport check_layer_twin(Layer<float>& a, Layer<double>& b, Shape in, Mode mode, std::uint64_t seed,
                                        GradCheckOptions opt) {
  return gradsuite::layer_twin(a, b, in, mode, seed, opt);
}

}  // namespace toongan::testing
