#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "toongan/errors.hpp"
#include "toongan/kink.hpp"
#include "toongan/random.hpp"
#include "toongan/tensor.hpp"

namespace toongan {

enum class Mode {
  train,               // batch statistics, running stats updated
  train_frozen_stats,  // batch statistics, running stats left alone
  eval,                // running statistics
};

/// A trainable tensor with its gradient accumulator and AdamW moments.
template <typename T>
struct Parameter {
  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  BasicTensor<T> m;
  BasicTensor<T> v;
  std::uint64_t step_count = 0;
  // Frozen parameters still propagate gradients to their inputs but never accumulate their own.
  bool frozen = false;

  Parameter() = default;
  explicit Parameter(BasicTensor<T> init)
      : value(std::move(init)), grad(value.shape()), m(value.shape()), v(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }
};

/// Callbacks for enumerating a network's state under hierarchical names.
template <typename T>
struct StateVisitor {
  std::function<void(const std::string&, Parameter<T>&)> parameter;
  std::function<void(const std::string&, BasicTensor<T>&)> buffer;
};

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

/// A differentiable stage. forward() caches what backward() needs, so each
/// backward() must follow the forward() whose input it differentiates.
template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) = 0;
  virtual BasicTensor<T> backward(const BasicTensor<T>& grad_out) = 0;
  virtual void visit(const std::string& /*prefix*/, const StateVisitor<T>& /*v*/) {}
  virtual std::string kind() const = 0;
};

struct ConvSpec {
  std::size_t k = 3;  // kernel side
  std::size_t n = 1;  // output channels
  std::size_t s = 1;  // stride
  std::size_t padding = 0;
  std::size_t output_padding = 0;  // transposed convolution only
  bool bias = true;  // Conv2d only; off when a norm layer follows

  void validate() const {
    if (k < 1 || n < 1 || s < 1) throw ShapeError("conv spec requires k, n, s >= 1");
    if (output_padding >= s && output_padding != 0) throw ShapeError("output_padding must be smaller than stride");
  }
};

constexpr std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t pad) {
  return (in + 2 * pad - k) / s + 1;
}

constexpr std::size_t conv_transpose_out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t pad,
                                                std::size_t output_padding) {
  return (in - 1) * s - 2 * pad + k + output_padding;
}

namespace detail {

/// Geometry of a strided, zero-padded sliding window from an image of
/// in_h x in_w onto a grid of out_h x out_w window positions.
struct Window {
  std::size_t channels, in_h, in_w, out_h, out_w, k, s, pad;

  std::size_t rows() const { return channels * k * k; }
  std::size_t cols() const { return out_h * out_w; }
};

template <typename T>
void im2col(const Window& g, const T* src, T* dst) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c) {
    const T* plane = src + c * g.in_h * g.in_w;
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        T* row = dst + ((c * g.k + kh) * g.k + kw) * g.cols();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.s + kh) - pad;
          T* out = row + oh * g.out_w;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill(out, out + g.out_w, T(0));
            continue;
          }
          const T* in_row = plane + static_cast<std::size_t>(ih) * g.in_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.s + kw) - pad;
            out[ow] = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) ? T(0) : in_row[iw];
          }
        }
      }
    }
  }
}

/// Scatter-adds columns back onto the image grid (adjoint of im2col).
template <typename T>
void col2im(const Window& g, const T* cols, T* dst) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.channels; ++c) {
    T* plane = dst + c * g.in_h * g.in_w;
    for (std::size_t kh = 0; kh < g.k; ++kh) {
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        const T* row = cols + ((c * g.k + kh) * g.k + kw) * g.cols();
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.s + kh) - pad;
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          T* out_row = plane + static_cast<std::size_t>(ih) * g.in_w;
          const T* in = row + oh * g.out_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.s + kw) - pad;
            if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.in_w)) out_row[iw] += in[ow];
          }
        }
      }
    }
  }
}

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
BasicTensor<T> kaiming_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  BasicTensor<T> t(shape);
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.vec()) v = static_cast<T>(rng.normal() * std);
  return t;
}

}  // namespace detail

/// 2-D cross-correlation with zero padding. Weight layout n x c_in x k x k.
template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::size_t in_channels, ConvSpec spec, Rng& rng)
      : in_channels_(in_channels),
        spec_(spec),
        weight_(detail::kaiming_normal<T>({spec.n, in_channels, spec.k, spec.k}, in_channels * spec.k * spec.k, rng)),
        bias_(BasicTensor<T>({spec.n, 1, 1, 1})) {
    spec.validate();
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode) override {
    const Shape& s = x.shape();
    if (s.c != in_channels_) {
      throw ShapeError("conv2d: expected " + std::to_string(in_channels_) + " input channels, got " +
                       std::to_string(s.c) + " (input shape " + s.str() + ")");
    }
    if (s.h + 2 * spec_.padding < spec_.k || s.w + 2 * spec_.padding < spec_.k) {
      throw ShapeError("conv2d: input " + s.str() + " smaller than kernel " + std::to_string(spec_.k));
    }
    input_ = x;
    const detail::Window g = window(s);
    BasicTensor<T> y({s.n, spec_.n, g.out_h, g.out_w});
    cols_.resize(g.rows() * g.cols());
    detail::ConstMatMap<T> w(weight_.value.data(), spec_.n, g.rows());
    for (std::size_t b = 0; b < s.n; ++b) {
      detail::im2col(g, x.sample(b), cols_.data());
      detail::ConstMatMap<T> cols(cols_.data(), g.rows(), g.cols());
      detail::MatMap<T> out(y.sample(b), spec_.n, g.cols());
      out.noalias() = w * cols;
      if (spec_.bias) {
        for (std::size_t o = 0; o < spec_.n; ++o) out.row(o).array() += bias_.value[o];
      }
    }
    return y;
  }

  BasicTensor<T> backward(const BasicTensor<T>& gy) override {
    const Shape& s = input_.shape();
    const detail::Window g = window(s);
    if (gy.shape() != Shape{s.n, spec_.n, g.out_h, g.out_w}) {
      throw ShapeError("conv2d backward: expected gradient shape " + Shape{s.n, spec_.n, g.out_h, g.out_w}.str() +
                       ", got " + gy.shape().str());
    }
    BasicTensor<T> gx(s);
    cols_.resize(g.rows() * g.cols());
    std::vector<T> gcols(g.rows() * g.cols());
    detail::ConstMatMap<T> w(weight_.value.data(), spec_.n, g.rows());
    detail::MatMap<T> gw(weight_.grad.data(), spec_.n, g.rows());
    detail::MatMap<T> gcm(gcols.data(), g.rows(), g.cols());
    for (std::size_t b = 0; b < s.n; ++b) {
      detail::ConstMatMap<T> go(gy.sample(b), spec_.n, g.cols());
      if (!weight_.frozen) {
        detail::im2col(g, input_.sample(b), cols_.data());
        detail::ConstMatMap<T> cols(cols_.data(), g.rows(), g.cols());
        gw.noalias() += go * cols.transpose();
      }
      if (spec_.bias && !bias_.frozen) {
        for (std::size_t o = 0; o < spec_.n; ++o) bias_.grad[o] += go.row(o).sum();
      }
      gcm.noalias() = w.transpose() * go;
      detail::col2im(g, gcols.data(), gx.sample(b));
    }
    return gx;
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    if (v.parameter) {
      v.parameter(join_name(prefix, "weight"), weight_);
      if (spec_.bias) v.parameter(join_name(prefix, "bias"), bias_);
    }
  }

  std::string kind() const override { return "conv2d"; }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  const ConvSpec& spec() const { return spec_; }
  std::size_t in_channels() const { return in_channels_; }

 private:
  detail::Window window(const Shape& s) const {
    return {in_channels_,
            s.h,
            s.w,
            conv_out_extent(s.h, spec_.k, spec_.s, spec_.padding),
            conv_out_extent(s.w, spec_.k, spec_.s, spec_.padding),
            spec_.k,
            spec_.s,
            spec_.padding};
  }

  std::size_t in_channels_;
  ConvSpec spec_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  BasicTensor<T> input_;
  std::vector<T> cols_;
};

/// Transposed convolution: the adjoint of Conv2d's input map. Weight layout
/// c_in x n x k x k.
template <typename T>
class ConvTranspose2d final : public Layer<T> {
 public:
  ConvTranspose2d(std::size_t in_channels, ConvSpec spec, Rng& rng)
      : in_channels_(in_channels),
        spec_(spec),
        weight_(detail::kaiming_normal<T>({in_channels, spec.n, spec.k, spec.k}, in_channels * spec.k * spec.k, rng)),
        bias_(BasicTensor<T>({spec.n, 1, 1, 1})) {
    spec.validate();
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode) override {
    const Shape& s = x.shape();
    if (s.c != in_channels_) {
      throw ShapeError("conv_transpose2d: expected " + std::to_string(in_channels_) + " input channels, got " +
                       std::to_string(s.c) + " (input shape " + s.str() + ")");
    }
    if ((s.h - 1) * spec_.s + spec_.k + spec_.output_padding <= 2 * spec_.padding) {
      throw ShapeError("conv_transpose2d: padding too large for input " + s.str());
    }
    input_ = x;
    const detail::Window g = window(s);
    BasicTensor<T> y({s.n, spec_.n, g.in_h, g.in_w});
    std::vector<T> cols(g.rows() * g.cols());
    detail::ConstMatMap<T> w(weight_.value.data(), in_channels_, g.rows());
    detail::MatMap<T> cm(cols.data(), g.rows(), g.cols());
    for (std::size_t b = 0; b < s.n; ++b) {
      detail::ConstMatMap<T> xin(x.sample(b), in_channels_, g.cols());
      cm.noalias() = w.transpose() * xin;
      T* out = y.sample(b);
      detail::col2im(g, cols.data(), out);
      const std::size_t plane = g.in_h * g.in_w;
      for (std::size_t o = 0; o < spec_.n; ++o) {
        T* p = out + o * plane;
        for (std::size_t i = 0; i < plane; ++i) p[i] += bias_.value[o];
      }
    }
    return y;
  }

  BasicTensor<T> backward(const BasicTensor<T>& gy) override {
    const Shape& s = input_.shape();
    const detail::Window g = window(s);
    if (gy.shape() != Shape{s.n, spec_.n, g.in_h, g.in_w}) {
      throw ShapeError("conv_transpose2d backward: expected gradient shape " +
                       Shape{s.n, spec_.n, g.in_h, g.in_w}.str() + ", got " + gy.shape().str());
    }
    BasicTensor<T> gx(s);
    std::vector<T> cols(g.rows() * g.cols());
    detail::ConstMatMap<T> w(weight_.value.data(), in_channels_, g.rows());
    detail::MatMap<T> gw(weight_.grad.data(), in_channels_, g.rows());
    detail::ConstMatMap<T> cm(cols.data(), g.rows(), g.cols());
    const std::size_t plane = g.in_h * g.in_w;
    for (std::size_t b = 0; b < s.n; ++b) {
      detail::im2col(g, gy.sample(b), cols.data());
      detail::MatMap<T> gxs(gx.sample(b), in_channels_, g.cols());
      gxs.noalias() = w * cm;
      if (!weight_.frozen) {
        detail::ConstMatMap<T> xin(input_.sample(b), in_channels_, g.cols());
        gw.noalias() += xin * cm.transpose();
      }
      if (!bias_.frozen) {
        const T* go = gy.sample(b);
        for (std::size_t o = 0; o < spec_.n; ++o) {
          T acc = 0;
          for (std::size_t i = 0; i < plane; ++i) acc += go[o * plane + i];
          bias_.grad[o] += acc;
        }
      }
    }
    return gx;
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    if (v.parameter) {
      v.parameter(join_name(prefix, "weight"), weight_);
      v.parameter(join_name(prefix, "bias"), bias_);
    }
  }

  std::string kind() const override { return "conv_transpose2d"; }

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }
  const ConvSpec& spec() const { return spec_; }

 private:
  // The window runs over the *output* image: each input pixel is one window position.
  detail::Window window(const Shape& s) const {
    return {spec_.n,
            conv_transpose_out_extent(s.h, spec_.k, spec_.s, spec_.padding, spec_.output_padding),
            conv_transpose_out_extent(s.w, spec_.k, spec_.s, spec_.padding, spec_.output_padding),
            s.h,
            s.w,
            spec_.k,
            spec_.s,
            spec_.padding};
  }

  std::size_t in_channels_;
  ConvSpec spec_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  BasicTensor<T> input_;
};

/// Per-channel batch normalization, eps 1e-5, momentum 0.1.
template <typename T>
class BatchNorm2d final : public Layer<T> {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  explicit BatchNorm2d(std::size_t channels)
      : channels_(channels),
        gamma_(BasicTensor<T>({1, channels, 1, 1}, T(1))),
        beta_(BasicTensor<T>({1, channels, 1, 1})),
        running_mean_({1, channels, 1, 1}),
        running_var_({1, channels, 1, 1}, T(1)) {}

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override {
    const Shape& s = x.shape();
    if (s.c != channels_) {
      throw ShapeError("batch_norm2d: expected " + std::to_string(channels_) + " channels, got " + s.str());
    }
    const std::size_t plane = s.plane();
    const std::size_t count = s.n * plane;
    mode_ = mode;
    inv_std_.assign(channels_, 0.0);
    x_hat_ = BasicTensor<T>(s);
    BasicTensor<T> y(s);
    if (mode != Mode::eval && count <= 1) {
      throw ShapeError("batch_norm2d: degenerate batch, N*H*W = " + std::to_string(count) + " in train mode");
    }
    for (std::size_t c = 0; c < channels_; ++c) {
      double mean, var;
      if (mode == Mode::eval) {
        mean = running_mean_[c];
        var = running_var_[c];
      } else {
        double sum = 0.0;
        for (std::size_t b = 0; b < s.n; ++b) {
          const T* p = x.sample(b) + c * plane;
          for (std::size_t i = 0; i < plane; ++i) sum += p[i];
        }
        mean = sum / static_cast<double>(count);
        double sq = 0.0;
        for (std::size_t b = 0; b < s.n; ++b) {
          const T* p = x.sample(b) + c * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double d = p[i] - mean;
            sq += d * d;
          }
        }
        var = sq / static_cast<double>(count);
        if (mode == Mode::train) {
          const double unbiased = sq / static_cast<double>(count - 1);
          running_mean_[c] = static_cast<T>((1.0 - kMomentum) * running_mean_[c] + kMomentum * mean);
          running_var_[c] = static_cast<T>((1.0 - kMomentum) * running_var_[c] + kMomentum * unbiased);
        }
      }
      const double inv_std = 1.0 / std::sqrt(var + kEps);
      inv_std_[c] = inv_std;
      const double gamma = gamma_.value[c];
      const double beta = beta_.value[c];
      for (std::size_t b = 0; b < s.n; ++b) {
        const T* p = x.sample(b) + c * plane;
        T* h = x_hat_.sample(b) + c * plane;
        T* o = y.sample(b) + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double xh = (p[i] - mean) * inv_std;
          h[i] = static_cast<T>(xh);
          o[i] = static_cast<T>(gamma * xh + beta);
        }
      }
    }
    return y;
  }

  BasicTensor<T> backward(const BasicTensor<T>& gy) override {
    const Shape& s = x_hat_.shape();
    x_hat_.require_same_shape(gy, "batch_norm2d backward");
    const std::size_t plane = s.plane();
    const double count = static_cast<double>(s.n * plane);
    BasicTensor<T> gx(s);
    for (std::size_t c = 0; c < channels_; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t b = 0; b < s.n; ++b) {
        const T* g = gy.sample(b) + c * plane;
        const T* h = x_hat_.sample(b) + c * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_g += g[i];
          sum_gx += static_cast<double>(g[i]) * h[i];
        }
      }
      if (!gamma_.frozen) gamma_.grad[c] += static_cast<T>(sum_gx);
      if (!beta_.frozen) beta_.grad[c] += static_cast<T>(sum_g);
      const double scale = gamma_.value[c] * inv_std_[c];
      for (std::size_t b = 0; b < s.n; ++b) {
        const T* g = gy.sample(b) + c * plane;
        const T* h = x_hat_.sample(b) + c * plane;
        T* o = gx.sample(b) + c * plane;
        if (mode_ == Mode::eval) {
          for (std::size_t i = 0; i < plane; ++i) o[i] = static_cast<T>(scale * g[i]);
        } else {
          for (std::size_t i = 0; i < plane; ++i) {
            o[i] = static_cast<T>(scale / count * (count * g[i] - sum_g - h[i] * sum_gx));
          }
        }
      }
    }
    return gx;
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    if (v.parameter) {
      v.parameter(join_name(prefix, "gamma"), gamma_);
      v.parameter(join_name(prefix, "beta"), beta_);
    }
    if (v.buffer) {
      v.buffer(join_name(prefix, "running_mean"), running_mean_);
      v.buffer(join_name(prefix, "running_var"), running_var_);
    }
  }

  std::string kind() const override { return "batch_norm2d"; }

  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  BasicTensor<T>& running_mean() { return running_mean_; }
  BasicTensor<T>& running_var() { return running_var_; }

 private:
  std::size_t channels_;
  Parameter<T> gamma_;
  Parameter<T> beta_;
  BasicTensor<T> running_mean_;
  BasicTensor<T> running_var_;
  Mode mode_ = Mode::train;
  BasicTensor<T> x_hat_;
  std::vector<double> inv_std_;
};

enum class ActivationKind { relu, lrelu };

constexpr double kLeakySlope = 0.2;

template <typename T>
constexpr T activate(ActivationKind kind, T v) noexcept {
  if (v >= T(0)) return v;
  return kind == ActivationKind::relu ? T(0) : static_cast<T>(kLeakySlope * v);
}

/// ReLU or leaky ReLU (slope 0.2). The derivative at 0 is taken as 1 for both.
template <typename T>
class Activation final : public Layer<T> {
 public:
  explicit Activation(ActivationKind kind) : kind_(kind) {}

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode) override {
    BasicTensor<T> y(x.shape());
    positive_.resize(x.size());
    const bool monitor = KinkMonitor::active();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const bool pos = x[i] >= T(0);
      positive_[i] = pos;
      if (monitor) KinkMonitor::observe(pos);
      y[i] = activate(kind_, x[i]);
    }
    shape_ = x.shape();
    return y;
  }

  BasicTensor<T> backward(const BasicTensor<T>& gy) override {
    if (gy.shape() != shape_) {
      throw ShapeError("activation backward: expected " + shape_.str() + ", got " + gy.shape().str());
    }
    const T neg = kind_ == ActivationKind::relu ? T(0) : static_cast<T>(kLeakySlope);
    BasicTensor<T> gx(shape_);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] = positive_[i] ? gy[i] : neg * gy[i];
    return gx;
  }

  std::string kind() const override { return kind_ == ActivationKind::relu ? "relu" : "lrelu"; }

  ActivationKind activation() const { return kind_; }

 private:
  ActivationKind kind_;
  Shape shape_;
  std::vector<bool> positive_;
};

/// Ordered chain of named layers.
template <typename T>
class Sequential final : public Layer<T> {
 public:
  Sequential() = default;

  template <typename L>
  L& add(std::string name, std::unique_ptr<L> layer) {
    L& ref = *layer;
    names_.push_back(std::move(name));
    layers_.push_back(std::move(layer));
    return ref;
  }

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override {
    BasicTensor<T> h = x;
    for (auto& l : layers_) h = l->forward(h, mode);
    return h;
  }

  BasicTensor<T> backward(const BasicTensor<T>& gy) override {
    BasicTensor<T> g = gy;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->visit(join_name(prefix, names_[i]), v);
  }

  std::string kind() const override { return "sequential"; }

  std::size_t size() const { return layers_.size(); }
  Layer<T>& at(std::size_t i) { return *layers_.at(i); }
  const std::string& name(std::size_t i) const { return names_.at(i); }

 private:
  std::vector<std::string> names_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

/// y = x + body(x)
template <typename T>
class Residual final : public Layer<T> {
 public:
  explicit Residual(std::unique_ptr<Sequential<T>> body) : body_(std::move(body)) {}

  BasicTensor<T> forward(const BasicTensor<T>& x, Mode mode) override {
    BasicTensor<T> y = body_->forward(x, mode);
    y += x;
    return y;
  }

  BasicTensor<T> backward(const BasicTensor<T>& gy) override {
    BasicTensor<T> g = body_->backward(gy);
    g += gy;
    return g;
  }

  void visit(const std::string& prefix, const StateVisitor<T>& v) override { body_->visit(prefix, v); }

  std::string kind() const override { return "residual"; }

  Sequential<T>& body() { return *body_; }

 private:
  std::unique_ptr<Sequential<T>> body_;
};

/// Collects (name, parameter) pairs in visit order.
template <typename T>
std::vector<std::pair<std::string, Parameter<T>*>> named_parameters(Layer<T>& layer, const std::string& prefix = "") {
  std::vector<std::pair<std::string, Parameter<T>*>> out;
  layer.visit(prefix, {[&](const std::string& n, Parameter<T>& p) { out.emplace_back(n, &p); }, nullptr});
  return out;
}

template <typename T>
void set_frozen(Layer<T>& layer, bool frozen) {
  layer.visit("", {[&](const std::string&, Parameter<T>& p) { p.frozen = frozen; }, nullptr});
}

template <typename T>
void zero_grad(Layer<T>& layer) {
  layer.visit("", {[](const std::string&, Parameter<T>& p) { p.zero_grad(); }, nullptr});
}

}  // namespace toongan
