#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "toongan/errors.hpp"

namespace toongan {

/// Extents of an N x C x H x W tensor.
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  constexpr std::size_t size() const noexcept { return n * c * h * w; }
  constexpr std::size_t plane() const noexcept { return h * w; }
  constexpr std::size_t sample() const noexcept { return c * h * w; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

/// Dense row-major N x C x H x W array.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {
    if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0) {
      throw ShapeError("tensor extents must be >= 1, got " + shape.str());
    }
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       shape.str());
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& vec() noexcept { return data_; }
  const std::vector<T>& vec() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept { return data_[index(n, c, h, w)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[index(n, c, h, w)];
  }

  T* sample(std::size_t n) noexcept { return data_.data() + n * shape_.sample(); }
  const T* sample(std::size_t n) const noexcept { return data_.data() + n * shape_.sample(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  BasicTensor& operator+=(const BasicTensor& o) {
    require_same_shape(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  /// this += alpha * o
  void axpy(T alpha, const BasicTensor& o) {
    require_same_shape(o, "axpy");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * o.data_[i];
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  void require_same_shape(const BasicTensor& o, const char* op) const {
    if (o.shape_ != shape_) {
      throw ShapeError(std::string(op) + ": expected shape " + shape_.str() + ", got " + o.shape_.str());
    }
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

/// Concatenates tensors along the batch axis.
template <typename T>
BasicTensor<T> concat_batch(std::span<const BasicTensor<T>* const> parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no inputs");
  Shape s = parts.front()->shape();
  std::size_t n = 0;
  for (const auto* p : parts) {
    const Shape& ps = p->shape();
    if (ps.c != s.c || ps.h != s.h || ps.w != s.w) {
      throw ShapeError("concat_batch: expected per-sample shape (" + std::to_string(s.c) + "," +
                       std::to_string(s.h) + "," + std::to_string(s.w) + "), got " + ps.str());
    }
    n += ps.n;
  }
  s.n = n;
  std::vector<T> data;
  data.reserve(s.size());
  for (const auto* p : parts) data.insert(data.end(), p->vec().begin(), p->vec().end());
  return BasicTensor<T>(s, std::move(data));
}

template <typename T>
BasicTensor<T> concat_batch(std::initializer_list<const BasicTensor<T>*> parts) {
  std::vector<const BasicTensor<T>*> v(parts);
  return concat_batch<T>(std::span<const BasicTensor<T>* const>(v));
}

/// Samples [first, first + count) along the batch axis.
template <typename T>
BasicTensor<T> slice_batch(const BasicTensor<T>& t, std::size_t first, std::size_t count) {
  const Shape& s = t.shape();
  if (count == 0 || first + count > s.n) {
    throw ShapeError("slice_batch: range [" + std::to_string(first) + "," + std::to_string(first + count) +
                     ") outside batch of " + std::to_string(s.n));
  }
  Shape out = s;
  out.n = count;
  std::vector<T> data(t.sample(first), t.sample(first) + count * s.sample());
  return BasicTensor<T>(out, std::move(data));
}

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t) {
  std::vector<To> data(t.vec().begin(), t.vec().end());
  return BasicTensor<To>(t.shape(), std::move(data));
}

}  // namespace toongan
