#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <vector>

#include "toongan/errors.hpp"
#include "toongan/image.hpp"

namespace toongan {

/// Parameters of the edge-blur preprocessing that builds the smoothed cartoon set.
///
/// Gradient magnitudes are the L2 norm of raw 3x3 Sobel responses on the 0..255
/// luma plane after the Gaussian pre-smooth (a full-contrast step scores ~776),
/// so the thresholds are comparable to OpenCV's Canny on 8-bit input.
struct EdgeSmoothParams {
  double canny_low = 150.0;
  double canny_high = 500.0;
  std::size_t dilation_radius = 1;
  std::size_t blur_kernel = 3;
  double blur_sigma = 0.0;  // 0: (blur_kernel - 1) / 4 + 0.3

  void validate() const {
    if (!(canny_low > 0.0) || !(canny_low <= canny_high)) {
      throw ConfigError("edge params require 0 < canny_low <= canny_high");
    }
    if (blur_kernel < 3 || blur_kernel % 2 == 0) throw ConfigError("blur kernel must be odd and >= 3");
    if (blur_sigma < 0.0) throw ConfigError("blur sigma must be >= 0");
  }

  double effective_sigma() const {
    return blur_sigma > 0.0 ? blur_sigma : static_cast<double>(blur_kernel - 1) / 4.0 + 0.3;
  }
};

struct EdgeMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> bits;  // 0 or 1, row-major

  bool at(std::size_t x, std::size_t y) const { return bits[y * width + x] != 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
};

namespace detail {

/// Integer luma, ITU-R 601 weights, rounded.
inline std::vector<std::int32_t> luma_plane(const RasterImage& img) {
  std::vector<std::int32_t> out(img.width() * img.height());
  for (std::size_t y = 0; y < img.height(); ++y)
    for (std::size_t x = 0; x < img.width(); ++x)
      out[y * img.width() + x] =
          (299 * img.at(x, y, 0) + 587 * img.at(x, y, 1) + 114 * img.at(x, y, 2) + 500) / 1000;
  return out;
}

/// 1-D Gaussian weights in Q16 fixed point summing to exactly 65536. Fixed
/// point keeps every blurred byte identical across platforms and libm versions.
inline std::vector<std::int64_t> gaussian_q16(std::size_t kernel, double sigma) {
  const auto r = static_cast<std::ptrdiff_t>(kernel / 2);
  std::vector<double> w(kernel);
  double sum = 0.0;
  for (std::ptrdiff_t i = -r; i <= r; ++i) {
    w[static_cast<std::size_t>(i + r)] = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    sum += w[static_cast<std::size_t>(i + r)];
  }
  std::vector<std::int64_t> q(kernel);
  std::int64_t total = 0;
  for (std::size_t i = 0; i < kernel; ++i) {
    q[i] = std::llround(w[i] / sum * 65536.0);
    total += q[i];
  }
  q[static_cast<std::size_t>(r)] += 65536 - total;
  return q;
}

inline std::size_t clamp_index(std::ptrdiff_t i, std::size_t extent) {
  return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(i, 0, static_cast<std::ptrdiff_t>(extent) - 1));
}

/// 2-D separable-kernel blur of one plane with replicated borders, evaluated as
/// a single Q32 accumulation and rounded half up.
inline std::vector<std::int32_t> blur_plane(const std::vector<std::int32_t>& src, std::size_t w, std::size_t h,
                                            const std::vector<std::int64_t>& q) {
  const auto r = static_cast<std::ptrdiff_t>(q.size() / 2);
  std::vector<std::int32_t> out(src.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::int64_t acc = 0;
      for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
        const std::size_t yy = clamp_index(static_cast<std::ptrdiff_t>(y) + dy, h);
        const std::int64_t wy = q[static_cast<std::size_t>(dy + r)];
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
          const std::size_t xx = clamp_index(static_cast<std::ptrdiff_t>(x) + dx, w);
          acc += wy * q[static_cast<std::size_t>(dx + r)] * src[yy * w + xx];
        }
      }
      out[y * w + x] = static_cast<std::int32_t>((acc + (std::int64_t{1} << 31)) >> 32);
    }
  }
  return out;
}

}  // namespace detail

/// Per-channel Gaussian blur of the whole image.
inline RasterImage gaussian_blur(const RasterImage& img, std::size_t kernel, double sigma) {
  const auto q = detail::gaussian_q16(kernel, sigma);
  const std::size_t w = img.width(), h = img.height();
  RasterImage out(w, h);
  std::vector<std::int32_t> plane(w * h);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < w * h; ++i) plane[i] = img.pixels()[i * 3 + c];
    const auto blurred = detail::blur_plane(plane, w, h, q);
    for (std::size_t i = 0; i < w * h; ++i) out.pixels()[i * 3 + c] = static_cast<std::uint8_t>(std::min(blurred[i], 255));
  }
  return out;
}

/// Canny edges (luma, Gaussian pre-smooth, Sobel, non-maximum suppression,
/// hysteresis with 8-connectivity) dilated by a square structuring element.
inline EdgeMask edge_mask(const RasterImage& img, const EdgeSmoothParams& p) {
  p.validate();
  const std::size_t w = img.width(), h = img.height();
  const auto gray = detail::blur_plane(detail::luma_plane(img), w, h, detail::gaussian_q16(p.blur_kernel, p.effective_sigma()));

  std::vector<std::int32_t> gx(w * h), gy(w * h);
  std::vector<std::int64_t> mag2(w * h);
  const auto px = [&](std::ptrdiff_t x, std::ptrdiff_t y) {
    return gray[detail::clamp_index(y, h) * w + detail::clamp_index(x, w)];
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const auto X = static_cast<std::ptrdiff_t>(x), Y = static_cast<std::ptrdiff_t>(y);
      const std::int32_t dx = (px(X + 1, Y - 1) + 2 * px(X + 1, Y) + px(X + 1, Y + 1)) -
                              (px(X - 1, Y - 1) + 2 * px(X - 1, Y) + px(X - 1, Y + 1));
      const std::int32_t dy = (px(X - 1, Y + 1) + 2 * px(X, Y + 1) + px(X + 1, Y + 1)) -
                              (px(X - 1, Y - 1) + 2 * px(X, Y - 1) + px(X + 1, Y - 1));
      gx[y * w + x] = dx;
      gy[y * w + x] = dy;
      mag2[y * w + x] = std::int64_t{dx} * dx + std::int64_t{dy} * dy;
    }
  }

  // Squared thresholds: magnitude > t  <=>  magnitude^2 > t^2.
  const double low2 = p.canny_low * p.canny_low;
  const double high2 = p.canny_high * p.canny_high;
  const auto m = [&](std::ptrdiff_t x, std::ptrdiff_t y) -> std::int64_t {
    if (x < 0 || y < 0 || x >= static_cast<std::ptrdiff_t>(w) || y >= static_cast<std::ptrdiff_t>(h)) return 0;
    return mag2[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
  };
  // 0: none, 1: weak, 2: strong
  std::vector<std::uint8_t> cls(w * h, 0);
  constexpr std::int64_t tg22 = 13573;  // tan(22.5 deg) in Q15
  constexpr std::int64_t tg67 = 79109;  // tan(67.5 deg) in Q15
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::int64_t v = mag2[y * w + x];
      if (static_cast<double>(v) <= low2) continue;
      const auto X = static_cast<std::ptrdiff_t>(x), Y = static_cast<std::ptrdiff_t>(y);
      const std::int64_t ax = std::abs(gx[y * w + x]), ay = std::abs(gy[y * w + x]);
      bool peak;
      // Strict on one side, non-strict on the other, so plateaus keep exactly one pixel.
      if ((ay << 15) < tg22 * ax) {
        peak = v > m(X - 1, Y) && v >= m(X + 1, Y);
      } else if ((ay << 15) > tg67 * ax) {
        peak = v > m(X, Y - 1) && v >= m(X, Y + 1);
      } else if ((gx[y * w + x] < 0) == (gy[y * w + x] < 0)) {
        peak = v > m(X - 1, Y - 1) && v >= m(X + 1, Y + 1);
      } else {
        peak = v > m(X + 1, Y - 1) && v >= m(X - 1, Y + 1);
      }
      if (peak) cls[y * w + x] = static_cast<double>(v) > high2 ? 2 : 1;
    }
  }

  std::vector<std::uint8_t> edges(w * h, 0);
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < w * h; ++i) {
    if (cls[i] == 2) {
      edges[i] = 1;
      stack.push_back(i);
    }
  }
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const auto X = static_cast<std::ptrdiff_t>(i % w), Y = static_cast<std::ptrdiff_t>(i / w);
    for (std::ptrdiff_t dy = -1; dy <= 1; ++dy) {
      for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
        const std::ptrdiff_t nx = X + dx, ny = Y + dy;
        if (nx < 0 || ny < 0 || nx >= static_cast<std::ptrdiff_t>(w) || ny >= static_cast<std::ptrdiff_t>(h)) continue;
        const std::size_t j = static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx);
        if (cls[j] == 1 && !edges[j]) {
          edges[j] = 1;
          stack.push_back(j);
        }
      }
    }
  }

  EdgeMask mask{w, h, std::vector<std::uint8_t>(w * h, 0)};
  const auto r = static_cast<std::ptrdiff_t>(p.dilation_radius);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (!edges[y * w + x]) continue;
      for (std::ptrdiff_t dy = -r; dy <= r; ++dy)
        for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
          const std::ptrdiff_t nx = static_cast<std::ptrdiff_t>(x) + dx, ny = static_cast<std::ptrdiff_t>(y) + dy;
          if (nx >= 0 && ny >= 0 && nx < static_cast<std::ptrdiff_t>(w) && ny < static_cast<std::ptrdiff_t>(h))
            mask.bits[static_cast<std::size_t>(ny) * w + static_cast<std::size_t>(nx)] = 1;
        }
    }
  }
  return mask;
}

/// Gaussian-blurred image inside the dilated edge mask, the input elsewhere.
inline RasterImage edge_smooth(const RasterImage& img, const EdgeSmoothParams& p) {
  const EdgeMask mask = edge_mask(img, p);
  if (mask.count() == 0) return img;
  const RasterImage blurred = gaussian_blur(img, p.blur_kernel, p.effective_sigma());
  RasterImage out = img;
  for (std::size_t i = 0; i < mask.bits.size(); ++i) {
    if (!mask.bits[i]) continue;
    for (std::size_t c = 0; c < 3; ++c) out.pixels()[i * 3 + c] = blurred.pixels()[i * 3 + c];
  }
  return out;
}

}  // namespace toongan
