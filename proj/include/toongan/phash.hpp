#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "toongan/image.hpp"

namespace toongan {

/// 64-bit difference hash. The image is reduced to a 9x8 grid of mean luma
/// cells; bit (row * 8 + col) is set when cell (col) is darker than cell (col + 1).
///
/// Constant images of any brightness all hash to zero, so black and white
/// frames collide. Near-duplicate reports for flat frames are expected.
inline std::uint64_t perceptual_hash(const RasterImage& img) {
  constexpr std::size_t cols = 9, rows = 8;
  const std::size_t w = img.width(), h = img.height();
  const auto span_of = [](std::size_t i, std::size_t cells, std::size_t extent) {
    std::size_t lo = i * extent / cells;
    std::size_t hi = (i + 1) * extent / cells;
    if (hi <= lo) hi = lo + 1;
    if (hi > extent) {
      hi = extent;
      lo = extent - 1;
    }
    return std::pair{lo, hi};
  };
  // Exact integer sums of 1000 * luma so uniform brightness shifts preserve every comparison.
  std::int64_t sum[rows][cols];
  std::int64_t area[rows][cols];
  for (std::size_t r = 0; r < rows; ++r) {
    const auto [y0, y1] = span_of(r, rows, h);
    for (std::size_t c = 0; c < cols; ++c) {
      const auto [x0, x1] = span_of(c, cols, w);
      std::int64_t s = 0;
      for (std::size_t y = y0; y < y1; ++y)
        for (std::size_t x = x0; x < x1; ++x)
          s += 299 * img.at(x, y, 0) + 587 * img.at(x, y, 1) + 114 * img.at(x, y, 2);
      sum[r][c] = s;
      area[r][c] = static_cast<std::int64_t>((y1 - y0) * (x1 - x0));
    }
  }
  std::uint64_t bits = 0;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c + 1 < cols; ++c)
      if (sum[r][c] * area[r][c + 1] < sum[r][c + 1] * area[r][c]) bits |= std::uint64_t{1} << (r * 8 + c);
  return bits;
}

inline int hamming_distance(std::uint64_t a, std::uint64_t b) { return std::popcount(a ^ b); }

struct DuplicatePair {
  std::size_t first;
  std::size_t second;
  int distance;
};

/// All pairs i < j whose hashes differ in at most `threshold` bits.
inline std::vector<DuplicatePair> find_duplicates(const std::vector<std::uint64_t>& hashes, int threshold = 8) {
  std::vector<DuplicatePair> out;
  for (std::size_t i = 0; i < hashes.size(); ++i)
    for (std::size_t j = i + 1; j < hashes.size(); ++j) {
      const int d = hamming_distance(hashes[i], hashes[j]);
      if (d <= threshold) out.push_back({i, j, d});
    }
  return out;
}

}  // namespace toongan
