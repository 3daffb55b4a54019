#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "toongan/errors.hpp"
#include "toongan/image.hpp"
#include "toongan/random.hpp"
#include "toongan/tensor.hpp"

namespace toongan {

/// Decoded, resized and normalized images held in memory, in file-name order.
struct Dataset {
  std::vector<Tensor> images;  // each 1 x 3 x size x size
  std::size_t skipped = 0;     // undecodable files

  std::size_t size() const { return images.size(); }
};

inline Dataset dataset_from_images(const std::vector<RasterImage>& images, std::size_t size) {
  Dataset d;
  for (const auto& img : images) d.images.push_back(image_to_tensor(resize_bilinear(img, size, size)));
  return d;
}

/// Loads every PNG/JPEG in `dir`. Undecodable files are reported to `warn` and
/// skipped; a directory with no usable image is a configuration error.
inline Dataset load_dataset(const std::filesystem::path& dir, std::size_t size, std::ostream* warn = nullptr) {
  Dataset d;
  for (const auto& path : list_images(dir)) {
    try {
      d.images.push_back(image_to_tensor(resize_bilinear(read_image(path), size, size)));
    } catch (const DecodeError& e) {
      ++d.skipped;
      if (warn) *warn << "warning: skipping " << path.string() << ": " << e.what() << "\n";
    }
  }
  if (d.images.empty()) throw ConfigError("no decodable images in " + dir.string());
  if (warn && d.skipped) *warn << "warning: skipped " << d.skipped << " undecodable file(s) in " << dir.string() << "\n";
  return d;
}

/// Endless sample stream over a dataset: cycle k visits every item once in
/// the order of a permutation seeded by (seed, tag, k). Positions map to
/// items statelessly, so any position can be recomputed after a resume.
class SampleStream {
 public:
  SampleStream(std::size_t n, std::uint64_t seed, std::string tag) : n_(n), seed_(seed), tag_(std::move(tag)) {
    if (n == 0) throw ConfigError("sample stream '" + tag_ + "' is empty");
  }

  std::size_t index_at(std::uint64_t pos) {
    const std::uint64_t cycle = pos / n_;
    if (cycle != cached_cycle_ || order_.empty()) {
      order_ = permutation_for(cycle);
      cached_cycle_ = cycle;
    }
    return order_[pos % n_];
  }

  /// Horizontal-flip decision for the sample drawn at `pos`.
  bool flip_at(std::uint64_t pos) const { return (derive_seed(seed_, tag_ + "/flip", pos) >> 63) != 0; }

  std::vector<std::size_t> permutation_for(std::uint64_t cycle) const {
    Rng rng(derive_seed(seed_, tag_, cycle));
    return rng.permutation(n_);
  }

  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::string tag_;
  std::uint64_t cached_cycle_ = 0;
  std::vector<std::size_t> order_;
};

inline Tensor flip_horizontal(const Tensor& t) {
  Tensor out(t.shape());
  const Shape& s = t.shape();
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) out.at(n, c, y, x) = t.at(n, c, y, s.w - 1 - x);
  return out;
}

/// Batch of `count` samples taken from stream positions first..first+count-1.
inline Tensor gather_batch(const Dataset& d, SampleStream& stream, std::uint64_t first, std::size_t count, bool flip) {
  std::vector<Tensor> parts;
  parts.reserve(count);
  for (std::size_t j = 0; j < count; ++j) {
    const Tensor& src = d.images.at(stream.index_at(first + j));
    parts.push_back(flip && stream.flip_at(first + j) ? flip_horizontal(src) : src);
  }
  std::vector<const Tensor*> ptrs;
  for (const auto& p : parts) ptrs.push_back(&p);
  return concat_batch<float>(std::span<const Tensor* const>(ptrs));
}

}  // namespace toongan
