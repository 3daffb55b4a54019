#pragma once

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "toongan/errors.hpp"
#include "toongan/tensor.hpp"

namespace toongan {

/// H x W x 3 8-bit sRGB image, row-major, channels interleaved.
class RasterImage {
 public:
  RasterImage() = default;

  RasterImage(std::size_t width, std::size_t height, std::uint8_t fill = 0)
      : width_(width), height_(height), pixels_(width * height * 3, fill) {
    validate();
  }

  RasterImage(std::size_t width, std::size_t height, std::vector<std::uint8_t> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    validate();
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  bool empty() const noexcept { return pixels_.empty(); }

  std::uint8_t& at(std::size_t x, std::size_t y, std::size_t c) noexcept { return pixels_[(y * width_ + x) * 3 + c]; }
  std::uint8_t at(std::size_t x, std::size_t y, std::size_t c) const noexcept {
    return pixels_[(y * width_ + x) * 3 + c];
  }

  std::vector<std::uint8_t>& pixels() noexcept { return pixels_; }
  const std::vector<std::uint8_t>& pixels() const noexcept { return pixels_; }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;

 private:
  void validate() const {
    if (width_ < 1 || height_ < 1) throw ShapeError("image dimensions must be >= 1");
    if (pixels_.size() != width_ * height_ * 3) {
      throw ShapeError("image pixel buffer has " + std::to_string(pixels_.size()) + " bytes, expected " +
                       std::to_string(width_ * height_ * 3));
    }
  }

  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

namespace detail {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_fail(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, err->message);
  std::longjmp(err->jump, 1);
}

// libjpeg reports truncated data as a warning and pads with gray; treat it as fatal.
inline void jpeg_message(j_common_ptr info, int level) {
  if (level < 0) jpeg_fail(info);
}

inline RasterImage decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct info{};
  JpegErrorManager err{};
  info.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_fail;
  err.base.emit_message = jpeg_message;
  std::vector<std::uint8_t> pixels;
  std::size_t width = 0, height = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&info);
    throw DecodeError(std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&info);
  jpeg_mem_src(&info, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&info, TRUE);
  info.out_color_space = JCS_RGB;
  jpeg_start_decompress(&info);
  width = info.output_width;
  height = info.output_height;
  pixels.resize(width * height * 3);
  while (info.output_scanline < info.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(info.output_scanline) * width * 3;
    jpeg_read_scanlines(&info, &row, 1);
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);
  return RasterImage(width, height, std::move(pixels));
}

inline RasterImage decode_png(std::span<const std::uint8_t> bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError("png: " + msg);
  }
  image.format = PNG_FORMAT_RGB;  // drops alpha by compositing onto black background
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw DecodeError("png: " + msg);
  }
  return RasterImage(image.width, image.height, std::move(pixels));
}

}  // namespace detail

/// Decodes a PNG or JPEG stream, identified by its signature.
inline RasterImage decode_image(std::span<const std::uint8_t> bytes) {
  static constexpr std::uint8_t png_sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(png_sig, png_sig + 8, bytes.begin())) return detail::decode_png(bytes);
  if (bytes.size() >= 3 && bytes[0] == 0xff && bytes[1] == 0xd8 && bytes[2] == 0xff) {
    return detail::decode_jpeg(bytes);
  }
  throw DecodeError("unrecognized image signature at byte offset 0 (expected PNG or JPEG), stream length " +
                    std::to_string(bytes.size()));
}

inline std::vector<std::uint8_t> encode_png(const RasterImage& img) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, img.pixels().data(), 0, nullptr)) {
    throw IoError(std::string("png encode: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels().data(), 0, nullptr)) {
    throw IoError(std::string("png encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline std::vector<std::uint8_t> encode_jpeg(const RasterImage& img, int quality = 90) {
  jpeg_compress_struct info{};
  detail::JpegErrorManager err{};
  info.err = jpeg_std_error(&err.base);
  err.base.error_exit = detail::jpeg_fail;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&info);
    std::free(buffer);
    throw IoError(std::string("jpeg encode: ") + err.message);
  }
  jpeg_create_compress(&info);
  jpeg_mem_dest(&info, &buffer, &size);
  info.image_width = static_cast<JDIMENSION>(img.width());
  info.image_height = static_cast<JDIMENSION>(img.height());
  info.input_components = 3;
  info.in_color_space = JCS_RGB;
  jpeg_set_defaults(&info);
  jpeg_set_quality(&info, quality, TRUE);
  jpeg_start_compress(&info, TRUE);
  while (info.next_scanline < info.image_height) {
    auto* row = const_cast<JSAMPROW>(img.pixels().data() + static_cast<std::size_t>(info.next_scanline) * img.width() * 3);
    jpeg_write_scanlines(&info, &row, 1);
  }
  jpeg_finish_compress(&info);
  jpeg_destroy_compress(&info);
  std::vector<std::uint8_t> out(buffer, buffer + size);
  std::free(buffer);
  return out;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline RasterImage read_image(const std::filesystem::path& path) {
  try {
    return decode_image(read_file(path));
  } catch (const DecodeError& e) {
    throw DecodeError(path.string() + ": " + e.what());
  }
}

inline void write_png(const std::filesystem::path& path, const RasterImage& img) { write_file(path, encode_png(img)); }

inline bool is_image_path(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

/// Image files directly inside `dir`, sorted by file name.
inline std::vector<std::filesystem::path> list_images(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> out;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_path(entry.path())) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::uint8_t clamp_round_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
}

/// Bilinear resampling with half-pixel-centred sample positions, clamped at the borders.
inline RasterImage resize_bilinear(const RasterImage& img, std::size_t out_w, std::size_t out_h) {
  if (out_w < 1 || out_h < 1) throw ShapeError("resize target must be at least 1x1");
  if (out_w == img.width() && out_h == img.height()) return img;
  RasterImage out(out_w, out_h);
  const double sx = static_cast<double>(img.width()) / static_cast<double>(out_w);
  const double sy = static_cast<double>(img.height()) / static_cast<double>(out_h);
  const auto axis = [](std::size_t dst, double scale, std::size_t extent, std::size_t& i0, std::size_t& i1,
                       double& frac) {
    double src = (static_cast<double>(dst) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(src));
    i1 = std::min(i0 + 1, extent - 1);
    frac = src - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    axis(y, sy, img.height(), y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      axis(x, sx, img.width(), x0, x1, fx);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = img.at(x0, y0, c) * (1.0 - fx) + img.at(x1, y0, c) * fx;
        const double bottom = img.at(x0, y1, c) * (1.0 - fx) + img.at(x1, y1, c) * fx;
        out.at(x, y, c) = clamp_round_u8(top * (1.0 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

/// 1 x 3 x H x W tensor with samples mapped v -> v / 127.5 - 1.
inline Tensor image_to_tensor(const RasterImage& img) {
  const std::size_t h = img.height(), w = img.width();
  Tensor t({1, 3, h, w});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) t.at(0, c, y, x) = static_cast<float>(img.at(x, y, c) / 127.5 - 1.0);
  return t;
}

/// Inverse of image_to_tensor for sample `n`: clamp to [-1, 1], then round((v + 1) * 127.5) half away from zero.
inline RasterImage tensor_to_image(const Tensor& t, std::size_t n = 0) {
  const Shape& s = t.shape();
  if (s.c != 3) throw ShapeError("tensor_to_image: expected 3 channels, got shape " + s.str());
  if (n >= s.n) throw ShapeError("tensor_to_image: sample " + std::to_string(n) + " outside batch " + s.str());
  RasterImage img(s.w, s.h);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) {
        const double v = std::clamp(static_cast<double>(t.at(n, c, y, x)), -1.0, 1.0);
        img.at(x, y, c) = clamp_round_u8((v + 1.0) * 127.5);
      }
  return img;
}

}  // namespace toongan
