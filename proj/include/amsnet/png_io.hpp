#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "amsnet/error.hpp"
#include "amsnet/image.hpp"

namespace ams {

struct ImageShape {
  int c = 0, h = 0, w = 0;
};

namespace detail {

struct PngImage {
  png_image img{};
  PngImage() {
    img.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&img); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

inline void begin_read(PngImage& p, const std::filesystem::path& path) {
  if (!png_image_begin_read_from_file(&p.img, path.string().c_str()))
    throw IoError("cannot decode PNG " + path.string() + ": " + p.img.message);
}

}  // namespace detail

/// Reads dimensions without decoding pixels. Colour PNGs report 3 channels,
/// grey PNGs 1; alpha is ignored.
inline ImageShape read_png_shape(const std::filesystem::path& path) {
  detail::PngImage p;
  detail::begin_read(p, path);
  return {(p.img.format & PNG_FORMAT_FLAG_COLOR) ? 3 : 1, static_cast<int>(p.img.height),
          static_cast<int>(p.img.width)};
}

/// Decodes an 8-bit PNG to a [0,1] image (alpha dropped, palette expanded).
inline ImageTensor read_png(const std::filesystem::path& path) {
  detail::PngImage p;
  detail::begin_read(p, path);
  const bool color = p.img.format & PNG_FORMAT_FLAG_COLOR;
  p.img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  const int c = color ? 3 : 1, h = static_cast<int>(p.img.height), w = static_cast<int>(p.img.width);
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(p.img));
  if (!png_image_finish_read(&p.img, nullptr, buf.data(), 0, nullptr))
    throw IoError("cannot decode PNG " + path.string() + ": " + p.img.message);
  ImageTensor out(c, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) out.at(ch, y, x) = buf[(static_cast<std::size_t>(y) * w + x) * c + ch] / 255.f;
  return out;
}

/// Writes an 8-bit PNG; values are clamped to [0,1] and rounded.
inline void write_png(const std::filesystem::path& path, const ImageTensor& img) {
  if (img.c != 1 && img.c != 3) throw ShapeError("PNG export needs 1 or 3 channels, got " + shape_string(img));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::vector<png_byte> buf(img.size());
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        const float v = std::clamp(img.at(ch, y, x), 0.f, 1.f);
        buf[(static_cast<std::size_t>(y) * img.w + x) * img.c + ch] = static_cast<png_byte>(std::lround(v * 255.f));
      }
  detail::PngImage p;
  p.img.width = static_cast<png_uint_32>(img.w);
  p.img.height = static_cast<png_uint_32>(img.h);
  p.img.format = img.c == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&p.img, path.string().c_str(), 0, buf.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + p.img.message);
}

}  // namespace ams
