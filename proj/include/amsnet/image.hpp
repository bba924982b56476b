#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "amsnet/error.hpp"

namespace ams {

enum class ColorSpace { srgb, linear_luma };

/// Planar c x h x w image. Channel-major, then row-major within a plane.
template <typename T>
struct BasicImage {
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;
  ColorSpace color_space = ColorSpace::srgb;

  BasicImage() = default;
  BasicImage(int channels, int height, int width, T fill = T(0))
      : c(channels), h(height), w(width) {
    if (channels <= 0 || height < 0 || width < 0)
      throw ShapeError("invalid image shape " + std::to_string(channels) + "x" +
                       std::to_string(height) + "x" + std::to_string(width));
    data.assign(static_cast<std::size_t>(c) * h * w, fill);
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(h) * w; }
  bool empty() const noexcept { return data.empty(); }

  T& at(int ch, int y, int x) noexcept { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  const T& at(int ch, int y, int x) const noexcept {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }

  std::span<T> plane(int ch) noexcept { return {data.data() + ch * plane_size(), plane_size()}; }
  std::span<const T> plane(int ch) const noexcept {
    return {data.data() + ch * plane_size(), plane_size()};
  }

  bool same_shape(const BasicImage& o) const noexcept { return c == o.c && h == o.h && w == o.w; }
  friend bool operator==(const BasicImage& a, const BasicImage& b) {
    return a.same_shape(b) && a.data == b.data;
  }
};

using ImageTensor = BasicImage<float>;

inline std::string shape_string(int c, int h, int w) {
  return std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
}

template <typename T>
std::string shape_string(const BasicImage<T>& img) {
  return shape_string(img.c, img.h, img.w);
}

template <typename T>
void require_same_shape(const BasicImage<T>& a, const BasicImage<T>& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape " + shape_string(a) + " vs " + shape_string(b));
}

template <typename U, typename T>
BasicImage<U> image_cast(const BasicImage<T>& src) {
  BasicImage<U> out(src.c, src.h, src.w);
  out.color_space = src.color_space;
  std::transform(src.data.begin(), src.data.end(), out.data.begin(),
                 [](T v) { return static_cast<U>(v); });
  return out;
}

template <typename T>
BasicImage<T> clamp01(BasicImage<T> img) {
  for (auto& v : img.data) v = std::clamp(v, T(0), T(1));
  return img;
}

template <typename T>
bool all_finite(const BasicImage<T>& img) {
  return std::all_of(img.data.begin(), img.data.end(), [](T v) { return std::isfinite(v); });
}

/// Checks the invariants an image must satisfy once loaded from disk.
template <typename T>
void validate_ingested(const BasicImage<T>& img) {
  if (img.c != 1 && img.c != 3)
    throw ShapeError("images must have 1 or 3 channels, got " + std::to_string(img.c));
  for (T v : img.data)
    if (!std::isfinite(v) || v < T(0) || v > T(1))
      throw ShapeError("image values must be finite and within [0,1]");
}

}  // namespace ams
