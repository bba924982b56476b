#pragma once

#include <string>
#include <vector>

#include "amsnet/error.hpp"
#include "amsnet/image.hpp"

namespace ams {

/// The s*s phase sub-images of a stride-s pixel downsampling. Phase (a, b)
/// lives at index a * stride + b and holds img[:, a::s, b::s].
template <typename T>
struct BasicSubSampleSet {
  int stride = 1;
  std::vector<BasicImage<T>> subs;

  std::size_t size() const noexcept { return subs.size(); }
  BasicImage<T>& operator[](std::size_t i) { return subs[i]; }
  const BasicImage<T>& operator[](std::size_t i) const { return subs[i]; }
};

using SubSampleSet = BasicSubSampleSet<float>;

/// Reflection padding amounts. Padding is only ever added at the bottom and
/// right so that pixel phases of the original image are preserved.
struct PadSpec {
  int top = 0;
  int bottom = 0;
  int left = 0;
  int right = 0;

  bool is_zero() const noexcept { return top == 0 && bottom == 0 && left == 0 && right == 0; }
  friend bool operator==(const PadSpec&, const PadSpec&) = default;
};

template <typename T>
void validate_subsample_set(const BasicSubSampleSet<T>& set) {
  const int s = set.stride;
  if (s < 1) throw ShapeError("pixel downsampling stride must be >= 1, got " + std::to_string(s));
  if (set.subs.size() != static_cast<std::size_t>(s) * s)
    throw ShapeError("expected " + std::to_string(s * s) + " sub-images for stride " +
                     std::to_string(s) + ", got " + std::to_string(set.subs.size()));
  for (const auto& sub : set.subs)
    if (!sub.same_shape(set.subs.front()))
      throw ShapeError("sub-images have inconsistent shapes: " + shape_string(sub) + " vs " +
                       shape_string(set.subs.front()));
}

template <typename T>
BasicSubSampleSet<T> pd_split(const BasicImage<T>& img, int s) {
  if (s < 1) throw ShapeError("pixel downsampling stride must be >= 1, got " + std::to_string(s));
  if (img.h % s != 0 || img.w % s != 0)
    throw ShapeError("image " + shape_string(img) + " not divisible by stride " + std::to_string(s) +
                     " (remainder " + std::to_string(img.h % s) + " rows, " +
                     std::to_string(img.w % s) + " cols)");
  BasicSubSampleSet<T> out;
  out.stride = s;
  const int sh = img.h / s, sw = img.w / s;
  out.subs.reserve(static_cast<std::size_t>(s) * s);
  for (int a = 0; a < s; ++a)
    for (int b = 0; b < s; ++b) {
      BasicImage<T> sub(img.c, sh, sw);
      sub.color_space = img.color_space;
      for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < sh; ++y)
          for (int x = 0; x < sw; ++x) sub.at(ch, y, x) = img.at(ch, y * s + a, x * s + b);
      out.subs.push_back(std::move(sub));
    }
  return out;
}

template <typename T>
BasicImage<T> pd_merge(const BasicSubSampleSet<T>& set) {
  validate_subsample_set(set);
  const int s = set.stride;
  const auto& first = set.subs.front();
  BasicImage<T> img(first.c, first.h * s, first.w * s);
  img.color_space = first.color_space;
  for (int a = 0; a < s; ++a)
    for (int b = 0; b < s; ++b) {
      const auto& sub = set.subs[a * s + b];
      for (int ch = 0; ch < img.c; ++ch)
        for (int y = 0; y < sub.h; ++y)
          for (int x = 0; x < sub.w; ++x) img.at(ch, y * s + a, x * s + b) = sub.at(ch, y, x);
    }
  return img;
}

/// Overload that checks the expected stride as well.
template <typename T>
BasicImage<T> pd_merge(const BasicSubSampleSet<T>& set, int s) {
  if (set.stride != s)
    throw ShapeError("sub-sample set has stride " + std::to_string(set.stride) + ", expected " +
                     std::to_string(s));
  return pd_merge(set);
}

namespace detail {

// Mirror index without repeating the edge sample (numpy "reflect").
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace detail

/// Reflect-pads bottom/right so that both dimensions become multiples of `s`.
template <typename T>
std::pair<BasicImage<T>, PadSpec> pad_reflect(const BasicImage<T>& img, int s) {
  if (s <= 0) throw ShapeError("padding multiple must be positive, got " + std::to_string(s));
  PadSpec pad;
  pad.bottom = (s - img.h % s) % s;
  pad.right = (s - img.w % s) % s;
  if (pad.is_zero()) return {img, pad};
  BasicImage<T> out(img.c, img.h + pad.bottom, img.w + pad.right);
  out.color_space = img.color_space;
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y < out.h; ++y) {
      const int sy = detail::reflect_index(y, img.h);
      for (int x = 0; x < out.w; ++x) out.at(ch, y, x) = img.at(ch, sy, detail::reflect_index(x, img.w));
    }
  return {std::move(out), pad};
}

template <typename T>
BasicImage<T> crop(const BasicImage<T>& img, const PadSpec& pad) {
  if (pad.top < 0 || pad.bottom < 0 || pad.left < 0 || pad.right < 0)
    throw ShapeError("negative padding in crop");
  const int h = img.h - pad.top - pad.bottom, w = img.w - pad.left - pad.right;
  if (h <= 0 || w <= 0) throw ShapeError("crop removes the whole image " + shape_string(img));
  if (pad.is_zero()) return img;
  BasicImage<T> out(img.c, h, w);
  out.color_space = img.color_space;
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(ch, y, x) = img.at(ch, y + pad.top, x + pad.left);
  return out;
}

/// Adjoint of crop: embeds `img` into a zero canvas of the padded size.
template <typename T>
BasicImage<T> uncrop_zero(const BasicImage<T>& img, const PadSpec& pad) {
  if (pad.is_zero()) return img;
  BasicImage<T> out(img.c, img.h + pad.top + pad.bottom, img.w + pad.left + pad.right);
  out.color_space = img.color_space;
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) out.at(ch, y + pad.top, x + pad.left) = img.at(ch, y, x);
  return out;
}

}  // namespace ams
