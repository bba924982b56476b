#pragma once

#include <any>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "amsnet/error.hpp"
#include "amsnet/image.hpp"

namespace ams::nn {

/// Float storage aligned to Eigen's widest packet. Eigen's vectorised
/// reductions peel an unaligned head whose length depends on the address, so
/// without a fixed alignment results could differ between two equal buffers.
using Buffer = std::vector<float, Eigen::aligned_allocator<float>>;

/// Activation tensor stored channel-major over the whole batch: [c][n][h][w].
/// With this layout every convolution is a single GEMM whose output lands
/// directly in place, which matters for batches of tiny sub-images.
struct FeatureMap {
  int c = 0;
  int n = 0;
  int h = 0;
  int w = 0;
  Buffer v;

  FeatureMap() = default;
  FeatureMap(int channels, int batch, int height, int width, float fill = 0.f)
      : c(channels), n(batch), h(height), w(width),
        v(static_cast<std::size_t>(channels) * batch * height * width, fill) {}

  std::size_t pixels() const noexcept { return static_cast<std::size_t>(n) * h * w; }
  std::size_t size() const noexcept { return v.size(); }
  float* channel(int ch) noexcept { return v.data() + ch * pixels(); }
  const float* channel(int ch) const noexcept { return v.data() + ch * pixels(); }
  float& at(int ch, int b, int y, int x) noexcept {
    return v[((static_cast<std::size_t>(ch) * n + b) * h + y) * w + x];
  }
  float at(int ch, int b, int y, int x) const noexcept {
    return v[((static_cast<std::size_t>(ch) * n + b) * h + y) * w + x];
  }
  bool same_shape(const FeatureMap& o) const noexcept {
    return c == o.c && n == o.n && h == o.h && w == o.w;
  }
};

using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

inline MatMap as_matrix(FeatureMap& f) { return {f.v.data(), f.c, static_cast<Eigen::Index>(f.pixels())}; }
inline ConstMatMap as_matrix(const FeatureMap& f) {
  return {f.v.data(), f.c, static_cast<Eigen::Index>(f.pixels())};
}

/// Stacks same-shaped images into one batch.
inline FeatureMap to_feature_map(const std::vector<ImageTensor>& images) {
  if (images.empty()) throw ShapeError("cannot run a denoiser on an empty batch");
  const auto& f = images.front();
  if (f.h == 0 || f.w == 0) throw ShapeError("cannot run a denoiser on a zero-sized image");
  FeatureMap out(f.c, static_cast<int>(images.size()), f.h, f.w);
  const std::size_t plane = f.plane_size();
  for (int b = 0; b < out.n; ++b) {
    const auto& img = images[b];
    if (!img.same_shape(f))
      throw ShapeError("batch images differ in shape: " + shape_string(img) + " vs " + shape_string(f));
    for (int ch = 0; ch < f.c; ++ch)
      std::copy_n(img.data.data() + ch * plane, plane, out.channel(ch) + b * plane);
  }
  return out;
}

inline std::vector<ImageTensor> to_images(const FeatureMap& fm) {
  std::vector<ImageTensor> out;
  out.reserve(fm.n);
  const std::size_t plane = static_cast<std::size_t>(fm.h) * fm.w;
  for (int b = 0; b < fm.n; ++b) {
    ImageTensor img(fm.c, fm.h, fm.w);
    for (int ch = 0; ch < fm.c; ++ch)
      std::copy_n(fm.channel(ch) + b * plane, plane, img.data.data() + ch * plane);
    out.push_back(std::move(img));
  }
  return out;
}

/// Stack of per-layer forward caches. Layers push during a recording forward
/// pass and pop in reverse order during backward.
class Tape {
 public:
  template <typename T>
  void push(T&& value) {
    stack_.emplace_back(std::forward<T>(value));
  }

  template <typename T>
  T pop() {
    if (stack_.empty()) throw Error("tape underflow during backward pass");
    T out = std::any_cast<T>(std::move(stack_.back()));
    stack_.pop_back();
    return out;
  }

  bool empty() const noexcept { return stack_.empty(); }
  std::size_t size() const noexcept { return stack_.size(); }

 private:
  std::vector<std::any> stack_;
};

/// A trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Buffer value;
  Buffer grad;

  Parameter() = default;
  Parameter(std::string n, std::size_t size) : name(std::move(n)), value(size, 0.f), grad(size, 0.f) {}
  std::size_t size() const noexcept { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.f); }
};

}  // namespace ams::nn
