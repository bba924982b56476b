#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "amsnet/error.hpp"
#include "amsnet/pixel_downsample.hpp"
#include "amsnet/rng.hpp"

namespace ams {

/// Binary h x w mask, broadcast over channels. 1 = kept, 0 = masked.
struct MaskTensor {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> data;

  MaskTensor() = default;
  MaskTensor(int height, int width, std::uint8_t fill = 1)
      : h(height), w(width), data(static_cast<std::size_t>(height) * width, fill) {
    if (height <= 0 || width <= 0) throw ShapeError("mask shape must be positive");
  }

  std::size_t size() const noexcept { return data.size(); }
  std::uint8_t operator()(int y, int x) const noexcept { return data[static_cast<std::size_t>(y) * w + x]; }
  std::uint8_t& operator()(int y, int x) noexcept { return data[static_cast<std::size_t>(y) * w + x]; }
  std::size_t count_zeros() const noexcept {
    return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{0}));
  }
  friend bool operator==(const MaskTensor&, const MaskTensor&) = default;
};

/// One mask per sub-image of a SubSampleSet.
using MaskSet = std::vector<MaskTensor>;

/// k complementary mask sets: every sub-image pixel is masked (and therefore
/// restored) in exactly one branch.
struct MaskPartition {
  std::vector<MaskSet> branch_masks;

  int k() const noexcept { return static_cast<int>(branch_masks.size()); }
};

inline MaskTensor complement(const MaskTensor& m) {
  MaskTensor out = m;
  for (auto& v : out.data) v = static_cast<std::uint8_t>(1 - v);
  return out;
}

inline MaskSet complement(const MaskSet& set) {
  MaskSet out;
  out.reserve(set.size());
  for (const auto& m : set) out.push_back(complement(m));
  return out;
}

namespace detail {

inline void check_ratio(double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0))
    throw ConfigError("mask_ratio", "must lie in [0,1], got " + std::to_string(ratio));
}

// Fills `m` with exactly `zeros` zeros at uniformly random distinct positions
// (partial Fisher-Yates).
inline void place_zeros(MaskTensor& m, std::size_t zeros, Rng& rng) {
  std::vector<std::uint32_t> idx(m.size());
  std::iota(idx.begin(), idx.end(), 0u);
  for (std::size_t i = 0; i < zeros; ++i) {
    const auto j = uniform_int<std::size_t>(rng, i, idx.size() - 1);
    std::swap(idx[i], idx[j]);
    m.data[idx[i]] = 0;
  }
}

}  // namespace detail

/// Exactly round(ratio * h * w) masked pixels, deterministic in `seed`.
inline MaskTensor sample_mask(int h, int w, double ratio, std::uint64_t seed) {
  detail::check_ratio(ratio);
  MaskTensor m(h, w, 1);
  auto rng = make_rng(seed);
  detail::place_zeros(m, static_cast<std::size_t>(std::llround(ratio * h * w)), rng);
  return m;
}

/// Independent masks for each of `count` sub-images of shape h x w.
inline MaskSet sample_mask_set(int h, int w, int count, double ratio, std::uint64_t seed) {
  MaskSet set;
  set.reserve(count);
  for (int i = 0; i < count; ++i)
    set.push_back(sample_mask(h, w, ratio, derive_seed(seed, {static_cast<std::uint64_t>(i)})));
  return set;
}

/// Checks the complementarity identities: summed over branches every mask
/// entry equals k-1 and every complement entry equals 1.
inline void validate_partition(const MaskPartition& part) {
  const int k = part.k();
  if (k < 2) throw ConfigError("k", "a mask partition needs at least 2 branches, got " + std::to_string(k));
  const auto& ref = part.branch_masks.front();
  for (const auto& set : part.branch_masks) {
    if (set.size() != ref.size()) throw ShapeError("partition branches have different sub-image counts");
    for (std::size_t j = 0; j < set.size(); ++j)
      if (set[j].h != ref[j].h || set[j].w != ref[j].w)
        throw ShapeError("partition branches have mismatched mask shapes");
  }
  for (std::size_t j = 0; j < ref.size(); ++j)
    for (std::size_t p = 0; p < ref[j].size(); ++p) {
      int sum = 0;
      for (const auto& set : part.branch_masks) sum += set[j].data[p];
      if (sum != k - 1)
        throw ShapeError("mask partition is not complementary at sub-image " + std::to_string(j) +
                         ", pixel " + std::to_string(p) + " (mask sum " + std::to_string(sum) +
                         ", expected " + std::to_string(k - 1) + ")");
    }
}

/// Random k-way partition of the pixels of `count` sub-images. Within each
/// sub-image a random permutation is dealt round-robin to the branches, so
/// branch sizes differ by at most one.
inline MaskPartition sample_partition(int h, int w, int count, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k", "need k >= 2 denoising branches, got " + std::to_string(k));
  if (count < 1) throw ShapeError("partition needs at least one sub-image");
  MaskPartition part;
  part.branch_masks.assign(k, MaskSet(count, MaskTensor(h, w, 1)));
  std::vector<std::uint32_t> idx(static_cast<std::size_t>(h) * w);
  for (int j = 0; j < count; ++j) {
    auto rng = make_rng(derive_seed(seed, {static_cast<std::uint64_t>(j)}));
    std::iota(idx.begin(), idx.end(), 0u);
    std::shuffle(idx.begin(), idx.end(), rng);
    // Rotate which branch receives the remainder pixel.
    const int offset = j % k;
    for (std::size_t p = 0; p < idx.size(); ++p)
      part.branch_masks[(p + offset) % k][j].data[idx[p]] = 0;
  }
  return part;
}

/// Partition for a stride-s sub-sample set whose sub-images are h x w.
inline MaskPartition sample_partition_for_stride(int h, int w, int s, int k, std::uint64_t seed) {
  return sample_partition(h, w, s * s, k, seed);
}

template <typename T>
void require_aligned(const BasicSubSampleSet<T>& subs, const MaskSet& masks) {
  if (subs.size() != masks.size())
    throw ShapeError("mask set has " + std::to_string(masks.size()) + " masks for " +
                     std::to_string(subs.size()) + " sub-images");
  for (std::size_t i = 0; i < subs.size(); ++i)
    if (subs[i].h != masks[i].h || subs[i].w != masks[i].w)
      throw ShapeError("mask " + std::to_string(i) + " is " + std::to_string(masks[i].h) + "x" +
                       std::to_string(masks[i].w) + " but sub-image is " + shape_string(subs[i]));
}

/// Elementwise mask multiply of one image (mask broadcast over channels).
template <typename T>
BasicImage<T> apply_mask(const BasicImage<T>& img, const MaskTensor& m) {
  if (img.h != m.h || img.w != m.w) throw ShapeError("mask does not match image " + shape_string(img));
  BasicImage<T> out = img;
  const std::size_t n = img.plane_size();
  for (int ch = 0; ch < img.c; ++ch) {
    T* p = out.data.data() + ch * n;
    for (std::size_t i = 0; i < n; ++i)
      if (!m.data[i]) p[i] = T(0);
  }
  return out;
}

/// Masked positions become zero tokens in every channel.
template <typename T>
BasicSubSampleSet<T> apply_mask(const BasicSubSampleSet<T>& subs, const MaskSet& masks) {
  require_aligned(subs, masks);
  BasicSubSampleSet<T> out;
  out.stride = subs.stride;
  out.subs.reserve(subs.size());
  for (std::size_t i = 0; i < subs.size(); ++i) out.subs.push_back(apply_mask(subs[i], masks[i]));
  return out;
}

}  // namespace ams
