#pragma once

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <string>
#include <vector>

#include "amsnet/error.hpp"
#include "amsnet/image.hpp"
#include "amsnet/masking.hpp"
#include "amsnet/pixel_downsample.hpp"
#include "amsnet/rng.hpp"

namespace ams {

/// Anything that maps a batch of same-shaped images to same-shaped outputs.
/// DenoiserHandle models it; tests plug in identity/constant stubs.
template <typename D>
concept BatchDenoiser = requires(const D& d, const std::vector<ImageTensor>& batch) {
  { d.denoise_batch(batch) } -> std::convertible_to<std::vector<ImageTensor>>;
  { d.spatial_multiple() } -> std::convertible_to<int>;
};

/// How the refinement replicates are denoised.
///   plain  : one forward pass of the denoiser on the full-resolution image.
///   masked : complementary-mask denoising at stride 1 (no pixel downsampling),
///            one fixed partition shared by all replicates.
enum class RefinePass { plain, masked };

inline std::string to_string(RefinePass p) { return p == RefinePass::plain ? "plain" : "masked"; }

inline RefinePass refine_pass_from_string(const std::string& s) {
  if (s == "plain") return RefinePass::plain;
  if (s == "masked") return RefinePass::masked;
  throw ConfigError("refine_pass", "expected 'plain' or 'masked', got '" + s + "'");
}

struct RefineConfig {
  bool enabled = false;
  int replicas = 8;          // T
  double replace_prob = 0.16;  // p
  RefinePass pass = RefinePass::plain;
};

struct InferConfig {
  int s_inf = 2;
  int k = 2;
  std::uint64_t seed = 0;
  RefineConfig refine;
  int tile = 0;  // 0 disables tiling
  int tile_overlap = 32;

  void validate() const {
    if (s_inf < 1) throw ConfigError("s_inf", "must be >= 1, got " + std::to_string(s_inf));
    if (k < 2) throw ConfigError("k", "need at least 2 denoising branches, got " + std::to_string(k));
    if (refine.replicas < 1) throw ConfigError("refine_T", "must be >= 1");
    if (!(refine.replace_prob >= 0.0 && refine.replace_prob <= 1.0))
      throw ConfigError("refine_p", "must lie in [0,1], got " + std::to_string(refine.replace_prob));
    if (tile < 0) throw ConfigError("tile", "must be >= 0");
    if (tile > 0 && (tile_overlap < 0 || tile_overlap >= tile))
      throw ConfigError("tile_overlap", "must lie in [0, tile)");
  }
};

enum class Variant { B, P, B_E, P_E };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::B: return "B";
    case Variant::P: return "P";
    case Variant::B_E: return "B-E";
    case Variant::P_E: return "P-E";
  }
  return "?";
}

inline Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::B, Variant::P, Variant::B_E, Variant::P_E})
    if (to_string(v) == s) return v;
  throw ConfigError("variant", "expected B, P, B-E or P-E, got '" + s + "'");
}

/// Training tag ("B" or "P") a checkpoint must carry to serve this variant.
inline std::string required_training_tag(Variant v) {
  return (v == Variant::B || v == Variant::B_E) ? "B" : "P";
}

inline bool uses_refinement(Variant v) { return v == Variant::B_E || v == Variant::P_E; }

namespace detail {

template <BatchDenoiser D>
std::vector<ImageTensor> run_checked(const D& d, const std::vector<ImageTensor>& batch) {
  auto out = d.denoise_batch(batch);
  if (out.size() != batch.size()) throw ShapeError("denoiser returned a different batch size");
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!out[i].same_shape(batch[i])) throw ShapeError("denoiser changed the image shape");
  return out;
}

inline void add_masked(ImageTensor& acc, const ImageTensor& src, const MaskTensor& keep_mask) {
  const std::size_t n = acc.plane_size();
  for (int ch = 0; ch < acc.c; ++ch)
    for (std::size_t p = 0; p < n; ++p)
      if (!keep_mask.data[p]) acc.data[ch * n + p] += src.data[ch * n + p];
}

}  // namespace detail

/// One branch: denoise the masked sub-images and keep the output only at the
/// hidden positions. Exactly zero wherever the keep mask is 1.
template <BatchDenoiser D>
SubSampleSet branch_denoise(const D& d, const SubSampleSet& subs, const MaskSet& mask_set) {
  const auto masked = apply_mask(subs, mask_set);
  auto out = detail::run_checked(d, masked.subs);
  SubSampleSet result;
  result.stride = subs.stride;
  for (std::size_t j = 0; j < out.size(); ++j) {
    ImageTensor o(out[j].c, out[j].h, out[j].w);
    detail::add_masked(o, out[j], mask_set[j]);
    result.subs.push_back(std::move(o));
  }
  return result;
}

/// Multi-branch complementary denoising: the sum of all branch outputs. Each
/// branch is a separate denoiser call, so the result does not depend on the
/// order of the branches.
template <BatchDenoiser D>
SubSampleSet mmdb_denoise(const D& d, const SubSampleSet& subs, const MaskPartition& partition) {
  validate_partition(partition);
  for (const auto& set : partition.branch_masks) require_aligned(subs, set);
  SubSampleSet result;
  result.stride = subs.stride;
  for (const auto& s : subs.subs) result.subs.emplace_back(s.c, s.h, s.w);
  for (const auto& set : partition.branch_masks) {
    const auto out = detail::run_checked(d, apply_mask(subs, set).subs);
    for (std::size_t j = 0; j < subs.size(); ++j) detail::add_masked(result.subs[j], out[j], set[j]);
  }
  return result;
}

namespace detail {

template <BatchDenoiser D>
ImageTensor denoise_whole(const D& d, const ImageTensor& img, int s, int k, std::uint64_t seed) {
  const int multiple = s * d.spatial_multiple();
  const auto [padded, pad] = pad_reflect(img, multiple);
  const auto subs = pd_split(padded, s);
  const auto part = sample_partition_for_stride(subs[0].h, subs[0].w, s, k, seed);
  return crop(pd_merge(mmdb_denoise(d, subs, part), s), pad);
}

inline std::vector<int> tile_starts(int extent, int tile, int overlap) {
  if (extent <= tile) return {0};
  std::vector<int> starts;
  const int step = tile - overlap;
  for (int s = 0;; s += step) {
    if (s + tile >= extent) {
      starts.push_back(extent - tile);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

struct TileRect {
  int y0, x0, h, w;
};

inline ImageTensor extract_tile(const ImageTensor& img, const TileRect& r) {
  ImageTensor part(img.c, r.h, r.w);
  part.color_space = img.color_space;
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y < r.h; ++y)
      for (int x = 0; x < r.w; ++x) part.at(ch, y, x) = img.at(ch, r.y0 + y, r.x0 + x);
  return part;
}

/// Runs `process(rect, tile_index)` on overlapping tiles covering an image of
/// the given shape and averages the results where tiles overlap.
template <typename F>
ImageTensor tiled(int c, int h, int w, int tile, int overlap, F&& process) {
  const auto ys = tile_starts(h, tile, overlap), xs = tile_starts(w, tile, overlap);
  ImageTensor acc(c, h, w);
  std::vector<float> weight(static_cast<std::size_t>(h) * w, 0.f);
  std::uint64_t index = 0;
  for (int y0 : ys)
    for (int x0 : xs) {
      const TileRect r{y0, x0, std::min(tile, h), std::min(tile, w)};
      const ImageTensor out = process(r, index++);
      for (int ch = 0; ch < c; ++ch)
        for (int y = 0; y < r.h; ++y)
          for (int x = 0; x < r.w; ++x) acc.at(ch, y0 + y, x0 + x) += out.at(ch, y, x);
      for (int y = 0; y < r.h; ++y)
        for (int x = 0; x < r.w; ++x) weight[(y0 + y) * w + x0 + x] += 1.f;
    }
  const std::size_t n = acc.plane_size();
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < n; ++p) acc.data[ch * n + p] /= weight[p];
  return acc;
}

}  // namespace detail

/// pad -> split -> complementary partition -> branch sum -> merge -> crop, without the
/// final clamp. `image_index` selects an independent partition stream so that
/// concurrent or reordered processing gives identical results.
template <BatchDenoiser D>
ImageTensor denoise_image_raw(const D& d, const ImageTensor& img, const InferConfig& cfg,
                              std::uint64_t image_index = 0) {
  cfg.validate();
  const std::uint64_t seed = derive_seed(cfg.seed, {image_index, 0x696e66ULL});
  if (cfg.tile > 0 && (img.h > cfg.tile || img.w > cfg.tile))
    return detail::tiled(img.c, img.h, img.w, cfg.tile, cfg.tile_overlap,
                         [&](const detail::TileRect& r, std::uint64_t t) {
                           return detail::denoise_whole(d, detail::extract_tile(img, r), cfg.s_inf, cfg.k,
                                                        derive_seed(seed, {t}));
                         });
  return detail::denoise_whole(d, img, cfg.s_inf, cfg.k, seed);
}

template <BatchDenoiser D>
ImageTensor denoise_image(const D& d, const ImageTensor& img, const InferConfig& cfg,
                          std::uint64_t image_index = 0) {
  return clamp01(denoise_image_raw(d, img, cfg, image_index));
}

/// Single refinement forward pass, see RefinePass.
template <BatchDenoiser D>
ImageTensor refine_forward(const D& d, const ImageTensor& img, RefinePass pass, std::uint64_t seed) {
  if (pass == RefinePass::masked) return detail::denoise_whole(d, img, 1, 2, derive_seed(seed, {0x726566ULL}));
  const auto [padded, pad] = pad_reflect(img, d.spatial_multiple());
  return crop(detail::run_checked(d, std::vector<ImageTensor>{padded}).front(), pad);
}

/// Random replacement refinement: T replicates, each splicing noisy pixels
/// into the intermediate result with probability p (per pixel, all channels),
/// denoised by refine_forward and averaged.
template <BatchDenoiser D>
ImageTensor refine_r3(const D& d, const ImageTensor& noisy, const ImageTensor& intermediate, int replicas,
                      double replace_prob, std::uint64_t seed, RefinePass pass = RefinePass::plain) {
  require_same_shape(noisy, intermediate, "refinement");
  if (replicas < 1) throw ConfigError("refine_T", "must be >= 1, got " + std::to_string(replicas));
  if (!(replace_prob >= 0.0 && replace_prob <= 1.0))
    throw ConfigError("refine_p", "must lie in [0,1], got " + std::to_string(replace_prob));
  std::vector<double> acc(noisy.size(), 0.0);
  const std::size_t n = noisy.plane_size();
  for (int t = 0; t < replicas; ++t) {
    auto rng = make_rng(derive_seed(seed, {static_cast<std::uint64_t>(t), 0x72337233ULL}));
    ImageTensor x = intermediate;
    for (std::size_t p = 0; p < n; ++p)
      if (uniform01(rng) < replace_prob)
        for (int ch = 0; ch < x.c; ++ch) x.data[ch * n + p] = noisy.data[ch * n + p];
    const auto y = refine_forward(d, x, pass, seed);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += y.data[i];
  }
  ImageTensor out(noisy.c, noisy.h, noisy.w);
  out.color_space = noisy.color_space;
  for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i] / replicas);
  return out;
}

/// Full inference for a variant. `checkpoint_tag` is the training tag of the
/// loaded weights ("B" or "P"); B-family variants need B weights and
/// P-family variants need P weights.
template <BatchDenoiser D>
ImageTensor denoise_variant(const D& d, const ImageTensor& img, Variant variant, const InferConfig& cfg,
                            const std::string& checkpoint_tag, std::uint64_t image_index = 0) {
  if (checkpoint_tag != required_training_tag(variant))
    throw ConfigError("variant", "variant " + to_string(variant) + " needs a checkpoint trained as '" +
                                     required_training_tag(variant) + "', got '" + checkpoint_tag + "'");
  ImageTensor out = denoise_image_raw(d, img, cfg, image_index);
  if (uses_refinement(variant) || cfg.refine.enabled) {
    const std::uint64_t seed = derive_seed(cfg.seed, {image_index, 0x72656669ULL});
    if (cfg.tile > 0 && (img.h > cfg.tile || img.w > cfg.tile)) {
      const ImageTensor inter = std::move(out);
      out = detail::tiled(img.c, img.h, img.w, cfg.tile, cfg.tile_overlap,
                          [&](const detail::TileRect& r, std::uint64_t t) {
                            return refine_r3(d, detail::extract_tile(img, r), detail::extract_tile(inter, r),
                                             cfg.refine.replicas, cfg.refine.replace_prob, derive_seed(seed, {t}),
                                             cfg.refine.pass);
                          });
    } else {
      out = refine_r3(d, img, out, cfg.refine.replicas, cfg.refine.replace_prob, seed, cfg.refine.pass);
    }
  }
  return clamp01(std::move(out));
}

}  // namespace ams
