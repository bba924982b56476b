#pragma once

#include <cmath>
#include <map>
#include <string>

#include "amsnet/error.hpp"
#include "amsnet/image.hpp"
#include "amsnet/masking.hpp"
#include "amsnet/pixel_downsample.hpp"

namespace ams {

/// Scalar loss with its named parts. All losses are sums, not means.
template <typename T>
struct LossValue {
  T value{};
  std::map<std::string, T> components;
};

/// A loss together with its gradient with respect to the prediction.
template <typename T, typename Grad>
struct LossWithGrad {
  LossValue<T> loss;
  Grad grad;

  T value() const noexcept { return loss.value; }
};

/// Square-root floor of the smoothness prior; keeps it differentiable on flat regions.
inline constexpr double kTvEpsilon = 1e-8;

namespace detail {

template <typename T>
T sign(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

}  // namespace detail

/// || output - target ||_1 over the whole image.
template <typename T>
LossWithGrad<T, BasicImage<T>> l1_loss(const BasicImage<T>& output, const BasicImage<T>& target) {
  require_same_shape(output, target, "l1 loss");
  LossWithGrad<T, BasicImage<T>> r{{}, BasicImage<T>(output.c, output.h, output.w)};
  double sum = 0.0;
  for (std::size_t i = 0; i < output.size(); ++i) {
    const T d = output.data[i] - target.data[i];
    sum += std::abs(static_cast<double>(d));
    r.grad.data[i] = detail::sign(d);
  }
  r.loss.value = static_cast<T>(sum);
  r.loss.components["l1"] = r.loss.value;
  return r;
}

/// Blind-spot objective: L1 distance between the network output and its own noisy input.
/// Used by the identity-mapping ablation.
template <typename T>
LossWithGrad<T, BasicImage<T>> bsn_loss(const BasicImage<T>& output, const BasicImage<T>& noisy) {
  auto r = l1_loss(output, noisy);
  r.loss.components = {{"bsn", r.loss.value}};
  return r;
}

/// Masked self-supervised loss: L1 distance between outputs and sub-images,
/// summed over every sub-image. Only positions hidden by the input mask (value 0)
/// contribute; the gradient is zero elsewhere.
template <typename T>
LossWithGrad<T, BasicSubSampleSet<T>> mask_loss(const MaskSet& masks, const BasicSubSampleSet<T>& subs,
                                                const BasicSubSampleSet<T>& outputs) {
  require_aligned(subs, masks);
  if (outputs.size() != subs.size()) throw ShapeError("mask loss: output count differs from sub-image count");
  LossWithGrad<T, BasicSubSampleSet<T>> r;
  r.grad.stride = subs.stride;
  double sum = 0.0;
  for (std::size_t j = 0; j < subs.size(); ++j) {
    const auto& in = subs[j];
    const auto& out = outputs[j];
    require_same_shape(out, in, "mask loss");
    BasicImage<T> g(in.c, in.h, in.w);
    const std::size_t n = in.plane_size();
    for (int ch = 0; ch < in.c; ++ch)
      for (std::size_t p = 0; p < n; ++p) {
        if (masks[j].data[p]) continue;
        const std::size_t i = ch * n + p;
        const T d = out.data[i] - in.data[i];
        sum += std::abs(static_cast<double>(d));
        g.data[i] = detail::sign(d);
      }
    r.grad.subs.push_back(std::move(g));
  }
  r.loss.value = static_cast<T>(sum);
  r.loss.components["mask"] = r.loss.value;
  return r;
}

/// Smoothness prior sum_{i<h-1, j<w-1} sqrt(dy^2 + dx^2 + eps), summed over channels.
template <typename T>
LossWithGrad<T, BasicImage<T>> tv_loss(const BasicImage<T>& img) {
  if (img.h < 2 || img.w < 2)
    throw ShapeError("smoothness loss needs at least 2x2 pixels, got " + shape_string(img));
  LossWithGrad<T, BasicImage<T>> r{{}, BasicImage<T>(img.c, img.h, img.w)};
  const T eps = static_cast<T>(kTvEpsilon);
  double sum = 0.0;
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y + 1 < img.h; ++y)
      for (int x = 0; x + 1 < img.w; ++x) {
        const T c0 = img.at(ch, y, x);
        const T dy = img.at(ch, y + 1, x) - c0;
        const T dx = img.at(ch, y, x + 1) - c0;
        const T mag = std::sqrt(dy * dy + dx * dx + eps);
        sum += static_cast<double>(mag);
        r.grad.at(ch, y + 1, x) += dy / mag;
        r.grad.at(ch, y, x + 1) += dx / mag;
        r.grad.at(ch, y, x) -= (dy + dx) / mag;
      }
  r.loss.value = static_cast<T>(sum);
  r.loss.components["smoothness"] = r.loss.value;
  return r;
}

/// Fine-tuning objective: lambda * tv(denoised) + ||denoised - noisy||_1.
template <typename T>
LossWithGrad<T, BasicImage<T>> total_loss(const BasicImage<T>& denoised, const BasicImage<T>& noisy,
                                          double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("lambda", "must be non-negative, got " + std::to_string(lambda));
  require_same_shape(denoised, noisy, "total loss");
  auto l1 = l1_loss(denoised, noisy);
  LossWithGrad<T, BasicImage<T>> r{{}, std::move(l1.grad)};
  T smooth = T(0);
  if (lambda > 0.0) {
    auto tv = tv_loss(denoised);
    smooth = tv.loss.value;
    const T lam = static_cast<T>(lambda);
    for (std::size_t i = 0; i < r.grad.size(); ++i) r.grad.data[i] += lam * tv.grad.data[i];
  } else if (denoised.h >= 2 && denoised.w >= 2) {
    smooth = tv_loss(denoised).loss.value;
  }
  r.loss.value = static_cast<T>(lambda) * smooth + l1.loss.value;
  r.loss.components = {{"smoothness", smooth}, {"l1", l1.loss.value}, {"lambda", static_cast<T>(lambda)}};
  return r;
}

}  // namespace ams
