#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "amsnet/nn/tensor.hpp"

namespace ams::nn {

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

/// Adam with decoupled weight decay. Moments are flat vectors aligned with
/// the parameter list so the whole optimizer state serializes trivially.
class AdamW {
 public:
  AdamW() = default;
  AdamW(AdamWOptions opts, std::size_t total_params)
      : opts_(opts), m_(total_params, 0.f), v_(total_params, 0.f) {}

  void step(const std::vector<Parameter*>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    const float decay = static_cast<float>(1.0 - opts_.lr * opts_.weight_decay);
    const float b1 = static_cast<float>(opts_.beta1), b2 = static_cast<float>(opts_.beta2);
    const float step_size = static_cast<float>(opts_.lr / bc1);
    const float inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
    const float eps = static_cast<float>(opts_.eps);
    std::size_t off = 0;
    for (auto* p : params) {
      float* m = m_.data() + off;
      float* v = v_.data() + off;
      for (std::size_t i = 0; i < p->size(); ++i) {
        const float g = p->grad[i];
        m[i] = b1 * m[i] + (1.f - b1) * g;
        v[i] = b2 * v[i] + (1.f - b2) * g * g;
        p->value[i] *= decay;
        p->value[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_bc2 + eps);
      }
      off += p->size();
    }
  }

  std::int64_t steps() const noexcept { return t_; }
  const AdamWOptions& options() const noexcept { return opts_; }
  void set_lr(double lr) noexcept { opts_.lr = lr; }

  std::vector<float>& first_moment() noexcept { return m_; }
  std::vector<float>& second_moment() noexcept { return v_; }
  const std::vector<float>& first_moment() const noexcept { return m_; }
  const std::vector<float>& second_moment() const noexcept { return v_; }
  void set_steps(std::int64_t t) noexcept { t_ = t; }

 private:
  AdamWOptions opts_;
  std::vector<float> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace ams::nn
