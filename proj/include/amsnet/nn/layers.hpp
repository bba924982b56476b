#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "amsnet/nn/tensor.hpp"
#include "amsnet/rng.hpp"

namespace ams::nn {

/// Same-padded 2-D convolution, optionally dilated, optionally with the
/// kernel centre tap forced to zero (blind-spot convolution).
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int cin, int cout, int kernel, int dilation = 1, bool center_masked = false)
      : cin_(cin), cout_(cout), k_(kernel), dil_(dilation), center_masked_(center_masked),
        weight_(name + ".weight", static_cast<std::size_t>(cout) * cin * kernel * kernel),
        bias_(name + ".bias", static_cast<std::size_t>(cout)) {
    if (kernel % 2 == 0) throw ShapeError("convolution kernels must have odd size");
    if (center_masked && kernel < 3) throw ShapeError("a centre-masked convolution needs kernel >= 3");
  }

  /// He-uniform weights, zero bias.
  void init(Rng& rng, float gain = std::sqrt(2.f)) {
    const int taps = center_masked_ ? k_ * k_ - 1 : k_ * k_;
    const float bound = gain * std::sqrt(3.f / static_cast<float>(cin_ * taps));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (auto& v : weight_.value) v = dist(rng);
    std::fill(bias_.value.begin(), bias_.value.end(), 0.f);
    apply_center_mask(weight_.value);
  }

  FeatureMap forward(const FeatureMap& x, Tape* tape) const {
    if (x.c != cin_)
      throw ShapeError(weight_.name + ": expected " + std::to_string(cin_) + " input channels, got " +
                       std::to_string(x.c));
    FeatureMap y(cout_, x.n, x.h, x.w);
    auto out = as_matrix(y);
    Buffer masked_w;
    const float* wptr = weight_.value.data();
    if (center_masked_) {
      masked_w = weight_.value;
      apply_center_mask(masked_w);
      wptr = masked_w.data();
    }
    const ConstMatMap wmat(wptr, cout_, static_cast<Eigen::Index>(cin_) * k_ * k_);
    if (k_ == 1) {
      out.noalias() = wmat * as_matrix(x);
      if (tape) tape->push(x);
    } else {
      Buffer col = im2col(x);
      const ConstMatMap cmat(col.data(), static_cast<Eigen::Index>(cin_) * k_ * k_,
                             static_cast<Eigen::Index>(x.pixels()));
      out.noalias() = wmat * cmat;
      if (tape) tape->push(Cache{std::move(col), x.n, x.h, x.w});
    }
    const Eigen::Map<const Eigen::VectorXf> b(bias_.value.data(), cout_);
    out.colwise() += b;
    return y;
  }

  /// Accumulates parameter gradients and returns the input gradient.
  FeatureMap backward(const FeatureMap& gy, Tape& tape) {
    const Eigen::Index kk = static_cast<Eigen::Index>(cin_) * k_ * k_;
    MatMap gw(weight_.grad.data(), cout_, kk);
    Eigen::Map<Eigen::VectorXf> gb(bias_.grad.data(), cout_);
    const auto g = as_matrix(gy);
    gb += g.rowwise().sum();
    const ConstMatMap wmat(weight_.value.data(), cout_, kk);
    if (k_ == 1) {
      const auto x = tape.pop<FeatureMap>();
      gw.noalias() += g * as_matrix(x).transpose();
      FeatureMap gx(cin_, x.n, x.h, x.w);
      as_matrix(gx).noalias() = wmat.transpose() * g;
      return gx;
    }
    const auto cache = tape.pop<Cache>();
    const ConstMatMap cmat(cache.col.data(), kk, static_cast<Eigen::Index>(gy.pixels()));
    gw.noalias() += g * cmat.transpose();
    Buffer gcol(cache.col.size());
    if (center_masked_) {
      apply_center_mask(weight_.grad);
      Buffer masked_w = weight_.value;
      apply_center_mask(masked_w);
      MatMap(gcol.data(), kk, static_cast<Eigen::Index>(gy.pixels())).noalias() =
          ConstMatMap(masked_w.data(), cout_, kk).transpose() * g;
    } else {
      MatMap(gcol.data(), kk, static_cast<Eigen::Index>(gy.pixels())).noalias() = wmat.transpose() * g;
    }
    return col2im(gcol, cache.n, cache.h, cache.w);
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

  Parameter& weight() noexcept { return weight_; }
  Parameter& bias() noexcept { return bias_; }
  int kernel() const noexcept { return k_; }
  int dilation() const noexcept { return dil_; }
  bool center_masked() const noexcept { return center_masked_; }

 private:
  struct Cache {
    Buffer col;
    int n, h, w;
  };

  void apply_center_mask(Buffer& wts) const {
    if (!center_masked_) return;
    const int center = (k_ / 2) * k_ + k_ / 2;
    for (int co = 0; co < cout_; ++co)
      for (int ci = 0; ci < cin_; ++ci)
        wts[(static_cast<std::size_t>(co) * cin_ + ci) * k_ * k_ + center] = 0.f;
  }

  // Row (ci, ky, kx), column (b, y, x).
  Buffer im2col(const FeatureMap& x) const {
    const std::size_t P = x.pixels();
    Buffer col(static_cast<std::size_t>(cin_) * k_ * k_ * P, 0.f);
    const int r = k_ / 2;
    for (int ci = 0; ci < cin_; ++ci)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          float* dst = col.data() + ((static_cast<std::size_t>(ci) * k_ + ky) * k_ + kx) * P;
          const int dy = (ky - r) * dil_, dx = (kx - r) * dil_;
          const int x0 = std::max(0, -dx), x1 = std::min(x.w, x.w - dx);
          if (x0 >= x1) continue;
          for (int b = 0; b < x.n; ++b)
            for (int y = 0; y < x.h; ++y) {
              const int sy = y + dy;
              if (sy < 0 || sy >= x.h) continue;
              const float* src = &x.v[((static_cast<std::size_t>(ci) * x.n + b) * x.h + sy) * x.w];
              float* d = dst + (static_cast<std::size_t>(b) * x.h + y) * x.w;
              for (int xx = x0; xx < x1; ++xx) d[xx] = src[xx + dx];
            }
        }
    return col;
  }

  FeatureMap col2im(const Buffer& col, int n, int h, int w) const {
    FeatureMap gx(cin_, n, h, w);
    const std::size_t P = gx.pixels();
    const int r = k_ / 2;
    for (int ci = 0; ci < cin_; ++ci)
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const float* src = col.data() + ((static_cast<std::size_t>(ci) * k_ + ky) * k_ + kx) * P;
          const int dy = (ky - r) * dil_, dx = (kx - r) * dil_;
          const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
          if (x0 >= x1) continue;
          for (int b = 0; b < n; ++b)
            for (int y = 0; y < h; ++y) {
              const int sy = y + dy;
              if (sy < 0 || sy >= h) continue;
              float* d = &gx.v[((static_cast<std::size_t>(ci) * n + b) * h + sy) * w];
              const float* s = src + (static_cast<std::size_t>(b) * h + y) * w;
              for (int xx = x0; xx < x1; ++xx) d[xx + dx] += s[xx];
            }
        }
    return gx;
  }

  int cin_ = 0, cout_ = 0, k_ = 1, dil_ = 1;
  bool center_masked_ = false;
  Parameter weight_, bias_;
};

/// 2x2 stride-2 transposed convolution (learned upsampling).
class ConvTranspose2x2 {
 public:
  ConvTranspose2x2() = default;
  ConvTranspose2x2(std::string name, int cin, int cout)
      : cin_(cin), cout_(cout), weight_(name + ".weight", static_cast<std::size_t>(cout) * 4 * cin),
        bias_(name + ".bias", static_cast<std::size_t>(cout)) {}

  void init(Rng& rng, float gain = std::sqrt(2.f)) {
    const float bound = gain * std::sqrt(3.f / static_cast<float>(cin_));
    std::uniform_real_distribution<float> dist(-bound, bound);
    for (auto& v : weight_.value) v = dist(rng);
    std::fill(bias_.value.begin(), bias_.value.end(), 0.f);
  }

  FeatureMap forward(const FeatureMap& x, Tape* tape) const {
    if (x.c != cin_) throw ShapeError(weight_.name + ": input channel mismatch");
    const ConstMatMap wmat(weight_.value.data(), cout_ * 4, cin_);
    RowMatrix z = wmat * as_matrix(x);
    FeatureMap y(cout_, x.n, x.h * 2, x.w * 2);
    for (int co = 0; co < cout_; ++co)
      for (int d = 0; d < 4; ++d) {
        const float* src = z.data() + static_cast<std::size_t>(co * 4 + d) * x.pixels();
        const int dy = d / 2, dx = d % 2;
        for (int b = 0; b < x.n; ++b)
          for (int yy = 0; yy < x.h; ++yy)
            for (int xx = 0; xx < x.w; ++xx)
              y.at(co, b, 2 * yy + dy, 2 * xx + dx) =
                  src[(static_cast<std::size_t>(b) * x.h + yy) * x.w + xx] + bias_.value[co];
      }
    if (tape) tape->push(x);
    return y;
  }

  FeatureMap backward(const FeatureMap& gy, Tape& tape) {
    const auto x = tape.pop<FeatureMap>();
    RowMatrix g(cout_ * 4, static_cast<Eigen::Index>(x.pixels()));
    for (int co = 0; co < cout_; ++co) {
      double bsum = 0.0;
      for (int d = 0; d < 4; ++d) {
        float* dst = g.data() + static_cast<std::size_t>(co * 4 + d) * x.pixels();
        const int dy = d / 2, dx = d % 2;
        for (int b = 0; b < x.n; ++b)
          for (int yy = 0; yy < x.h; ++yy)
            for (int xx = 0; xx < x.w; ++xx) {
              const float v = gy.at(co, b, 2 * yy + dy, 2 * xx + dx);
              dst[(static_cast<std::size_t>(b) * x.h + yy) * x.w + xx] = v;
              bsum += v;
            }
      }
      bias_.grad[co] += static_cast<float>(bsum);
    }
    MatMap gw(weight_.grad.data(), cout_ * 4, cin_);
    gw.noalias() += g * as_matrix(x).transpose();
    const ConstMatMap wmat(weight_.value.data(), cout_ * 4, cin_);
    FeatureMap gx(cin_, x.n, x.h, x.w);
    as_matrix(gx).noalias() = wmat.transpose() * g;
    return gx;
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }

 private:
  int cin_ = 0, cout_ = 0;
  Parameter weight_, bias_;
};

/// 2x2 max pooling with stride 2. Requires even spatial dimensions.
struct MaxPool2 {
  FeatureMap forward(const FeatureMap& x, Tape* tape) const {
    if (x.h % 2 || x.w % 2)
      throw ShapeError("max pooling needs even spatial dims, got " + std::to_string(x.h) + "x" +
                       std::to_string(x.w));
    FeatureMap y(x.c, x.n, x.h / 2, x.w / 2);
    std::vector<std::uint8_t> arg(tape ? y.size() : 0);
    std::size_t o = 0;
    for (int ch = 0; ch < x.c; ++ch)
      for (int b = 0; b < x.n; ++b)
        for (int yy = 0; yy < y.h; ++yy)
          for (int xx = 0; xx < y.w; ++xx, ++o) {
            std::uint8_t best = 0;
            float bv = x.at(ch, b, 2 * yy, 2 * xx);
            for (std::uint8_t d = 1; d < 4; ++d) {
              const float v = x.at(ch, b, 2 * yy + d / 2, 2 * xx + d % 2);
              if (v > bv) bv = v, best = d;
            }
            y.v[o] = bv;
            if (tape) arg[o] = best;
          }
    if (tape) tape->push(std::move(arg));
    return y;
  }

  FeatureMap backward(const FeatureMap& gy, Tape& tape) const {
    const auto arg = tape.pop<std::vector<std::uint8_t>>();
    FeatureMap gx(gy.c, gy.n, gy.h * 2, gy.w * 2);
    std::size_t o = 0;
    for (int ch = 0; ch < gy.c; ++ch)
      for (int b = 0; b < gy.n; ++b)
        for (int yy = 0; yy < gy.h; ++yy)
          for (int xx = 0; xx < gy.w; ++xx, ++o)
            gx.at(ch, b, 2 * yy + arg[o] / 2, 2 * xx + arg[o] % 2) = gy.v[o];
    return gx;
  }
};

/// Leaky ReLU; slope 0 gives plain ReLU.
struct LeakyRelu {
  float slope = 0.f;

  FeatureMap forward(FeatureMap x, Tape* tape) const {
    std::vector<std::uint8_t> pos(tape ? x.size() : 0);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const bool p = x.v[i] > 0.f;
      if (!p) x.v[i] *= slope;
      if (tape) pos[i] = p;
    }
    if (tape) tape->push(std::move(pos));
    return x;
  }

  FeatureMap backward(FeatureMap gy, Tape& tape) const {
    const auto pos = tape.pop<std::vector<std::uint8_t>>();
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (!pos[i]) gy.v[i] *= slope;
    return gy;
  }
};

/// Channel concatenation (free in the channel-major layout).
inline FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w) throw ShapeError("concat: spatial mismatch");
  FeatureMap out(a.c + b.c, a.n, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), out.v.begin());
  std::copy(b.v.begin(), b.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(a.size()));
  return out;
}

inline std::pair<FeatureMap, FeatureMap> split_channels(const FeatureMap& g, int ca) {
  FeatureMap a(ca, g.n, g.h, g.w), b(g.c - ca, g.n, g.h, g.w);
  std::copy_n(g.v.begin(), a.size(), a.v.begin());
  std::copy(g.v.begin() + static_cast<std::ptrdiff_t>(a.size()), g.v.end(), b.v.begin());
  return {std::move(a), std::move(b)};
}

inline void add_inplace(FeatureMap& a, const FeatureMap& b) {
  if (!a.same_shape(b)) throw ShapeError("elementwise add: shape mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) a.v[i] += b.v[i];
}

}  // namespace ams::nn
