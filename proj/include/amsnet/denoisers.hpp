#pragma once

#include <cstdint>
#include <cstring>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amsnet/error.hpp"
#include "amsnet/image.hpp"
#include "amsnet/nn/layers.hpp"
#include "amsnet/nn/tensor.hpp"
#include "amsnet/rng.hpp"

namespace ams {

enum class Arch { unet_small, dncnn, blindspot_a, blindspot_as };

inline std::string to_string(Arch a) {
  switch (a) {
    case Arch::unet_small: return "unet-small";
    case Arch::dncnn: return "dncnn";
    case Arch::blindspot_a: return "blindspot-A";
    case Arch::blindspot_as: return "blindspot-AS";
  }
  return "?";
}

inline Arch arch_from_string(const std::string& s) {
  for (Arch a : {Arch::unet_small, Arch::dncnn, Arch::blindspot_a, Arch::blindspot_as})
    if (to_string(a) == s) return a;
  throw ConfigError("arch", "unknown denoiser architecture '" + s +
                                "' (expected unet-small, dncnn, blindspot-A or blindspot-AS)");
}

/// Fully determines the architecture and its initialization.
///   unet-small   : width = first-level channels, depth = number of 2x downsamplings
///   dncnn        : width = channels, depth = number of conv layers
///   blindspot-*  : width = channels, depth = number of dilated (A) / plain (AS) residual blocks
struct DenoiserSpec {
  Arch arch = Arch::unet_small;
  int channels_in = 3;
  int channels_out = 3;
  int width = 48;
  int depth = 2;
  std::uint64_t seed = 0;

  void validate() const {
    if (channels_in != channels_out)
      throw ConfigError("channels", "denoisers map c channels to c channels (" +
                                        std::to_string(channels_in) + " vs " +
                                        std::to_string(channels_out) + ")");
    if (channels_in != 1 && channels_in != 3) throw ConfigError("channels", "must be 1 or 3");
    if (width < 1) throw ConfigError("width", "must be positive");
    if (depth < 1) throw ConfigError("depth", "must be positive");
    if (arch == Arch::dncnn && depth < 2) throw ConfigError("depth", "dncnn needs at least 2 layers");
  }

  friend bool operator==(const DenoiserSpec&, const DenoiserSpec&) = default;
};

/// Desk-scale defaults for each architecture.
inline DenoiserSpec default_spec(Arch arch, int channels = 3) {
  DenoiserSpec s;
  s.arch = arch;
  s.channels_in = s.channels_out = channels;
  switch (arch) {
    case Arch::unet_small: s.width = 48; s.depth = 2; break;
    case Arch::dncnn: s.width = 64; s.depth = 17; break;
    case Arch::blindspot_a:
    case Arch::blindspot_as: s.width = 48; s.depth = 5; break;
  }
  return s;
}

inline void to_json(nlohmann::json& j, const DenoiserSpec& s) {
  j = {{"arch", to_string(s.arch)}, {"channels_in", s.channels_in}, {"channels_out", s.channels_out},
       {"width", s.width},          {"depth", s.depth},             {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, DenoiserSpec& s) {
  s.arch = arch_from_string(j.at("arch").get<std::string>());
  j.at("channels_in").get_to(s.channels_in);
  j.at("channels_out").get_to(s.channels_out);
  j.at("width").get_to(s.width);
  j.at("depth").get_to(s.depth);
  j.at("seed").get_to(s.seed);
}

namespace nn {

/// A differentiable image-to-image network over channel-major batches.
/// forward() with a tape records caches; backward() consumes them in reverse,
/// accumulates parameter gradients and returns the input gradient.
class Network {
 public:
  Network() = default;
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  virtual ~Network() = default;

  virtual FeatureMap forward(const FeatureMap& x, Tape* tape) const = 0;
  virtual FeatureMap backward(const FeatureMap& gy, Tape& tape) = 0;
  virtual int spatial_multiple() const { return 1; }

  const std::vector<Parameter*>& parameters() { return params_; }

 protected:
  std::vector<Parameter*> params_;
};

class UNetSmall final : public Network {
 public:
  UNetSmall(int channels, int width, int levels, Rng& rng) : levels_(levels) {
    auto w = [&](int l) { return width << l; };
    for (int l = 0; l <= levels; ++l) {
      const int in = l == 0 ? channels : w(l - 1);
      enc_a_.emplace_back("enc" + std::to_string(l) + "a", in, w(l), 3);
      enc_b_.emplace_back("enc" + std::to_string(l) + "b", w(l), w(l), 3);
    }
    for (int l = 0; l < levels; ++l) {
      up_.emplace_back("up" + std::to_string(l), w(l + 1), w(l));
      dec_a_.emplace_back("dec" + std::to_string(l) + "a", 2 * w(l), w(l), 3);
      dec_b_.emplace_back("dec" + std::to_string(l) + "b", w(l), w(l), 3);
    }
    out_ = Conv2d("out", width, channels, 1);
    for (int l = 0; l <= levels; ++l) {
      enc_a_[l].init(rng), enc_a_[l].collect(params_);
      enc_b_[l].init(rng), enc_b_[l].collect(params_);
    }
    for (int l = 0; l < levels; ++l) {
      up_[l].init(rng), up_[l].collect(params_);
      dec_a_[l].init(rng), dec_a_[l].collect(params_);
      dec_b_[l].init(rng), dec_b_[l].collect(params_);
    }
    out_.init(rng, 1.f);
    out_.collect(params_);
  }

  int spatial_multiple() const override { return 1 << levels_; }

  FeatureMap forward(const FeatureMap& x, Tape* tape) const override {
    std::vector<FeatureMap> skips(levels_);
    FeatureMap h = x;
    for (int l = 0; l <= levels_; ++l) {
      h = act_.forward(enc_a_[l].forward(h, tape), tape);
      h = act_.forward(enc_b_[l].forward(h, tape), tape);
      if (l < levels_) {
        skips[l] = h;
        h = pool_.forward(h, tape);
      }
    }
    for (int l = levels_ - 1; l >= 0; --l) {
      h = concat_channels(up_[l].forward(h, tape), skips[l]);
      h = act_.forward(dec_a_[l].forward(h, tape), tape);
      h = act_.forward(dec_b_[l].forward(h, tape), tape);
    }
    return out_.forward(h, tape);
  }

  FeatureMap backward(const FeatureMap& gy, Tape& tape) override {
    std::vector<FeatureMap> gskip(levels_);
    FeatureMap g = out_.backward(gy, tape);
    for (int l = 0; l < levels_; ++l) {
      g = dec_b_[l].backward(act_.backward(std::move(g), tape), tape);
      g = dec_a_[l].backward(act_.backward(std::move(g), tape), tape);
      const int c_up = g.c / 2;
      auto [gu, gs] = split_channels(g, c_up);
      gskip[l] = std::move(gs);
      g = up_[l].backward(gu, tape);
    }
    for (int l = levels_; l >= 0; --l) {
      if (l < levels_) {
        g = pool_.backward(g, tape);
        add_inplace(g, gskip[l]);
      }
      g = enc_b_[l].backward(act_.backward(std::move(g), tape), tape);
      g = enc_a_[l].backward(act_.backward(std::move(g), tape), tape);
    }
    return g;
  }

 private:
  int levels_;
  std::vector<Conv2d> enc_a_, enc_b_, dec_a_, dec_b_;
  std::vector<ConvTranspose2x2> up_;
  Conv2d out_;
  MaxPool2 pool_;
  LeakyRelu act_{0.1f};
};

/// Residual DnCNN without batch normalization: y = x - f(x).
class DnCNN final : public Network {
 public:
  DnCNN(int channels, int width, int layers, Rng& rng) {
    for (int i = 0; i < layers; ++i) {
      const int in = i == 0 ? channels : width;
      const int out = i == layers - 1 ? channels : width;
      convs_.emplace_back("conv" + std::to_string(i), in, out, 3);
    }
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      convs_[i].init(rng, i + 1 == convs_.size() ? 0.1f : std::sqrt(2.f));
      convs_[i].collect(params_);
    }
  }

  FeatureMap forward(const FeatureMap& x, Tape* tape) const override {
    FeatureMap h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      h = convs_[i].forward(h, tape);
      if (i + 1 < convs_.size()) h = act_.forward(std::move(h), tape);
    }
    for (std::size_t i = 0; i < h.size(); ++i) h.v[i] = x.v[i] - h.v[i];
    return h;
  }

  FeatureMap backward(const FeatureMap& gy, Tape& tape) override {
    FeatureMap g = gy;
    for (auto& v : g.v) v = -v;
    for (std::size_t i = convs_.size(); i-- > 0;) {
      if (i + 1 < convs_.size()) g = act_.backward(std::move(g), tape);
      g = convs_[i].backward(g, tape);
    }
    add_inplace(g, gy);
    return g;
  }

 private:
  std::vector<Conv2d> convs_;
  LeakyRelu act_{0.f};
};

/// Blind-spot network: a centre-masked 3x3 convolution followed by residual
/// blocks of 3x3 convolutions with dilation 2 (variant A) or 1 (variant AS)
/// and pointwise layers. With dilation 2 every path from input pixel p back
/// to output pixel p has an odd, non-zero total offset, so the output never
/// sees its own input pixel. Variant AS has identical parameter count but no
/// such restriction.
class BlindSpotNet final : public Network {
 public:
  BlindSpotNet(int channels, int width, int blocks, bool dilated, Rng& rng)
      : head_("head", channels, width, 1),
        masked_("masked", width, width, 3, 1, true),
        pre_("pre", width, width, 1),
        post_("post", width, width, 1),
        tail_("tail", width, channels, 1) {
    for (int b = 0; b < blocks; ++b) {
      body3_.emplace_back("block" + std::to_string(b) + ".conv", width, width, 3, dilated ? 2 : 1);
      body1_.emplace_back("block" + std::to_string(b) + ".proj", width, width, 1);
    }
    head_.init(rng), head_.collect(params_);
    masked_.init(rng), masked_.collect(params_);
    pre_.init(rng), pre_.collect(params_);
    for (int b = 0; b < blocks; ++b) {
      body3_[b].init(rng), body3_[b].collect(params_);
      body1_[b].init(rng, 0.5f), body1_[b].collect(params_);
    }
    post_.init(rng), post_.collect(params_);
    tail_.init(rng, 1.f), tail_.collect(params_);
  }

  FeatureMap forward(const FeatureMap& x, Tape* tape) const override {
    FeatureMap h = act_.forward(head_.forward(x, tape), tape);
    h = act_.forward(masked_.forward(h, tape), tape);
    h = act_.forward(pre_.forward(h, tape), tape);
    for (std::size_t b = 0; b < body3_.size(); ++b) {
      FeatureMap r = body1_[b].forward(act_.forward(body3_[b].forward(h, tape), tape), tape);
      add_inplace(h, r);
    }
    h = act_.forward(post_.forward(h, tape), tape);
    return tail_.forward(h, tape);
  }

  FeatureMap backward(const FeatureMap& gy, Tape& tape) override {
    FeatureMap g = tail_.backward(gy, tape);
    g = post_.backward(act_.backward(std::move(g), tape), tape);
    for (std::size_t b = body3_.size(); b-- > 0;) {
      FeatureMap gr = body1_[b].backward(g, tape);
      gr = body3_[b].backward(act_.backward(std::move(gr), tape), tape);
      add_inplace(g, gr);
    }
    g = pre_.backward(act_.backward(std::move(g), tape), tape);
    g = masked_.backward(act_.backward(std::move(g), tape), tape);
    return head_.backward(act_.backward(std::move(g), tape), tape);
  }

 private:
  Conv2d head_, masked_, pre_, post_, tail_;
  std::vector<Conv2d> body3_, body1_;
  LeakyRelu act_{0.f};
};

inline std::unique_ptr<Network> make_network(const DenoiserSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, {0x6e6574ULL}));
  switch (spec.arch) {
    case Arch::unet_small: return std::make_unique<UNetSmall>(spec.channels_in, spec.width, spec.depth, rng);
    case Arch::dncnn: return std::make_unique<DnCNN>(spec.channels_in, spec.width, spec.depth, rng);
    case Arch::blindspot_a:
      return std::make_unique<BlindSpotNet>(spec.channels_in, spec.width, spec.depth, true, rng);
    case Arch::blindspot_as:
      return std::make_unique<BlindSpotNet>(spec.channels_in, spec.width, spec.depth, false, rng);
  }
  throw ConfigError("arch", "unhandled architecture");
}

}  // namespace nn

inline std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) h = (h ^ p[i]) * 0x100000001b3ULL;
  return h;
}

/// A built denoiser: its spec, parameters and training step counter.
/// Copying deep-copies the parameters into a freshly built network.
class DenoiserHandle {
 public:
  explicit DenoiserHandle(DenoiserSpec spec) : spec_(spec), net_(nn::make_network(spec)) {}

  DenoiserHandle(const DenoiserHandle& o) : step_count(o.step_count), spec_(o.spec_), net_(nn::make_network(o.spec_)) {
    set_flat_parameters(o.flat_parameters());
  }
  DenoiserHandle& operator=(const DenoiserHandle& o) {
    if (this != &o) *this = DenoiserHandle(o);
    return *this;
  }
  DenoiserHandle(DenoiserHandle&&) noexcept = default;
  DenoiserHandle& operator=(DenoiserHandle&&) noexcept = default;

  const DenoiserSpec& spec() const noexcept { return spec_; }
  int spatial_multiple() const { return net_->spatial_multiple(); }
  int channels() const noexcept { return spec_.channels_in; }

  void check_input(const nn::FeatureMap& x) const {
    if (x.n == 0 || x.h == 0 || x.w == 0) throw ShapeError("denoiser input batch is empty");
    if (x.c != spec_.channels_in)
      throw ShapeError(to_string(spec_.arch) + " expects " + std::to_string(spec_.channels_in) +
                       " channels, got " + std::to_string(x.c));
    const int m = spatial_multiple();
    if (x.h % m || x.w % m)
      throw ShapeError(to_string(spec_.arch) + " needs spatial dims divisible by " + std::to_string(m) +
                       ", got " + std::to_string(x.h) + "x" + std::to_string(x.w));
  }

  /// Recording (tape != nullptr) or evaluation forward pass.
  nn::FeatureMap forward(const nn::FeatureMap& x, nn::Tape* tape = nullptr) const {
    check_input(x);
    return net_->forward(x, tape);
  }

  nn::FeatureMap backward(const nn::FeatureMap& gy, nn::Tape& tape) { return net_->backward(gy, tape); }

  /// Evaluation-mode forward on a batch of same-shaped images.
  std::vector<ImageTensor> denoise_batch(const std::vector<ImageTensor>& batch) const {
    return nn::to_images(forward(nn::to_feature_map(batch)));
  }

  const std::vector<nn::Parameter*>& parameters() { return net_->parameters(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto* p : net_->parameters()) n += p->size();
    return n;
  }

  std::vector<float> flat_parameters() const {
    std::vector<float> out;
    out.reserve(parameter_count());
    for (auto* p : net_->parameters()) out.insert(out.end(), p->value.begin(), p->value.end());
    return out;
  }

  void set_flat_parameters(std::span<const float> flat) {
    if (flat.size() != parameter_count())
      throw ShapeError("parameter vector has " + std::to_string(flat.size()) + " entries, network needs " +
                       std::to_string(parameter_count()));
    std::size_t off = 0;
    for (auto* p : net_->parameters()) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), p->size(), p->value.begin());
      off += p->size();
    }
  }

  std::uint64_t parameter_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto* p : net_->parameters()) h = fnv1a(p->value.data(), p->size() * sizeof(float), h);
    return h;
  }

  void zero_grad() {
    for (auto* p : net_->parameters()) p->zero_grad();
  }

  std::int64_t step_count = 0;

 private:
  DenoiserSpec spec_;
  std::unique_ptr<nn::Network> net_;
};

inline DenoiserHandle build_denoiser(const DenoiserSpec& spec) { return DenoiserHandle(spec); }

inline DenoiserHandle build_denoiser(DenoiserSpec spec, std::uint64_t seed) {
  spec.seed = seed;
  return DenoiserHandle(spec);
}

}  // namespace ams
