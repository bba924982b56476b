#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amsnet/checkpoint.hpp"
#include "amsnet/datasets.hpp"
#include "amsnet/denoisers.hpp"
#include "amsnet/error.hpp"
#include "amsnet/losses.hpp"
#include "amsnet/masking.hpp"
#include "amsnet/nn/optim.hpp"
#include "amsnet/pixel_downsample.hpp"
#include "amsnet/rng.hpp"

namespace ams {

enum class TrainMode { base, finetune, bsn };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::base: return "base";
    case TrainMode::finetune: return "finetune";
    case TrainMode::bsn: return "bsn";
  }
  return "?";
}

inline TrainMode train_mode_from_string(const std::string& s) {
  for (TrainMode m : {TrainMode::base, TrainMode::finetune, TrainMode::bsn})
    if (to_string(m) == s) return m;
  throw ConfigError("mode", "expected base, finetune or bsn, got '" + s + "'");
}

/// Variant tag written into checkpoints produced by each mode.
inline std::string variant_tag(TrainMode m) {
  switch (m) {
    case TrainMode::base: return "B";
    case TrainMode::finetune: return "P";
    case TrainMode::bsn: return "BSN";
  }
  return "?";
}

struct TrainConfig {
  int s_train = 5;
  double mask_ratio = 0.5;
  int patch_size = 40;
  int batch_size = 4;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  int steps = 1000;
  std::uint64_t seed = 0;
  double lambda = 0.1;  // fine-tuning only
  int k = 2;            // fine-tuning only
  bool augment = true;
  int checkpoint_every = 0;  // 0: only the final checkpoint

  void validate() const {
    if (s_train < 1) throw ConfigError("s_train", "must be >= 1, got " + std::to_string(s_train));
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
      throw ConfigError("mask_ratio", "must lie strictly between 0 and 1, got " + std::to_string(mask_ratio));
    if (patch_size < 1) throw ConfigError("patch_size", "must be positive");
    if (batch_size < 1) throw ConfigError("batch_size", "must be positive");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr", "must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be non-negative");
    if (steps < 1) throw ConfigError("steps", "must be >= 1, got " + std::to_string(steps));
    if (!(lambda >= 0.0)) throw ConfigError("lambda", "must be non-negative");
    if (k < 2) throw ConfigError("k", "need at least 2 branches");
    if (checkpoint_every < 0) throw ConfigError("checkpoint_every", "must be >= 0");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"s_train", c.s_train}, {"mask_ratio", c.mask_ratio}, {"patch_size", c.patch_size},
       {"batch_size", c.batch_size}, {"lr", c.lr}, {"weight_decay", c.weight_decay},
       {"steps", c.steps}, {"seed", c.seed}, {"lambda", c.lambda},
       {"k", c.k}, {"augment", c.augment}, {"checkpoint_every", c.checkpoint_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.s_train = j.value("s_train", d.s_train);
  c.mask_ratio = j.value("mask_ratio", d.mask_ratio);
  c.patch_size = j.value("patch_size", d.patch_size);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.steps = j.value("steps", d.steps);
  c.seed = j.value("seed", d.seed);
  c.lambda = j.value("lambda", d.lambda);
  c.k = j.value("k", d.k);
  c.augment = j.value("augment", d.augment);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
}

/// One optimizer step's loss and its named parts.
struct LossRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  std::map<std::string, double> components;

  friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

inline void to_json(nlohmann::json& j, const LossRecord& r) {
  j = {{"step", r.step}, {"loss", r.loss}, {"components", r.components}};
}
inline void from_json(const nlohmann::json& j, LossRecord& r) {
  j.at("step").get_to(r.step);
  j.at("loss").get_to(r.loss);
  j.at("components").get_to(r.components);
}

/// Everything that determines the rest of a run. Randomness is derived from
/// (seed, step, item), so the seed is the whole generator state.
struct TrainState {
  DenoiserHandle denoiser;
  nn::AdamW optimizer;
  std::int64_t step = 0;
  std::vector<LossRecord> history;
  std::uint64_t seed = 0;

  static TrainState fresh(DenoiserHandle d, const TrainConfig& cfg) {
    nn::AdamWOptions o;
    o.lr = cfg.lr;
    o.weight_decay = cfg.weight_decay;
    const auto n = d.parameter_count();
    TrainState s{std::move(d), nn::AdamW(o, n), 0, {}, cfg.seed};
    s.step = s.denoiser.step_count = 0;
    return s;
  }
};

/// Raised when a step produces a non-finite loss. The state is left exactly
/// as it was before the step; a copy is attached for inspection.
class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(const std::string& what, std::shared_ptr<const TrainState> snapshot)
      : Error(what), snapshot_(std::move(snapshot)) {}
  const TrainState& snapshot() const noexcept { return *snapshot_; }

 private:
  std::shared_ptr<const TrainState> snapshot_;
};

namespace detail {

inline constexpr std::uint64_t kMaskStream = 0x6d61736bULL;
inline constexpr std::uint64_t kPartitionStream = 0x70617274ULL;
inline constexpr std::uint64_t kDataStream = 0x64617461ULL;

inline void check_batch(const std::vector<ImageTensor>& batch) {
  if (batch.empty()) throw ShapeError("training batch is empty");
  for (const auto& img : batch)
    if (!img.same_shape(batch.front())) throw ShapeError("training batch images differ in shape");
}

inline void apply_update(TrainState& state, const nn::FeatureMap& grad, nn::Tape& tape, LossRecord& rec) {
  if (!std::isfinite(rec.loss))
    throw NonFiniteLossError("non-finite loss at step " + std::to_string(state.step),
                             std::make_shared<const TrainState>(state));
  state.denoiser.zero_grad();
  state.denoiser.backward(grad, tape);
  state.optimizer.step(state.denoiser.parameters());
  rec.step = ++state.step;
  state.denoiser.step_count = state.step;
  state.history.push_back(rec);
}

inline void scatter(nn::FeatureMap& fm, int index, const ImageTensor& img) {
  const std::size_t plane = img.plane_size();
  for (int ch = 0; ch < img.c; ++ch)
    std::copy_n(img.data.data() + ch * plane, plane, fm.channel(ch) + static_cast<std::size_t>(index) * plane);
}

}  // namespace detail

/// Loss of one step together with the output gradient and the recorded
/// forward pass needed to back-propagate it.
struct StepGradients {
  LossRecord rec;
  nn::FeatureMap grad;
  nn::Tape tape;
};

/// Single-branch masked objective on a batch of noisy patches.
inline StepGradients base_objective(const TrainState& state, const TrainConfig& cfg,
                                   const std::vector<ImageTensor>& batch) {
  detail::check_batch(batch);
  const int s = cfg.s_train, count = s * s;
  const int multiple = s * state.denoiser.spatial_multiple();
  std::vector<SubSampleSet> subs;
  std::vector<MaskSet> masks;
  std::vector<ImageTensor> inputs;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    subs.push_back(pd_split(pad_reflect(batch[b], multiple).first, s));
    const auto& ref = subs.back()[0];
    masks.push_back(sample_mask_set(ref.h, ref.w, count, cfg.mask_ratio,
                                    derive_seed(state.seed, {static_cast<std::uint64_t>(state.step), b, detail::kMaskStream})));
    for (auto& img : apply_mask(subs.back(), masks.back()).subs) inputs.push_back(std::move(img));
  }
  nn::Tape tape;
  const auto out = state.denoiser.forward(nn::to_feature_map(inputs), &tape);
  const auto outs = nn::to_images(out);
  nn::FeatureMap grad(out.c, out.n, out.h, out.w);
  LossRecord rec;
  double masked_elems = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    SubSampleSet o{s, {outs.begin() + b * count, outs.begin() + (b + 1) * count}};
    const auto l = mask_loss(masks[b], subs[b], o);
    rec.loss += l.value();
    for (int j = 0; j < count; ++j) {
      detail::scatter(grad, static_cast<int>(b) * count + j, l.grad[j]);
      masked_elems += static_cast<double>(masks[b][j].count_zeros()) * o[j].c;
    }
  }
  rec.components = {{"mask", rec.loss}, {"mask_per_pixel", rec.loss / masked_elems}};
  return {std::move(rec), std::move(grad), std::move(tape)};
}

/// Full-image fine-tuning objective: all k complementary branches are run, composed
/// into the denoised image, and the smoothness + L1 objective is applied to it.
/// Gradients flow through every branch.
inline StepGradients finetune_objective(const TrainState& state, const TrainConfig& cfg,
                                        const std::vector<ImageTensor>& batch) {
  detail::check_batch(batch);
  const int s = cfg.s_train, count = s * s, k = cfg.k;
  const int multiple = s * state.denoiser.spatial_multiple();
  std::vector<SubSampleSet> subs;
  std::vector<PadSpec> pads;
  std::vector<MaskPartition> parts;
  std::vector<ImageTensor> inputs;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    auto [padded, pad] = pad_reflect(batch[b], multiple);
    pads.push_back(pad);
    subs.push_back(pd_split(padded, s));
    const auto& ref = subs.back()[0];
    parts.push_back(sample_partition_for_stride(
        ref.h, ref.w, s, k, derive_seed(state.seed, {static_cast<std::uint64_t>(state.step), b, detail::kPartitionStream})));
    for (const auto& set : parts.back().branch_masks)
      for (int j = 0; j < count; ++j) inputs.push_back(apply_mask(subs.back()[j], set[j]));
  }
  nn::Tape tape;
  const auto out = state.denoiser.forward(nn::to_feature_map(inputs), &tape);
  const auto outs = nn::to_images(out);
  nn::FeatureMap grad(out.c, out.n, out.h, out.w);
  LossRecord rec;
  double l1 = 0.0, smooth = 0.0, branch_sum = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const std::size_t base = b * k * count;
    SubSampleSet composed{s, {}};
    for (int j = 0; j < count; ++j) composed.subs.emplace_back(subs[b][j].c, subs[b][j].h, subs[b][j].w);
    for (int i = 0; i < k; ++i) {
      SubSampleSet branch_out{s, {outs.begin() + base + i * count, outs.begin() + base + (i + 1) * count}};
      branch_sum += mask_loss(parts[b].branch_masks[i], subs[b], branch_out).value();
      for (int j = 0; j < count; ++j) {
        const auto& m = parts[b].branch_masks[i][j];
        auto& dst = composed[j];
        const std::size_t n = dst.plane_size();
        for (int ch = 0; ch < dst.c; ++ch)
          for (std::size_t p = 0; p < n; ++p)
            if (!m.data[p]) dst.data[ch * n + p] += branch_out[j].data[ch * n + p];
      }
    }
    const auto denoised = crop(pd_merge(composed, s), pads[b]);
    const auto tl = total_loss(image_cast<double>(denoised), image_cast<double>(batch[b]), cfg.lambda);
    rec.loss += tl.value();
    l1 += tl.loss.components.at("l1");
    smooth += tl.loss.components.at("smoothness");
    const auto gsubs = pd_split(uncrop_zero(image_cast<float>(tl.grad), pads[b]), s);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < count; ++j) {
        const auto& m = parts[b].branch_masks[i][j];
        ImageTensor g(gsubs[j].c, gsubs[j].h, gsubs[j].w);
        const std::size_t n = g.plane_size();
        for (int ch = 0; ch < g.c; ++ch)
          for (std::size_t p = 0; p < n; ++p)
            if (!m.data[p]) g.data[ch * n + p] = gsubs[j].data[ch * n + p];
        detail::scatter(grad, static_cast<int>(base) + i * count + j, g);
      }
  }
  rec.components = {{"l1", l1}, {"smoothness", smooth}, {"lambda", cfg.lambda}, {"branch_mask_sum", branch_sum}};
  return {std::move(rec), std::move(grad), std::move(tape)};
}

/// Conventional blind-spot objective on pixel-downsampled patches: the
/// unmasked network output is compared against its own input everywhere.
inline StepGradients bsn_objective(const TrainState& state, const TrainConfig& cfg,
                                  const std::vector<ImageTensor>& batch) {
  detail::check_batch(batch);
  const int s = cfg.s_train;
  const int multiple = s * state.denoiser.spatial_multiple();
  std::vector<ImageTensor> inputs;
  for (const auto& img : batch)
    for (auto& sub : pd_split(pad_reflect(img, multiple).first, s).subs) inputs.push_back(std::move(sub));
  nn::Tape tape;
  const auto out = state.denoiser.forward(nn::to_feature_map(inputs), &tape);
  const auto outs = nn::to_images(out);
  nn::FeatureMap grad(out.c, out.n, out.h, out.w);
  LossRecord rec;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto l = bsn_loss(outs[i], inputs[i]);
    rec.loss += l.value();
    detail::scatter(grad, static_cast<int>(i), l.grad);
  }
  rec.components = {{"bsn", rec.loss}, {"bsn_per_pixel", rec.loss / static_cast<double>(out.size())}};
  return {std::move(rec), std::move(grad), std::move(tape)};
}

inline StepGradients objective(TrainMode mode, const TrainState& state, const TrainConfig& cfg,
                               const std::vector<ImageTensor>& batch) {
  switch (mode) {
    case TrainMode::base: return base_objective(state, cfg, batch);
    case TrainMode::finetune: return finetune_objective(state, cfg, batch);
    case TrainMode::bsn: return bsn_objective(state, cfg, batch);
  }
  throw ConfigError("mode", "unhandled training mode");
}

/// Back-propagates the objective into the parameter gradients without
/// updating anything else.
inline LossRecord compute_gradients(TrainMode mode, TrainState& state, const TrainConfig& cfg,
                                    const std::vector<ImageTensor>& batch) {
  auto r = objective(mode, state, cfg, batch);
  state.denoiser.zero_grad();
  state.denoiser.backward(r.grad, r.tape);
  return r.rec;
}

/// One optimizer update. Throws NonFiniteLossError (state untouched) when the
/// loss is not finite.
inline LossRecord train_step(TrainMode mode, TrainState& state, const TrainConfig& cfg,
                             const std::vector<ImageTensor>& batch) {
  auto r = objective(mode, state, cfg, batch);
  detail::apply_update(state, r.grad, r.tape, r.rec);
  return r.rec;
}

inline LossRecord train_step_base(TrainState& state, const TrainConfig& cfg, const std::vector<ImageTensor>& batch) {
  return train_step(TrainMode::base, state, cfg, batch);
}

inline LossRecord train_step_finetune(TrainState& state, const TrainConfig& cfg,
                                      const std::vector<ImageTensor>& batch) {
  return train_step(TrainMode::finetune, state, cfg, batch);
}

inline LossRecord train_step_bsn(TrainState& state, const TrainConfig& cfg, const std::vector<ImageTensor>& batch) {
  return train_step(TrainMode::bsn, state, cfg, batch);
}

/// Patches for a given step; a pure function of (seed, step).
inline std::vector<ImageTensor> training_batch(const ImageSource& ds, const TrainConfig& cfg, std::int64_t step) {
  return sample_patches(ds, cfg.patch_size, cfg.batch_size,
                        derive_seed(cfg.seed, {static_cast<std::uint64_t>(step), detail::kDataStream}), cfg.augment);
}

inline constexpr char kStateMagic[8] = {'A', 'M', 'S', 'N', 'E', 'T', 'S', 'T'};
inline constexpr std::uint32_t kStateVersion = 1;

/// Resumable training state: weights, optimizer moments, step, history.
inline void save_train_state(const std::filesystem::path& path, const TrainState& st, const nlohmann::json& meta) {
  RecordWriter w;
  w.bytes(kStateMagic, sizeof(kStateMagic));
  w.pod(kStateVersion);
  write_checkpoint_body(w, make_checkpoint(st.denoiser, meta));
  w.floats(st.optimizer.first_moment());
  w.floats(st.optimizer.second_moment());
  w.pod<std::int64_t>(st.optimizer.steps());
  w.pod<std::uint64_t>(st.seed);
  w.string(nlohmann::json(st.history).dump());
  w.commit(path);
}

inline TrainState load_train_state(const std::filesystem::path& path, const nn::AdamWOptions& opts,
                                   nlohmann::json* meta_out = nullptr) {
  RecordReader r(path, kStateMagic);
  check_version(r, kStateVersion);
  auto ck = read_checkpoint_body(r);
  auto d = restore_denoiser(ck);
  nn::AdamW opt(opts, d.parameter_count());
  auto m = r.floats(), v = r.floats();
  if (m.size() != d.parameter_count() || v.size() != d.parameter_count())
    throw CheckpointError(path.string() + ": optimizer moments do not match the network");
  opt.first_moment() = std::move(m);
  opt.second_moment() = std::move(v);
  opt.set_steps(r.pod<std::int64_t>());
  TrainState st{std::move(d), std::move(opt), ck.step, {}, r.pod<std::uint64_t>()};
  try {
    st.history = nlohmann::json::parse(r.string()).get<std::vector<LossRecord>>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": malformed loss history (" + e.what() + ")");
  }
  if (meta_out) *meta_out = ck.meta;
  return st;
}

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& history) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write " + path.string());
  f << "step,loss";
  std::vector<std::string> keys;
  if (!history.empty())
    for (const auto& [key, value] : history.front().components) keys.push_back(key);
  for (const auto& key : keys) f << ',' << key;
  f << '\n';
  char buf[64];
  for (const auto& rec : history) {
    f << rec.step;
    std::snprintf(buf, sizeof buf, ",%.9g", rec.loss);
    f << buf;
    for (const auto& key : keys) {
      const auto it = rec.components.find(key);
      std::snprintf(buf, sizeof buf, ",%.9g", it == rec.components.end() ? 0.0 : it->second);
      f << buf;
    }
    f << '\n';
  }
  if (!f) throw IoError("write failed: " + path.string());
}

struct RunOptions {
  std::filesystem::path run_dir;
  TrainMode mode = TrainMode::base;
  DenoiserSpec spec;                                     // base/bsn: the network to build
  std::optional<std::filesystem::path> init_checkpoint;  // finetune: the base model
  nlohmann::json extra_meta = nlohmann::json::object();
  std::function<void(const LossRecord&)> on_step;
  std::int64_t stop_after = -1;  // stop early (after checkpointing) once this step is reached
};

inline std::string step_checkpoint_name(std::int64_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06lld.ckpt", static_cast<long long>(step));
  return buf;
}

/// Trains in `run_dir`, resuming from `state.bin` if present. Writes
/// config.json, loss.csv, periodic step checkpoints and final.ckpt, and
/// returns the path of final.ckpt (or of the last checkpoint when stopped early).
inline std::filesystem::path run_training(const TrainConfig& cfg, const ImageSource& ds, const RunOptions& opt) {
  namespace fs = std::filesystem;
  cfg.validate();
  if (ds.size() == 0) throw DatasetError("training dataset is empty");
  fs::create_directories(opt.run_dir);
  const fs::path state_path = opt.run_dir / "state.bin";

  nlohmann::json meta = opt.extra_meta;
  meta["variant"] = variant_tag(opt.mode);
  meta["mode"] = to_string(opt.mode);
  meta["train_config"] = cfg;

  nn::AdamWOptions adam;
  adam.lr = cfg.lr;
  adam.weight_decay = cfg.weight_decay;

  std::optional<TrainState> state;
  if (fs::exists(state_path)) {
    nlohmann::json saved;
    state.emplace(load_train_state(state_path, adam, &saved));
    if (saved.value("train_config", nlohmann::json{}) != meta["train_config"] ||
        saved.value("mode", std::string{}) != meta["mode"])
      throw ConfigError("resume", "run directory " + opt.run_dir.string() +
                                      " holds a run with a different configuration");
  } else if (opt.mode == TrainMode::finetune) {
    if (!opt.init_checkpoint) throw ConfigError("base_checkpoint", "fine-tuning needs a base checkpoint");
    if (!fs::exists(*opt.init_checkpoint))
      throw ConfigError("base_checkpoint", "no such file: " + opt.init_checkpoint->string());
    const auto ck = load_checkpoint(*opt.init_checkpoint);
    if (ck.variant_tag() != "B")
      throw ConfigError("base_checkpoint", "expected a checkpoint tagged 'B', got '" + ck.variant_tag() + "'");
    meta["base_checkpoint"] = fs::absolute(*opt.init_checkpoint).string();
    meta["base_step"] = ck.step;
    state.emplace(TrainState::fresh(restore_denoiser(ck), cfg));
  } else {
    state.emplace(TrainState::fresh(DenoiserHandle(opt.spec), cfg));
  }
  if (!meta.contains("spec")) meta["spec"] = state->denoiser.spec();

  {
    std::ofstream f(opt.run_dir / "config.json", std::ios::trunc);
    if (!f) throw IoError("cannot write config snapshot in " + opt.run_dir.string());
    f << meta.dump(2) << '\n';
  }

  const auto snapshot = [&](bool final) {
    const auto ck = make_checkpoint(state->denoiser, meta);
    fs::path out = opt.run_dir / (final ? std::string("final.ckpt") : step_checkpoint_name(state->step));
    save_checkpoint(out, ck);
    save_train_state(state_path, *state, meta);
    write_loss_csv(opt.run_dir / "loss.csv", state->history);
    return out;
  };

  while (state->step < cfg.steps) {
    const auto batch = training_batch(ds, cfg, state->step);
    const auto rec = train_step(opt.mode, *state, cfg, batch);
    if (opt.on_step) opt.on_step(rec);
    const bool done = state->step >= cfg.steps;
    if (!done && cfg.checkpoint_every > 0 && state->step % cfg.checkpoint_every == 0) snapshot(false);
    if (!done && opt.stop_after >= 0 && state->step >= opt.stop_after) return snapshot(false);
  }
  return snapshot(true);
}

}  // namespace ams
