#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amsnet/checkpoint.hpp"
#include "amsnet/datasets.hpp"
#include "amsnet/evaluation.hpp"
#include "amsnet/inference.hpp"
#include "amsnet/training.hpp"

namespace ams {

/// Which objective trains an ablation cell.
enum class AblationObjective { ams, bsn };

inline std::string to_string(AblationObjective o) { return o == AblationObjective::ams ? "AMS" : "BSN-loss"; }

/// Desk-scale identity-mapping study on synthetic spatially correlated noise.
struct AblationConfig {
  int train_images = 16;
  int test_images = 4;
  int image_size = 64;
  int channels = 3;
  double sigma = 25.0 / 255.0;
  int noise_kernel = 3;
  std::uint64_t data_seed = 1;
  int width = 32;
  int depth = 5;
  TrainConfig train = [] {
    TrainConfig t;
    t.s_train = 2;
    t.patch_size = 64;
    t.lr = 1e-3;
    t.steps = 1000;
    return t;
  }();
  InferConfig infer = [] {
    InferConfig c;
    c.s_inf = 1;
    return c;
  }();
  std::vector<AblationObjective> objectives{AblationObjective::ams, AblationObjective::bsn};
  std::vector<Arch> archs{Arch::blindspot_a, Arch::blindspot_as};

  void validate() const {
    if (train_images < 1) throw ConfigError("train_images", "must be positive");
    if (test_images < 1) throw ConfigError("test_images", "must be positive");
    if (image_size < 11) throw ConfigError("image_size", "must be at least 11 for SSIM");
    if (!(sigma >= 0.0)) throw ConfigError("sigma", "must be non-negative");
    if (noise_kernel < 1 || noise_kernel % 2 == 0) throw ConfigError("noise_kernel", "must be odd and positive");
    if (objectives.empty()) throw ConfigError("objectives", "no objective selected");
    for (Arch a : archs)
      if (a != Arch::blindspot_a && a != Arch::blindspot_as)
        throw ConfigError("archs", "the ablation compares blindspot-A and blindspot-AS only");
    if (archs.empty()) throw ConfigError("archs", "no architecture selected");
    if (train.patch_size > image_size) throw ConfigError("patch_size", "larger than the synthetic images");
    train.validate();
    infer.validate();
  }
};

inline void to_json(nlohmann::json& j, const AblationConfig& c) {
  std::vector<std::string> objs, archs;
  for (auto o : c.objectives) objs.push_back(to_string(o));
  for (auto a : c.archs) archs.push_back(to_string(a));
  j = {{"train_images", c.train_images}, {"test_images", c.test_images}, {"image_size", c.image_size},
       {"channels", c.channels},         {"sigma", c.sigma},             {"noise_kernel", c.noise_kernel},
       {"data_seed", c.data_seed},       {"width", c.width},             {"depth", c.depth},
       {"train", c.train},               {"s_inf", c.infer.s_inf},       {"k", c.infer.k},
       {"infer_seed", c.infer.seed},     {"objectives", objs},           {"archs", archs}};
}

struct AblationCell {
  AblationObjective objective = AblationObjective::ams;
  Arch arch = Arch::blindspot_a;
  double psnr_out_noisy = 0.0;
  double psnr_out_clean = 0.0;
  double psnr_noisy_clean = 0.0;
  double final_loss = 0.0;
  double seconds = 0.0;

  /// The output reproduces its noisy input more closely than the clean target.
  bool identity_mapping() const { return psnr_out_noisy > psnr_out_clean; }
  double gain_db() const { return psnr_out_clean - psnr_noisy_clean; }
  std::string name() const { return to_string(objective) + "/" + to_string(arch); }
};

inline void to_json(nlohmann::json& j, const AblationCell& c) {
  j = {{"objective", to_string(c.objective)},
       {"arch", to_string(c.arch)},
       {"psnr_out_noisy", c.psnr_out_noisy},
       {"psnr_out_clean", c.psnr_out_clean},
       {"psnr_noisy_clean", c.psnr_noisy_clean},
       {"gain_db", c.gain_db()},
       {"identity_mapping", c.identity_mapping()},
       {"final_loss", c.final_loss},
       {"seconds", c.seconds}};
}

struct AblationReport {
  AblationConfig config;
  std::vector<AblationCell> cells;

  const AblationCell* find(AblationObjective o, Arch a) const {
    for (const auto& c : cells)
      if (c.objective == o && c.arch == a) return &c;
    return nullptr;
  }
};

inline void to_json(nlohmann::json& j, const AblationReport& r) { j = {{"config", r.config}, {"cells", r.cells}}; }

/// Rows are training objectives, columns are architectures. Each entry shows
/// PSNR(out, noisy) / PSNR(out, clean); identity mappings are starred.
inline std::string format_table(const AblationReport& r) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-10s", "");
  os << buf;
  for (Arch a : r.config.archs) {
    std::snprintf(buf, sizeof buf, " | %-24s", to_string(a).c_str());
    os << buf;
  }
  os << "\n";
  for (AblationObjective o : r.config.objectives) {
    std::snprintf(buf, sizeof buf, "%-10s", to_string(o).c_str());
    os << buf;
    for (Arch a : r.config.archs) {
      const auto* c = r.find(o, a);
      if (c == nullptr) {
        std::snprintf(buf, sizeof buf, " | %-24s", "-");
      } else {
        char cell[64];
        std::snprintf(cell, sizeof cell, "%.2f / %.2f%s", c->psnr_out_noisy, c->psnr_out_clean,
                      c->identity_mapping() ? " *identity*" : "");
        std::snprintf(buf, sizeof buf, " | %-24s", cell);
      }
      os << buf;
    }
    os << "\n";
  }
  if (!r.cells.empty()) {
    std::snprintf(buf, sizeof buf, "entries: PSNR(out, noisy) / PSNR(out, clean) in dB; PSNR(noisy, clean) = %.2f dB\n",
                  r.cells.front().psnr_noisy_clean);
    os << buf;
  }
  return os.str();
}

/// Pixel-downsample at stride `s`, run the network on every sub-image without
/// masking, and reassemble. This is how a conventional blind-spot model is
/// applied at test time.
template <BatchDenoiser D>
ImageTensor downsampled_forward(const D& d, const ImageTensor& img, int s) {
  auto [padded, pad] = pad_reflect(img, s * d.spatial_multiple());
  auto subs = pd_split(padded, s);
  subs.subs = detail::run_checked(d, subs.subs);
  return clamp01(crop(pd_merge(subs), pad));
}

/// Trains every (objective, architecture) cell on the same synthetic data and
/// reports how close each output is to the noisy input and to the clean image.
/// When `run_root` is non-empty each cell keeps its run directory there.
inline AblationReport run_ablation(const AblationConfig& cfg, const std::filesystem::path& run_root = {},
                                   const std::function<void(const std::string&)>& log = {}) {
  cfg.validate();
  // Observations are clamped like a captured 8-bit image, so an exact copy of
  // the input survives the output clamp unchanged.
  const auto observed = [&](int count, std::uint64_t seed) {
    auto pairs = make_toy_pairs(count, cfg.channels, cfg.image_size, cfg.image_size, cfg.sigma, seed,
                                NoiseKind::correlated, cfg.noise_kernel);
    for (auto& p : pairs.items) p.noisy = clamp01(std::move(p.noisy));
    return pairs;
  };
  const auto train = observed(cfg.train_images, cfg.data_seed);
  const auto test = observed(cfg.test_images, derive_seed(cfg.data_seed, {0x74657374ULL}));
  const auto source = noisy_source(train);

  double noisy_clean = 0.0;
  for (const auto& p : test.items) noisy_clean += capped_psnr(psnr(p.noisy, p.clean));
  noisy_clean /= static_cast<double>(test.size());

  AblationReport report;
  report.config = cfg;
  const auto scratch = run_root.empty() ? std::filesystem::temp_directory_path() / "amsnet_ablation" : run_root;
  for (AblationObjective obj : cfg.objectives)
    for (Arch arch : cfg.archs) {
      const auto start = std::chrono::steady_clock::now();
      AblationCell cell;
      cell.objective = obj;
      cell.arch = arch;
      cell.psnr_noisy_clean = noisy_clean;

      RunOptions opt;
      opt.mode = obj == AblationObjective::ams ? TrainMode::base : TrainMode::bsn;
      opt.spec = default_spec(arch, cfg.channels);
      opt.spec.width = cfg.width;
      opt.spec.depth = cfg.depth;
      opt.spec.seed = cfg.train.seed;
      opt.run_dir = scratch / (to_string(obj) + "_" + to_string(arch));
      if (run_root.empty()) std::filesystem::remove_all(opt.run_dir);
      opt.extra_meta = {{"ablation_cell", to_string(obj) + "/" + to_string(arch)}};
      opt.on_step = [&](const LossRecord& r) { cell.final_loss = r.loss; };
      const auto d = load_denoiser(run_training(cfg.train, source, opt));
      if (run_root.empty()) std::filesystem::remove_all(opt.run_dir);

      for (std::size_t i = 0; i < test.size(); ++i) {
        const auto& p = test.items[i];
        const ImageTensor out = obj == AblationObjective::ams ? denoise_image(d, p.noisy, cfg.infer, i)
                                                              : downsampled_forward(d, p.noisy, cfg.infer.s_inf);
        cell.psnr_out_noisy += capped_psnr(psnr(out, p.noisy));
        cell.psnr_out_clean += capped_psnr(psnr(out, p.clean));
      }
      cell.psnr_out_noisy /= static_cast<double>(test.size());
      cell.psnr_out_clean /= static_cast<double>(test.size());
      cell.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (log) {
        char buf[200];
        std::snprintf(buf, sizeof buf, "%s: out/noisy %.2f dB, out/clean %.2f dB, noisy/clean %.2f dB (%.0f s)",
                      cell.name().c_str(), cell.psnr_out_noisy, cell.psnr_out_clean, cell.psnr_noisy_clean,
                      cell.seconds);
        log(buf);
      }
      report.cells.push_back(cell);
    }
  return report;
}

}  // namespace ams
