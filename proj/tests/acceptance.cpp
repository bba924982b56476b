// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only when
// every selected criterion passes. Thresholds and time limits are fixed below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "amsnet/ablation.hpp"
#include "amsnet/amsnet.hpp"

using namespace ams;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double limit_s;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ImageTensor random_image(int c, int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.f, 1.f);
  ImageTensor img(c, h, w);
  for (auto& v : img.data) v = u(rng);
  return img;
}

template <typename T>
BasicImage<T> random_image_t(int c, int h, int w, std::mt19937_64& rng) {
  std::uniform_real_distribution<T> u(0, 1);
  BasicImage<T> img(c, h, w);
  for (auto& v : img.data) v = u(rng);
  return img;
}

struct IdentityDenoiser {
  int spatial_multiple() const { return 1; }
  std::vector<ImageTensor> denoise_batch(const std::vector<ImageTensor>& b) const { return b; }
};

// 1. Every pixel is kept by k-1 branches and restored by exactly one.
Outcome mask_partition_identities() {
  std::mt19937_64 rng(101);
  int failures = 0;
  for (int draw = 0; draw < 200; ++draw) {
    const int s = 1 + static_cast<int>(rng() % 5);
    const int k = 2 + static_cast<int>(rng() % 3);
    const int h = 1 + static_cast<int>(rng() % 24), w = 1 + static_cast<int>(rng() % 24);
    const auto part = sample_partition_for_stride(h, w, s, k, rng());
    bool ok = part.k() == k && static_cast<int>(part.branch_masks[0].size()) == s * s;
    for (int j = 0; ok && j < s * s; ++j)
      for (std::size_t p = 0; p < static_cast<std::size_t>(h) * w; ++p) {
        int keep = 0, restore = 0;
        for (int i = 0; i < k; ++i) {
          keep += part.branch_masks[i][j].data[p];
          restore += complement(part.branch_masks[i][j]).data[p];
        }
        ok = ok && keep == k - 1 && restore == 1;
      }
    failures += ok ? 0 : 1;
  }
  return {failures == 0, fmt("200 draws, %d violating", failures)};
}

// 2. Merge inverts split bit-exactly.
Outcome pd_round_trip() {
  std::mt19937_64 rng(202);
  int failures = 0;
  for (int i = 0; i < 100; ++i) {
    const int s = 1 + i % 5;
    const int c = rng() % 2 ? 3 : 1;
    const int h = s * (1 + static_cast<int>(rng() % 12)), w = s * (1 + static_cast<int>(rng() % 12));
    const auto img = random_image(c, h, w, rng);
    failures += pd_merge(pd_split(img, s)) == img ? 0 : 1;
  }
  return {failures == 0, fmt("100 cases over s in 1..5, %d mismatches", failures)};
}

// 3. An identity denoiser yields exactly zero: no input pixel reaches its own output.
Outcome anti_identity() {
  std::mt19937_64 rng(303);
  int nonzero = 0;
  for (int i = 0; i < 20; ++i) {
    const auto img = random_image(3, 10 + static_cast<int>(rng() % 30), 10 + static_cast<int>(rng() % 30), rng);
    InferConfig cfg;
    cfg.s_inf = 1 + static_cast<int>(rng() % 4);
    cfg.k = 2 + static_cast<int>(rng() % 3);
    cfg.seed = rng();
    const auto out = denoise_image_raw(IdentityDenoiser{}, img, cfg);
    for (float v : out.data) nonzero += v != 0.f ? 1 : 0;
  }
  return {nonzero == 0, fmt("20 images, %d non-zero output values", nonzero)};
}

// 4. Sum of per-branch masked losses equals the L1 distance of the composed output.
Outcome loss_decomposition() {
  std::mt19937_64 rng(404);
  auto spec = default_spec(Arch::unet_small, 3);
  spec.seed = 4;
  const DenoiserHandle d(spec);
  double worst = 0.0;
  for (int i = 0; i < 20; ++i) {
    const int k = 2 + i % 2, s = 2;
    const int h = s * d.spatial_multiple() * (2 + static_cast<int>(rng() % 3));
    const int w = s * d.spatial_multiple() * (2 + static_cast<int>(rng() % 3));
    const auto noisy = random_image(3, h, w, rng);
    const auto subs = pd_split(noisy, s);
    const auto part = sample_partition_for_stride(subs[0].h, subs[0].w, s, k, rng());
    double branch_sum = 0.0;
    for (const auto& set : part.branch_masks) {
      SubSampleSet out{s, d.denoise_batch(apply_mask(subs, set).subs)};
      branch_sum += mask_loss(set, subs, out).loss.value;
    }
    const auto composed = pd_merge(mmdb_denoise(d, subs, part));
    double l1 = 0.0;
    for (std::size_t p = 0; p < composed.size(); ++p) l1 += std::abs(double(composed.data[p]) - noisy.data[p]);
    worst = std::max(worst, std::abs(branch_sum - l1) / l1);
  }
  return {worst <= 1e-5, fmt("20 images, k in {2,3}, worst relative gap %.2e (tolerance 1e-5)", worst)};
}

// 5. Analytic gradients of the smoothness and masked losses against central differences.
Outcome gradient_checks() {
  std::mt19937_64 rng(505);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_image_t<double>(1, 8, 8, rng);
    const auto tv = tv_loss(x);
    const double t = 1e-6;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double keep = x.data[i];
      x.data[i] = keep + t;
      const double up = tv_loss(x).loss.value;
      x.data[i] = keep - t;
      const double down = tv_loss(x).loss.value;
      x.data[i] = keep;
      const double fd = (up - down) / (2 * t);
      worst = std::max(worst, std::abs(fd - tv.grad.data[i]) / std::max(1.0, std::abs(fd)));
    }

    const auto target = random_image_t<double>(1, 8, 8, rng);
    BasicSubSampleSet<double> targets{1, {target}};
    auto out = random_image_t<double>(1, 8, 8, rng);
    // Keep every residual at least 1e-2 away from zero so the L1 kink is not crossed.
    for (std::size_t i = 0; i < out.size(); ++i)
      if (std::abs(out.data[i] - target.data[i]) < 1e-2) out.data[i] = target.data[i] + 2e-2;
    const MaskSet masks{sample_mask(8, 8, 0.5, rng())};
    const auto ml = mask_loss(masks, targets, BasicSubSampleSet<double>{1, {out}});
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double keep = out.data[i];
      out.data[i] = keep + t;
      const double up = mask_loss(masks, targets, BasicSubSampleSet<double>{1, {out}}).loss.value;
      out.data[i] = keep - t;
      const double down = mask_loss(masks, targets, BasicSubSampleSet<double>{1, {out}}).loss.value;
      out.data[i] = keep;
      const double fd = (up - down) / (2 * t);
      worst = std::max(worst, std::abs(fd - ml.grad[0].data[i]) / std::max(1.0, std::abs(fd)));
    }
  }
  return {worst < 1e-4, fmt("10 random 1x8x8 inputs per loss, worst relative error %.2e (limit 1e-4)", worst)};
}

// 6. Input-gradient probes: blindspot-A never sees its own pixel, blindspot-AS does.
Outcome receptive_field() {
  std::mt19937_64 rng(606);
  const int h = 24, w = 24;
  std::vector<std::pair<int, int>> pixels;
  for (int i = 0; i < 50; ++i) pixels.emplace_back(static_cast<int>(rng() % h), static_cast<int>(rng() % w));
  const auto x = random_image(3, h, w, rng);
  auto self_sensitivity = [&](Arch arch) {
    auto spec = default_spec(arch, 3);
    spec.seed = 6;
    DenoiserHandle d(spec);
    std::vector<double> out;
    for (const auto& [py, px] : pixels) {
      nn::Tape tape;
      const auto y = d.forward(nn::to_feature_map({x}), &tape);
      nn::FeatureMap gy(y.c, y.n, y.h, y.w);
      for (int c = 0; c < y.c; ++c) gy.at(c, 0, py, px) = 1.f;
      const auto gx = d.backward(gy, tape);
      double g = 0.0;
      for (int c = 0; c < gx.c; ++c) g += std::abs(gx.at(c, 0, py, px));
      out.push_back(g);
    }
    return out;
  };
  const auto a = self_sensitivity(Arch::blindspot_a);
  const auto as = self_sensitivity(Arch::blindspot_as);
  double worst_a = 0.0;
  int as_violations = 0;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    worst_a = std::max(worst_a, a[i]);
    as_violations += as[i] >= 1e-6 ? 1 : 0;
  }
  const bool pass = worst_a < 1e-6 && as_violations >= 45;
  return {pass, fmt("blindspot-A max |d out(p)/d in(p)| = %.1e; blindspot-AS sees itself at %d/50 pixels",
                    worst_a, as_violations)};
}

// 7. Identity-mapping ablation on correlated noise.
Outcome identity_ablation(const fs::path& work) {
  AblationConfig cfg;
  cfg.archs = {Arch::blindspot_as};
  const auto report = run_ablation(cfg, work / "ablation", [](const std::string& line) {
    std::cout << "    " << line << "\n" << std::flush;
  });
  const auto* bsn = report.find(AblationObjective::bsn, Arch::blindspot_as);
  const auto* ams = report.find(AblationObjective::ams, Arch::blindspot_as);
  const bool bsn_identity = bsn->psnr_out_noisy >= 30.0 && std::abs(bsn->gain_db()) <= 1.0;
  const bool ams_denoises = ams->gain_db() >= 1.0;
  return {bsn_identity && ams_denoises,
          fmt("BSN-loss/AS: out-vs-noisy %.2f dB (>= 30), gain %+.2f dB (|.| <= 1); AMS/AS gain %+.2f dB (>= 1)",
              bsn->psnr_out_noisy, bsn->gain_db(), ams->gain_db())};
}

// Shared desk run for criteria 8 and 9: Gaussian noise, unet-small.
struct GaussianDesk {
  InMemoryPairs train = make_toy_pairs(32, 3, 96, 96, 25.0 / 255.0, 1);
  InMemoryPairs test = make_toy_pairs(4, 3, 96, 96, 25.0 / 255.0, 999);
  InferConfig infer = [] {
    InferConfig c;
    c.s_inf = 1;  // iid noise needs no decorrelating stride at test time
    c.k = 2;
    c.seed = 5;
    return c;
  }();
  fs::path base_ckpt;
  std::optional<EvalReport> base_report;
};

Outcome gaussian_desk(GaussianDesk& desk, const fs::path& work) {
  TrainConfig cfg;
  cfg.s_train = 2;
  cfg.patch_size = 48;
  cfg.batch_size = 4;
  cfg.lr = 1e-3;
  cfg.steps = 2000;
  cfg.seed = 11;
  RunOptions opt;
  opt.run_dir = work / "gaussian_base";
  fs::remove_all(opt.run_dir);
  opt.spec = default_spec(Arch::unet_small, 3);
  opt.spec.width = 32;
  opt.spec.seed = 3;
  desk.base_ckpt = run_training(cfg, noisy_source(desk.train), opt);
  const auto ck = load_checkpoint(desk.base_ckpt);
  desk.base_report = evaluate(restore_denoiser(ck), desk.test, Variant::B, desk.infer, ck.variant_tag());
  const double gain = desk.base_report->mean_psnr_db - desk.base_report->mean_input_psnr_db;
  return {gain >= 3.0, fmt("noisy %.2f dB -> denoised %.2f dB, gain %+.2f dB (>= 3)",
                           desk.base_report->mean_input_psnr_db, desk.base_report->mean_psnr_db, gain)};
}

Outcome finetune_direction(GaussianDesk& desk, const fs::path& work) {
  if (!desk.base_report) return {false, "base desk run (criterion 8) did not complete"};
  TrainConfig cfg;
  cfg.s_train = desk.infer.s_inf;
  cfg.k = desk.infer.k;
  cfg.lambda = 0.1;
  cfg.patch_size = 48;
  cfg.batch_size = 4;
  cfg.lr = 1e-4;
  cfg.steps = 200;
  cfg.seed = 12;
  RunOptions opt;
  opt.run_dir = work / "gaussian_finetune";
  fs::remove_all(opt.run_dir);
  opt.mode = TrainMode::finetune;
  opt.init_checkpoint = desk.base_ckpt;
  const auto ck = load_checkpoint(run_training(cfg, noisy_source(desk.train), opt));
  const auto ft = evaluate(restore_denoiser(ck), desk.test, Variant::P, desk.infer, ck.variant_tag());
  const auto& base = *desk.base_report;
  const bool pass = ft.mean_checkerboard < base.mean_checkerboard && ft.mean_psnr_db >= base.mean_psnr_db - 0.05;
  return {pass, fmt("checkerboard %.5f -> %.5f, PSNR %.3f -> %.3f dB (%+.3f, floor -0.05)", base.mean_checkerboard,
                    ft.mean_checkerboard, base.mean_psnr_db, ft.mean_psnr_db, ft.mean_psnr_db - base.mean_psnr_db)};
}

// 10. Refinement limits with a fixed seed.
Outcome refinement_limits() {
  std::mt19937_64 rng(1010);
  auto spec = default_spec(Arch::unet_small, 3);
  spec.width = 8;
  spec.seed = 10;
  const DenoiserHandle d(spec);
  int mismatches = 0;
  for (int i = 0; i < 4; ++i) {
    const auto noisy = random_image(3, 16, 20, rng);
    const auto inter = random_image(3, 16, 20, rng);
    const std::uint64_t seed = rng();
    mismatches += refine_r3(d, noisy, inter, 4, 0.0, seed) == refine_forward(d, inter, RefinePass::plain, seed) ? 0 : 1;
    mismatches += refine_r3(d, noisy, inter, 4, 1.0, seed) == refine_forward(d, noisy, RefinePass::plain, seed) ? 0 : 1;
  }
  return {mismatches == 0, fmt("8 comparisons (p = 0 and p = 1), %d not bit-identical", mismatches)};
}

// 11. Box-correlated noise loses its correlation after stride-3 downsampling.
Outcome decorrelation() {
  const ImageTensor flat(1, 600, 600, 0.5f);
  auto noise = synth_correlated(flat, 25.0 / 255.0, 3, 11);
  for (auto& v : noise.data) v -= 0.5f;
  const double full = lag1_autocorrelation(noise);
  double worst = 0.0;
  for (const auto& sub : pd_split(noise, 3).subs) worst = std::max(worst, std::abs(lag1_autocorrelation(sub)));
  return {full > 0.3 && worst < 0.1, fmt("full-image lag-1 rho %.3f (> 0.3); worst sub-image |rho| %.3f (< 0.1)",
                                         full, worst)};
}

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

// 12. Two CLI invocations with the same seed write byte-identical files.
Outcome cli_determinism(const fs::path& cli, const fs::path& work) {
  if (cli.empty() || !fs::exists(cli)) return {false, "CLI binary not found: " + cli.string()};
  const auto dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto sh = [&](const std::string& args) {
    return std::system((quote(cli) + " " + args + " > " + quote(dir / "log.txt") + " 2>&1").c_str());
  };
  if (sh("synth --output " + quote(dir / "data") + " --count 2 --size 40 --seed 3") != 0)
    return {false, "synth command failed"};
  if (sh("train --data " + quote(dir / "data") + " --output " + quote(dir / "run") +
         " --width 8 --steps 3 --patch-size 24 --batch-size 2 --log-every 0") != 0)
    return {false, "train command failed"};
  for (const char* out : {"a", "b"})
    if (sh("denoise --checkpoint " + quote(dir / "run" / "final.ckpt") + " --input " + quote(dir / "data" / "noisy") +
           " --output " + quote(dir / out) + " --seed 42 --refine --refine-T 3") != 0)
      return {false, "denoise command failed"};
  int files = 0, differing = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    if (e.path().extension() != ".png") continue;
    ++files;
    std::ifstream fa(e.path(), std::ios::binary), fb(dir / "b" / e.path().filename(), std::ios::binary);
    const std::string a{std::istreambuf_iterator<char>(fa), {}}, b{std::istreambuf_iterator<char>(fb), {}};
    differing += (a.empty() || a != b) ? 1 : 0;
  }
  return {files == 2 && differing == 0, fmt("%d output files compared, %d differ", files, differing)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  fs::path cli_path, work = fs::temp_directory_path() / "amsnet_acceptance";
  std::vector<int> only;
  app.add_option("--cli", cli_path, "Path to the amsnet command-line binary");
  app.add_option("--workdir", work, "Scratch directory")->capture_default_str();
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  if (cli_path.empty()) cli_path = fs::path(argv[0]).parent_path() / ".." / "tools" / "amsnet";
  fs::create_directories(work);

  GaussianDesk desk;
  const std::vector<Criterion> criteria{
      {1, "mask-partition identities", 10, mask_partition_identities},
      {2, "pixel-downsampling round trip", 10, pd_round_trip},
      {3, "identity stub gives zero output", 10, anti_identity},
      {4, "loss decomposition", 60, loss_decomposition},
      {5, "gradient checks", 60, gradient_checks},
      {6, "receptive-field probes", 60, receptive_field},
      {7, "identity-mapping ablation", 20 * 60, [&] { return identity_ablation(work); }},
      {8, "Gaussian desk run", 20 * 60, [&] { return gaussian_desk(desk, work); }},
      {9, "fine-tuning direction", 30 * 60, [&] { return finetune_direction(desk, work); }},
      {10, "refinement limiting cases", 10, refinement_limits},
      {11, "noise decorrelation", 30, decorrelation},
      {12, "CLI determinism", 60, [&] { return cli_determinism(cli_path, work); }},
  };

  // Criterion 9 continues from criterion 8's model.
  std::set<int> selected(only.begin(), only.end());
  if (selected.count(9) && !selected.count(8)) selected.insert(8);

  int failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    ++ran;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs <= c.limit_s;
    const bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::cout << fmt("[%s] %2d %-32s %s; %.1f s (limit %.0f s)%s", pass ? "PASS" : "FAIL", c.id, c.title.c_str(),
                     o.detail.c_str(), secs, c.limit_s, in_time ? "" : " TIME LIMIT EXCEEDED")
              << "\n"
              << std::flush;
  }
  std::cout << fmt("%d/%d criteria passed", ran - failed, ran) << "\n";
  return failed == 0 ? 0 : 1;
}
