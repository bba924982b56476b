// Trains a small model on synthetic noisy images, fine-tunes it, and compares
// the base and fine-tuned variants on a held-out set.
//
//   train_and_denoise [steps] [run_dir]

#include <cstdlib>
#include <filesystem>
#include <iostream>

#include "amsnet/amsnet.hpp"

int main(int argc, char** argv) {
  using namespace ams;
  const int steps = argc > 1 ? std::atoi(argv[1]) : 300;
  const std::filesystem::path run_dir = argc > 2 ? argv[2] : "sample_run";

  const auto train = make_toy_pairs(16, 3, 64, 64, 25.0 / 255.0, 1);
  const auto test = make_toy_pairs(2, 3, 64, 64, 25.0 / 255.0, 2);

  TrainConfig cfg;
  cfg.s_train = 2;
  cfg.patch_size = 48;
  cfg.lr = 1e-3;
  cfg.steps = steps;
  RunOptions opt;
  opt.run_dir = run_dir / "base";
  opt.spec = default_spec(Arch::unet_small, 3);
  opt.spec.width = 16;
  opt.on_step = [&](const LossRecord& r) {
    if (r.step % 50 == 0) std::cout << "base step " << r.step << " loss " << r.loss << "\n";
  };
  const auto base_path = run_training(cfg, noisy_source(train), opt);

  InferConfig infer;
  infer.s_inf = 1;
  const auto base = load_checkpoint(base_path);
  const auto base_report = evaluate(restore_denoiser(base), test, Variant::B, infer, base.variant_tag());

  cfg.s_train = infer.s_inf;
  cfg.lr = 1e-4;
  cfg.steps = steps / 4;
  opt.run_dir = run_dir / "finetune";
  opt.mode = TrainMode::finetune;
  opt.init_checkpoint = base_path;
  const auto tuned = load_checkpoint(run_training(cfg, noisy_source(train), opt));
  const auto tuned_report = evaluate(restore_denoiser(tuned), test, Variant::P, infer, tuned.variant_tag());

  std::cout << "noisy input   " << base_report.mean_input_psnr_db << " dB\n"
            << "base          " << base_report.mean_psnr_db << " dB, checkerboard " << base_report.mean_checkerboard
            << "\n"
            << "fine-tuned    " << tuned_report.mean_psnr_db << " dB, checkerboard " << tuned_report.mean_checkerboard
            << "\n";
}
