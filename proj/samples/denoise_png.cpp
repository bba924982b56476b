// Denoises one PNG with a saved checkpoint.
//
//   denoise_png <checkpoint> <input.png> <output.png> [stride] [--refine]

#include <cstdlib>
#include <cstring>
#include <iostream>

#include "amsnet/amsnet.hpp"

int main(int argc, char** argv) {
  using namespace ams;
  if (argc < 4) {
    std::cerr << "usage: denoise_png <checkpoint> <input.png> <output.png> [stride] [--refine]\n";
    return 2;
  }
  try {
    const auto ck = load_checkpoint(argv[1]);
    const auto denoiser = restore_denoiser(ck);
    InferConfig cfg;
    if (argc > 4 && std::strcmp(argv[4], "--refine") != 0) cfg.s_inf = std::atoi(argv[4]);
    const bool refine = std::strcmp(argv[argc - 1], "--refine") == 0;
    cfg.validate();

    // The checkpoint tag says whether the weights are a base or fine-tuned model.
    const bool tuned = ck.variant_tag() == required_training_tag(Variant::P);
    const Variant variant = tuned ? (refine ? Variant::P_E : Variant::P) : (refine ? Variant::B_E : Variant::B);
    write_png(argv[3], denoise_variant(denoiser, read_png(argv[2]), variant, cfg, ck.variant_tag()));
    std::cout << "wrote " << argv[3] << " (" << to_string(variant) << ")\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
