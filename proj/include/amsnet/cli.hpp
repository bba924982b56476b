#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "amsnet/ablation.hpp"
#include "amsnet/checkpoint.hpp"
#include "amsnet/datasets.hpp"
#include "amsnet/evaluation.hpp"
#include "amsnet/inference.hpp"
#include "amsnet/png_io.hpp"
#include "amsnet/training.hpp"

namespace ams::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitInvalid = 2;

inline constexpr const char* kRunRootEnv = "AMSNET_RUN_ROOT";

/// Directory under which runs without an explicit --output are created.
inline fs::path run_root() {
  const char* env = std::getenv(kRunRootEnv);
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
}

/// Synthetic data used when a training command is given no --data folder.
struct SynthOptions {
  std::string noise = "gaussian";
  double sigma255 = 25.0;  // noise level on the 0..255 scale
  int count = 16;
  int size = 64;
  int channels = 3;
  int kernel = 3;
  std::uint64_t seed = 1;

  NoiseKind kind() const {
    if (noise == "gaussian") return NoiseKind::gaussian;
    if (noise == "correlated") return NoiseKind::correlated;
    throw ConfigError("noise", "expected 'gaussian' or 'correlated', got '" + noise + "'");
  }

  void validate() const {
    kind();
    if (!(sigma255 >= 0.0)) throw ConfigError("sigma", "must be non-negative");
    if (count < 1) throw ConfigError("count", "must be positive");
    if (size < 1) throw ConfigError("size", "must be positive");
    if (channels != 1 && channels != 3) throw ConfigError("channels", "must be 1 or 3");
    if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel", "must be odd and positive");
  }

  InMemoryPairs make() const {
    return make_toy_pairs(count, channels, size, size, sigma255 / 255.0, seed, kind(), kernel);
  }
};

inline void to_json(nlohmann::json& j, const SynthOptions& s) {
  j = {{"noise", s.noise}, {"sigma", s.sigma255}, {"count", s.count}, {"size", s.size},
       {"channels", s.channels}, {"kernel", s.kernel}, {"seed", s.seed}};
}

/// Everything one command needs. Filled from defaults, then the config file,
/// then command-line flags.
struct RunConfig {
  std::string command;
  fs::path config_file;
  fs::path data;
  fs::path output;
  fs::path input;
  fs::path checkpoint;
  fs::path base_checkpoint;
  std::string run_name;
  std::string variant;         // empty: follow the checkpoint's training tag
  std::optional<bool> refine;  // set only when --refine/--no-refine was given
  std::string arch = "unet-small";
  int width = 0;     // 0: architecture default
  int depth = 0;     // 0: architecture default
  int channels = 0;  // 0: taken from the data
  std::uint64_t net_seed = 0;
  int log_every = 100;
  TrainConfig train;
  InferConfig infer;
  SynthOptions synth;
  AblationConfig ablation;

  /// Output directory for commands that create a run directory.
  fs::path run_dir() const {
    if (!output.empty()) return output;
    return run_root() / (run_name.empty() ? command : run_name);
  }

  DenoiserSpec denoiser_spec(int data_channels) const {
    auto spec = default_spec(arch_from_string(arch), channels > 0 ? channels : data_channels);
    if (width > 0) spec.width = width;
    if (depth > 0) spec.depth = depth;
    spec.seed = net_seed;
    spec.validate();
    return spec;
  }

  void validate() const {
    const auto require = [](const fs::path& p, const char* field) {
      if (p.empty()) throw ConfigError(field, "is required");
    };
    if (log_every < 0) throw ConfigError("log_every", "must be >= 0");
    if (channels != 0 && channels != 1 && channels != 3) throw ConfigError("channels", "must be 1 or 3");
    if (command == "train" || command == "finetune") {
      train.validate();
      if (data.empty()) synth.validate();
      if (command == "train") {
        arch_from_string(arch);
        denoiser_spec(3);
      } else {
        require(base_checkpoint, "base");
      }
    } else if (command == "denoise" || command == "eval") {
      infer.validate();
      require(checkpoint, "checkpoint");
      if (!variant.empty()) variant_from_string(variant);
      if (command == "denoise") {
        require(input, "input");
        require(output, "output");
      } else {
        require(data, "data");
      }
    } else if (command == "ablate-identity") {
      ablation.validate();
    } else if (command == "synth") {
      synth.validate();
      require(output, "output");
    }
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"command", c.command},
       {"config_file", c.config_file.string()},
       {"data", c.data.string()},
       {"output", c.output.string()},
       {"input", c.input.string()},
       {"checkpoint", c.checkpoint.string()},
       {"base_checkpoint", c.base_checkpoint.string()},
       {"run_name", c.run_name},
       {"variant", c.variant},
       {"refine", c.refine ? nlohmann::json(*c.refine) : nlohmann::json()},
       {"arch", c.arch},
       {"width", c.width},
       {"depth", c.depth},
       {"channels", c.channels},
       {"net_seed", c.net_seed},
       {"train", c.train},
       {"infer", c.infer},
       {"synth", c.synth}};
  if (c.command == "ablate-identity") j["ablation"] = c.ablation;
}

/// Resolves the inference variant from --variant, --refine/--no-refine and
/// the checkpoint's training tag.
inline Variant effective_variant(const RunConfig& rc, const std::string& checkpoint_tag) {
  if (!rc.variant.empty()) {
    const Variant v = variant_from_string(rc.variant);
    if (rc.refine && *rc.refine != uses_refinement(v))
      throw ConfigError("refine", std::string(*rc.refine ? "--refine" : "--no-refine") + " contradicts variant " +
                                      rc.variant);
    return v;
  }
  if (checkpoint_tag != "B" && checkpoint_tag != "P")
    throw ConfigError("variant", "checkpoint is tagged '" + checkpoint_tag +
                                     "', which has no masked-inference variant; pass --variant explicitly");
  const bool refine = rc.refine.value_or(false);
  if (checkpoint_tag == "B") return refine ? Variant::B_E : Variant::B;
  return refine ? Variant::P_E : Variant::P;
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  f << j.dump(2) << '\n';
  if (!f) throw IoError("cannot write " + path.string());
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  f << text;
  if (!f) throw IoError("cannot write " + path.string());
}

// Commands. Each returns an exit status; exceptions are mapped by run_cli.

inline int cmd_train(const RunConfig& rc, std::ostream& out) {
  std::optional<NoisyDataset> folder;
  std::optional<InMemorySource> synthetic;
  const ImageSource* source = nullptr;
  if (!rc.data.empty()) {
    const fs::path dir = fs::is_directory(rc.data / "noisy") ? rc.data / "noisy" : rc.data;
    folder.emplace(load_noisy_folder(dir));
    source = &*folder;
  } else {
    synthetic.emplace(noisy_source(rc.synth.make()));
    source = &*synthetic;
  }
  if (source->size() == 0) throw DatasetError("no training images in " + rc.data.string());

  RunOptions opt;
  opt.run_dir = rc.run_dir();
  opt.mode = rc.command == "finetune" ? TrainMode::finetune : TrainMode::base;
  if (opt.mode == TrainMode::finetune) {
    opt.init_checkpoint = rc.base_checkpoint;
  } else {
    opt.spec = rc.denoiser_spec(source->shape(0).c);
  }
  opt.extra_meta = {{"run_config", rc}};
  opt.on_step = [&](const LossRecord& r) {
    if (rc.log_every > 0 && (r.step % rc.log_every == 0 || r.step == rc.train.steps))
      out << "step " << r.step << "/" << rc.train.steps << " loss " << r.loss << "\n" << std::flush;
  };
  const auto final_path = run_training(rc.train, *source, opt);
  out << "checkpoint: " << final_path.string() << "\n";
  return kExitOk;
}

inline int cmd_denoise(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const auto ck = load_checkpoint(rc.checkpoint);
  const Variant variant = effective_variant(rc, ck.variant_tag());
  if (ck.variant_tag() != required_training_tag(variant))
    throw ConfigError("variant", "variant " + to_string(variant) + " needs a checkpoint trained as '" +
                                     required_training_tag(variant) + "', but " + rc.checkpoint.string() +
                                     " is tagged '" + ck.variant_tag() + "'");
  const auto denoiser = restore_denoiser(ck);

  std::vector<fs::path> inputs;
  const bool single = !fs::is_directory(rc.input);
  if (single) {
    inputs.push_back(rc.input);
  } else {
    inputs = detail::list_pngs(rc.input);
    if (inputs.empty()) throw DatasetError("no PNG images in " + rc.input.string());
  }
  const bool output_is_file = single && rc.output.extension() == ".png";
  const fs::path out_dir = output_is_file ? rc.output.parent_path() : rc.output;

  auto snapshot = nlohmann::json{{"run_config", rc}, {"effective_variant", to_string(variant)}};
  write_json(out_dir / "denoise_config.json", snapshot);

  std::size_t failed = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const fs::path dst = output_is_file ? rc.output : out_dir / (inputs[i].stem().string() + ".png");
    try {
      const auto img = read_png(inputs[i]);
      write_png(dst, denoise_variant(denoiser, img, variant, rc.infer, ck.variant_tag(), i));
      out << inputs[i].string() << " -> " << dst.string() << "\n";
    } catch (const IoError& e) {
      ++failed;
      err << "warning: skipping " << inputs[i].string() << ": " << e.what() << "\n";
    } catch (const ShapeError& e) {
      ++failed;
      err << "warning: skipping " << inputs[i].string() << ": " << e.what() << "\n";
    }
  }
  if (failed == inputs.size()) {
    err << "error: none of the " << inputs.size() << " input image(s) could be denoised\n";
    return kExitFailure;
  }
  return kExitOk;
}

inline int cmd_eval(const RunConfig& rc, std::ostream& out) {
  const auto ck = load_checkpoint(rc.checkpoint);
  const Variant variant = effective_variant(rc, ck.variant_tag());
  const auto pairs = load_paired_folder(rc.data);
  if (pairs.size() == 0) throw DatasetError("no image pairs in " + rc.data.string());
  const auto denoiser = restore_denoiser(ck);
  auto report = evaluate(denoiser, pairs, variant, rc.infer, ck.variant_tag());
  report.config["checkpoint"] = fs::absolute(rc.checkpoint).string();
  report.config["data"] = fs::absolute(rc.data).string();
  const fs::path dir = rc.run_dir();
  write_json(dir / "eval.json", report);
  write_json(dir / "run_config.json", rc);
  const auto table = format_table(report);
  write_text(dir / "eval.txt", table);
  out << table;
  for (const auto& name : report.skipped) out << "skipped unreadable pair: " << name << "\n";
  if (report.rows.empty()) {
    out << "error: every pair failed to load\n";
    return kExitFailure;
  }
  return kExitOk;
}

inline int cmd_ablate_identity(const RunConfig& rc, std::ostream& out) {
  const fs::path dir = rc.run_dir();
  fs::create_directories(dir);
  write_json(dir / "run_config.json", rc);
  const auto report = run_ablation(rc.ablation, dir, [&](const std::string& line) { out << line << "\n" << std::flush; });
  write_json(dir / "ablation.json", report);
  const auto table = format_table(report);
  write_text(dir / "ablation.txt", table);
  out << table;
  return kExitOk;
}

inline int cmd_synth(const RunConfig& rc, std::ostream& out) {
  const auto pairs = rc.synth.make();
  write_paired_folder(rc.output, pairs);
  write_json(rc.output / "synth.json", rc.synth);
  out << "wrote " << pairs.size() << " pairs to " << rc.output.string() << "\n";
  return kExitOk;
}

namespace detail {

inline void add_train_options(CLI::App* app, RunConfig& rc) {
  auto& t = rc.train;
  app->add_option("--data", rc.data, "Folder of noisy PNGs (or a paired folder with noisy/); synthetic data if omitted");
  app->add_option("--output", rc.output, "Run directory (default: $AMSNET_RUN_ROOT/<run-name>)");
  app->add_option("--run-name", rc.run_name, "Run directory name under the run root");
  app->add_option("--pd-train", t.s_train, "Pixel-downsampling stride during training")->capture_default_str();
  app->add_option("--mask-ratio", t.mask_ratio, "Fraction of masked pixels per sub-image")->capture_default_str();
  app->add_option("--patch-size", t.patch_size, "Training patch size")->capture_default_str();
  app->add_option("--batch-size", t.batch_size, "Patches per step")->capture_default_str();
  app->add_option("--lr", t.lr, "AdamW learning rate")->capture_default_str();
  app->add_option("--weight-decay", t.weight_decay, "AdamW weight decay")->capture_default_str();
  app->add_option("--steps", t.steps, "Optimizer steps")->capture_default_str();
  app->add_option("--seed", t.seed, "Seed for patches and masks")->capture_default_str();
  app->add_option("--lambda", t.lambda, "Smoothness weight (fine-tuning)")->capture_default_str();
  app->add_option("--k", t.k, "Number of complementary branches (fine-tuning)")->capture_default_str();
  app->add_flag("--augment,!--no-augment", t.augment, "Random flips and rotations");
  app->add_option("--checkpoint-every", t.checkpoint_every, "Save step checkpoints every N steps (0: final only)");
  app->add_option("--log-every", rc.log_every, "Print the loss every N steps (0: silent)")->capture_default_str();
  app->add_option("--synth-noise", rc.synth.noise, "Synthetic noise: gaussian or correlated")->capture_default_str();
  app->add_option("--synth-sigma", rc.synth.sigma255, "Synthetic noise level on the 0..255 scale")->capture_default_str();
  app->add_option("--synth-count", rc.synth.count, "Number of synthetic images")->capture_default_str();
  app->add_option("--synth-size", rc.synth.size, "Synthetic image side length")->capture_default_str();
  app->add_option("--synth-channels", rc.synth.channels, "Synthetic image channels")->capture_default_str();
  app->add_option("--synth-kernel", rc.synth.kernel, "Correlation kernel size for correlated noise")->capture_default_str();
  app->add_option("--synth-seed", rc.synth.seed, "Seed for the synthetic data")->capture_default_str();
}

inline void add_net_options(CLI::App* app, RunConfig& rc) {
  app->add_option("--arch", rc.arch, "unet-small, dncnn, blindspot-A or blindspot-AS")->capture_default_str();
  app->add_option("--width", rc.width, "Network width (0: architecture default)");
  app->add_option("--depth", rc.depth, "Network depth (0: architecture default)");
  app->add_option("--channels", rc.channels, "Image channels (0: from the data)");
  app->add_option("--net-seed", rc.net_seed, "Seed for weight initialisation");
}

inline void add_infer_options(CLI::App* app, RunConfig& rc, bool& refine_flag, CLI::Option*& refine_opt) {
  auto& c = rc.infer;
  app->add_option("--checkpoint", rc.checkpoint, "Trained checkpoint");
  app->add_option("--variant", rc.variant, "B, P, B-E or P-E (default: from the checkpoint)");
  app->add_option("--pd-infer", c.s_inf, "Pixel-downsampling stride at inference")->capture_default_str();
  app->add_option("--k", c.k, "Number of complementary branches")->capture_default_str();
  app->add_option("--seed", c.seed, "Seed for partitions and refinement")->capture_default_str();
  refine_opt = app->add_flag("--refine,!--no-refine", refine_flag, "Enable or disable random-replacement refinement");
  app->add_option("--refine-T", c.refine.replicas, "Refinement replicas")->capture_default_str();
  app->add_option("--refine-p", c.refine.replace_prob, "Refinement replacement probability")->capture_default_str();
  app->add_option_function<std::string>(
         "--refine-pass", [&c](const std::string& s) { c.refine.pass = refine_pass_from_string(s); },
         "plain (default) or masked")
      ->default_str("plain");
  app->add_option("--tile", c.tile, "Tile size for large images (0: whole image)")->capture_default_str();
  app->add_option("--tile-overlap", c.tile_overlap, "Tile overlap in pixels")->capture_default_str();
}

inline void add_ablation_options(CLI::App* app, RunConfig& rc) {
  auto& a = rc.ablation;
  app->add_option("--output", rc.output, "Run directory (default: $AMSNET_RUN_ROOT/<run-name>)");
  app->add_option("--run-name", rc.run_name, "Run directory name under the run root");
  app->add_option("--steps", a.train.steps, "Training steps per cell")->capture_default_str();
  app->add_option("--lr", a.train.lr, "Learning rate")->capture_default_str();
  app->add_option("--batch-size", a.train.batch_size, "Patches per step")->capture_default_str();
  app->add_option("--patch-size", a.train.patch_size, "Training patch size")->capture_default_str();
  app->add_option("--pd-train", a.train.s_train, "Training stride")->capture_default_str();
  app->add_option("--mask-ratio", a.train.mask_ratio, "Mask ratio for the AMS cells")->capture_default_str();
  app->add_option("--seed", a.train.seed, "Training seed")->capture_default_str();
  app->add_option("--pd-infer", a.infer.s_inf, "Inference stride")->capture_default_str();
  app->add_option("--k", a.infer.k, "Branches for the AMS cells")->capture_default_str();
  app->add_option("--width", a.width, "Network width")->capture_default_str();
  app->add_option("--depth", a.depth, "Residual blocks")->capture_default_str();
  app->add_option("--train-images", a.train_images, "Synthetic training images")->capture_default_str();
  app->add_option("--test-images", a.test_images, "Synthetic test images")->capture_default_str();
  app->add_option("--image-size", a.image_size, "Synthetic image side length")->capture_default_str();
  app->add_option("--channels", a.channels, "Image channels")->capture_default_str();
  app->add_option_function<double>(
         "--sigma", [&a](double v) { a.sigma = v / 255.0; }, "Noise level on the 0..255 scale")
      ->default_str("25");
  app->add_option("--kernel", a.noise_kernel, "Noise correlation kernel size")->capture_default_str();
  app->add_option("--data-seed", a.data_seed, "Seed for the synthetic data")->capture_default_str();
  app->add_option_function<std::vector<std::string>>(
         "--archs",
         [&a](const std::vector<std::string>& v) {
           a.archs.clear();
           for (const auto& s : v) a.archs.push_back(arch_from_string(s));
         },
         "Architectures to compare")
      ->default_str("blindspot-A blindspot-AS");
  app->add_option_function<std::vector<std::string>>(
         "--objectives",
         [&a](const std::vector<std::string>& v) {
           a.objectives.clear();
           for (const auto& s : v) {
             if (s == "AMS" || s == "ams") a.objectives.push_back(AblationObjective::ams);
             else if (s == "BSN-loss" || s == "bsn") a.objectives.push_back(AblationObjective::bsn);
             else throw ConfigError("objectives", "expected AMS or BSN-loss, got '" + s + "'");
           }
         },
         "Training objectives to compare")
      ->default_str("AMS BSN-loss");
}

inline void add_synth_options(CLI::App* app, RunConfig& rc) {
  app->add_option("--output", rc.output, "Destination folder (noisy/ and clean/ are created)");
  app->add_option("--noise", rc.synth.noise, "gaussian or correlated")->capture_default_str();
  app->add_option("--sigma", rc.synth.sigma255, "Noise level on the 0..255 scale")->capture_default_str();
  app->add_option("--count", rc.synth.count, "Number of image pairs")->capture_default_str();
  app->add_option("--size", rc.synth.size, "Image side length")->capture_default_str();
  app->add_option("--channels", rc.synth.channels, "Image channels")->capture_default_str();
  app->add_option("--kernel", rc.synth.kernel, "Correlation kernel size")->capture_default_str();
  app->add_option("--seed", rc.synth.seed, "Seed")->capture_default_str();
}

/// Turns config-file entries into `--key=value` arguments for `command`.
/// Top-level keys and keys in a section named after the command are used;
/// other sections are ignored. A top-level key that no command accepts is an
/// error, so typos do not pass silently.
inline std::vector<std::string> config_arguments(const CLI::App& app, const std::string& command,
                                                 const fs::path& file) {
  if (!fs::exists(file)) throw ConfigError("config", "no such file: " + file.string());
  const CLI::App* sub = app.get_subcommand(command);
  std::vector<std::string> args;
  for (const auto& item : CLI::ConfigINI().from_file(file.string())) {
    if (item.name == "++" || item.name == "--") continue;
    if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == command)) continue;
    std::string key = item.name;
    for (auto& ch : key)
      if (ch == '_') ch = '-';
    if (key == "config") throw ConfigError("config", "config files cannot include other config files");
    const CLI::Option* opt = sub->get_option_no_throw("--" + key);
    if (opt == nullptr) {
      bool known_elsewhere = false;
      for (const auto* other : app.get_subcommands([](const CLI::App*) { return true; }))
        known_elsewhere = known_elsewhere || other->get_option_no_throw("--" + key) != nullptr;
      if (!known_elsewhere || !item.parents.empty())
        throw ConfigError(item.name, "unknown key in " + file.string());
      continue;
    }
    if (item.inputs.empty()) throw ConfigError(item.name, "has no value in " + file.string());
    if (opt->get_expected_max() > 1) {
      args.push_back("--" + key);
      for (const auto& v : item.inputs) args.push_back(v);
    } else {
      std::string value;
      for (const auto& v : item.inputs) value += (value.empty() ? "" : " ") + v;
      args.push_back("--" + key + "=" + value);
    }
  }
  return args;
}

}  // namespace detail

/// Parses arguments, applies an optional `--config` file (flags win over the
/// file, the file wins over defaults), validates and runs one command.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args(argv + std::min(argc, 1), argv + argc);
  std::size_t sub_pos = args.size();
  for (std::size_t i = 0; i < args.size(); ++i)
    if (!args[i].empty() && args[i][0] != '-') {
      sub_pos = i;
      break;
    }

  RunConfig rc;
  // The fine-tuning objective composes the inference pipeline, so its stride
  // defaults to the inference stride.
  if (sub_pos < args.size() && args[sub_pos] == "finetune") rc.train.s_train = rc.infer.s_inf;

  CLI::App app{"Masked self-supervised image denoising"};
  app.name(argc > 0 ? fs::path(argv[0]).filename().string() : "amsnet");
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  CLI::Option* refine_denoise = nullptr;
  CLI::Option* refine_eval = nullptr;
  bool refine_flag = false;
  auto* train = app.add_subcommand("train", "Base training with the masked objective");
  auto* finetune = app.add_subcommand("finetune", "Fine-tune a base checkpoint on the composed output");
  auto* denoise = app.add_subcommand("denoise", "Denoise a PNG file or folder");
  auto* eval = app.add_subcommand("eval", "Evaluate on a paired folder (noisy/ and clean/)");
  auto* ablate = app.add_subcommand("ablate-identity", "Identity-mapping ablation on synthetic correlated noise");
  auto* synth = app.add_subcommand("synth", "Write a synthetic paired dataset");
  for (auto* sub : {train, finetune, denoise, eval, ablate, synth})
    sub->add_option("--config", rc.config_file, "Key/value config file; flags override its entries");

  detail::add_train_options(train, rc);
  detail::add_net_options(train, rc);
  detail::add_train_options(finetune, rc);
  finetune->add_option("--base", rc.base_checkpoint, "Base checkpoint (trained as B)");
  detail::add_infer_options(denoise, rc, refine_flag, refine_denoise);
  denoise->add_option("--input", rc.input, "PNG file or folder of PNGs");
  denoise->add_option("--output", rc.output, "Output folder, or a .png path for a single input");
  detail::add_infer_options(eval, rc, refine_flag, refine_eval);
  eval->add_option("--data", rc.data, "Paired folder with noisy/ and clean/");
  eval->add_option("--output", rc.output, "Report directory (default: $AMSNET_RUN_ROOT/<run-name>)");
  eval->add_option("--run-name", rc.run_name, "Report directory name under the run root");
  detail::add_ablation_options(ablate, rc);
  detail::add_synth_options(synth, rc);

  try {
    if (sub_pos < args.size() && app.get_subcommand_no_throw(args[sub_pos]) != nullptr) {
      std::optional<std::string> config;
      for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
        if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
      }
      if (config) {
        const auto extra = detail::config_arguments(app, args[sub_pos], *config);
        args.insert(args.begin() + static_cast<std::ptrdiff_t>(sub_pos) + 1, extra.begin(), extra.end());
      }
    }
    std::vector<const char*> cargv{argc > 0 ? argv[0] : "amsnet"};
    for (const auto& a : args) cargv.push_back(a.c_str());
    app.parse(static_cast<int>(cargv.size()), cargv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n"
        << "run '" << app.get_name() << " <command> --help' for the available options\n";
    return kExitInvalid;
  } catch (const ConfigError& e) {
    err << "error: invalid " << e.what() << "\n";
    return kExitInvalid;
  }

  const auto chosen = app.get_subcommands();
  rc.command = chosen.front()->get_name();
  for (auto* opt : {refine_denoise, refine_eval})
    if (opt->count() > 0) rc.refine = refine_flag;

  try {
    rc.validate();
    if (rc.command == "train" || rc.command == "finetune") return cmd_train(rc, out);
    if (rc.command == "denoise") return cmd_denoise(rc, out, err);
    if (rc.command == "eval") return cmd_eval(rc, out);
    if (rc.command == "ablate-identity") return cmd_ablate_identity(rc, out);
    if (rc.command == "synth") return cmd_synth(rc, out);
    err << "error: unknown command " << rc.command << "\n";
    return kExitInvalid;
  } catch (const ConfigError& e) {
    err << "error: invalid " << e.what() << "\n";
    return kExitInvalid;
  } catch (const NonFiniteLossError& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: unexpected failure: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace ams::cli
