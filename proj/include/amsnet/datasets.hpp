#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "amsnet/error.hpp"
#include "amsnet/image.hpp"
#include "amsnet/png_io.hpp"
#include "amsnet/rng.hpp"

namespace ams {

namespace fs = std::filesystem;

/// Random-access collection of (noisy) images. Training samples from it.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual std::size_t size() const = 0;
  virtual ImageTensor image(std::size_t i) const = 0;
  virtual std::string name(std::size_t i) const = 0;
  virtual ImageShape shape(std::size_t i) const {
    const auto img = image(i);
    return {img.c, img.h, img.w};
  }
};

class InMemorySource : public ImageSource {
 public:
  InMemorySource() = default;
  explicit InMemorySource(std::vector<ImageTensor> images, std::vector<std::string> names = {})
      : images_(std::move(images)), names_(std::move(names)) {
    if (!names_.empty() && names_.size() != images_.size()) throw DatasetError("name count differs from image count");
  }
  std::size_t size() const override { return images_.size(); }
  ImageTensor image(std::size_t i) const override { return images_.at(i); }
  const ImageTensor& ref(std::size_t i) const { return images_.at(i); }
  std::string name(std::size_t i) const override {
    return names_.empty() ? "img" + std::to_string(i) : names_.at(i);
  }
  ImageShape shape(std::size_t i) const override {
    const auto& img = images_.at(i);
    return {img.c, img.h, img.w};
  }

 private:
  std::vector<ImageTensor> images_;
  std::vector<std::string> names_;
};

struct ManifestEntry {
  std::string name;  // file stem
  fs::path path;
  ImageShape shape;
  std::uintmax_t bytes = 0;
};

namespace detail {

inline bool is_png(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return ext == ".png";
}

inline std::vector<fs::path> list_pngs(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DatasetError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_png(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end(), [](const fs::path& a, const fs::path& b) {
    return a.filename().string() < b.filename().string();
  });
  return out;
}

/// Builds the manifest for a folder, reusing the cached `manifest.json` when
/// the file list and sizes still match. Cache writes are best effort.
inline std::vector<ManifestEntry> build_manifest(const fs::path& dir) {
  const auto files = list_pngs(dir);
  const fs::path cache = dir / "manifest.json";
  std::map<std::string, nlohmann::json> cached;
  if (fs::exists(cache)) {
    try {
      std::ifstream f(cache);
      for (const auto& e : nlohmann::json::parse(f).at("items")) cached[e.at("file").get<std::string>()] = e;
    } catch (const std::exception&) {
      cached.clear();
    }
  }
  std::vector<ManifestEntry> entries;
  bool dirty = cached.size() != files.size();
  for (const auto& p : files) {
    ManifestEntry m{p.stem().string(), p, {}, fs::file_size(p)};
    const auto it = cached.find(p.filename().string());
    if (it != cached.end() && it->second.value("bytes", std::uintmax_t{0}) == m.bytes) {
      m.shape = {it->second.at("c").get<int>(), it->second.at("h").get<int>(), it->second.at("w").get<int>()};
    } else {
      m.shape = read_png_shape(p);
      dirty = true;
    }
    entries.push_back(std::move(m));
  }
  if (dirty && !entries.empty()) {
    nlohmann::json items = nlohmann::json::array();
    for (const auto& m : entries)
      items.push_back({{"file", m.path.filename().string()}, {"name", m.name}, {"bytes", m.bytes},
                       {"c", m.shape.c}, {"h", m.shape.h}, {"w", m.shape.w}});
    std::ofstream f(cache);
    if (f) f << nlohmann::json{{"items", items}}.dump(1) << '\n';
  }
  return entries;
}

/// Thread-safe decode-once cache shared by dataset copies.
class DecodeCache {
 public:
  explicit DecodeCache(std::size_t n) : slots_(n) {}
  ImageTensor get(std::size_t i, const fs::path& p) {
    std::lock_guard lock(mu_);
    auto& slot = slots_.at(i);
    if (!slot) slot = read_png(p);
    return *slot;
  }

 private:
  std::mutex mu_;
  std::vector<std::optional<ImageTensor>> slots_;
};

}  // namespace detail

/// Folder of noisy PNGs, sorted by file name, decoded lazily on first access.
class NoisyDataset : public ImageSource {
 public:
  NoisyDataset() : cache_(std::make_shared<detail::DecodeCache>(0)) {}
  explicit NoisyDataset(std::vector<ManifestEntry> entries)
      : entries_(std::move(entries)), cache_(std::make_shared<detail::DecodeCache>(entries_.size())) {}

  std::size_t size() const override { return entries_.size(); }
  ImageTensor image(std::size_t i) const override { return cache_->get(i, entries_.at(i).path); }
  std::string name(std::size_t i) const override { return entries_.at(i).name; }
  ImageShape shape(std::size_t i) const override { return entries_.at(i).shape; }
  const std::vector<ManifestEntry>& manifest() const noexcept { return entries_; }

 private:
  std::vector<ManifestEntry> entries_;
  std::shared_ptr<detail::DecodeCache> cache_;
};

struct ImagePair {
  std::string name;
  ImageTensor noisy, clean;
};

/// `noisy/` and `clean/` folders whose files pair up by stem.
class PairedDataset {
 public:
  PairedDataset() = default;
  PairedDataset(NoisyDataset noisy, NoisyDataset clean) : noisy_(std::move(noisy)), clean_(std::move(clean)) {}

  std::size_t size() const noexcept { return noisy_.size(); }
  std::string name(std::size_t i) const { return noisy_.name(i); }
  ImagePair pair(std::size_t i) const { return {noisy_.name(i), noisy_.image(i), clean_.image(i)}; }
  const NoisyDataset& noisy() const noexcept { return noisy_; }
  const NoisyDataset& clean() const noexcept { return clean_; }

 private:
  NoisyDataset noisy_, clean_;
};

/// In-memory paired set, used for synthetic evaluation.
struct InMemoryPairs {
  std::vector<ImagePair> items;
  std::size_t size() const noexcept { return items.size(); }
  std::string name(std::size_t i) const { return items.at(i).name; }
  ImagePair pair(std::size_t i) const { return items.at(i); }
};

inline NoisyDataset load_noisy_folder(const fs::path& dir) { return NoisyDataset(detail::build_manifest(dir)); }

inline PairedDataset load_paired_folder(const fs::path& dir) {
  auto noisy = detail::build_manifest(dir / "noisy");
  auto clean = detail::build_manifest(dir / "clean");
  std::set<std::string> ns, cs;
  for (const auto& e : noisy) ns.insert(e.name);
  for (const auto& e : clean) cs.insert(e.name);
  std::string orphans;
  for (const auto& n : ns)
    if (!cs.count(n)) orphans += " noisy/" + n;
  for (const auto& c : cs)
    if (!ns.count(c)) orphans += " clean/" + c;
  if (!orphans.empty()) throw DatasetError("unpaired files (missing counterpart):" + orphans);
  std::sort(noisy.begin(), noisy.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  std::sort(clean.begin(), clean.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    const auto &a = noisy[i].shape, &b = clean[i].shape;
    if (a.c != b.c || a.h != b.h || a.w != b.w)
      throw DatasetError("pair '" + noisy[i].name + "' has mismatched shapes " + shape_string(a.c, a.h, a.w) +
                         " vs " + shape_string(b.c, b.h, b.w));
  }
  return PairedDataset(NoisyDataset(std::move(noisy)), NoisyDataset(std::move(clean)));
}

inline std::variant<NoisyDataset, PairedDataset> load_folder(const fs::path& dir, bool paired) {
  if (paired) return load_paired_folder(dir);
  return load_noisy_folder(dir);
}

/// Location and augmentation of one training patch.
struct PatchCrop {
  std::size_t index = 0;
  int y = 0, x = 0;
  bool flip = false;
  int rot90 = 0;
};

/// Draws `batch` crop descriptors. Image index, offsets and augmentation come
/// from per-item derived seeds, so batch b is independent of the batch size.
inline std::vector<PatchCrop> sample_patch_crops(const ImageSource& ds, int patch, int batch, std::uint64_t seed,
                                                 bool augment = false) {
  if (ds.size() == 0) throw DatasetError("cannot sample patches from an empty dataset");
  if (patch < 1) throw ConfigError("patch_size", "must be positive");
  if (batch < 1) throw ConfigError("batch_size", "must be positive");
  std::vector<PatchCrop> out;
  out.reserve(batch);
  for (int b = 0; b < batch; ++b) {
    auto rng = make_rng(derive_seed(seed, {static_cast<std::uint64_t>(b)}));
    PatchCrop c;
    c.index = uniform_int<std::size_t>(rng, 0, ds.size() - 1);
    const auto sh = ds.shape(c.index);
    if (patch > sh.h || patch > sh.w)
      throw ConfigError("patch_size", "patch " + std::to_string(patch) + " exceeds image '" + ds.name(c.index) +
                                          "' of size " + std::to_string(sh.h) + "x" + std::to_string(sh.w));
    c.y = uniform_int<int>(rng, 0, sh.h - patch);
    c.x = uniform_int<int>(rng, 0, sh.w - patch);
    if (augment) {
      c.flip = uniform_int<int>(rng, 0, 1) == 1;
      c.rot90 = uniform_int<int>(rng, 0, 3);
    }
    out.push_back(c);
  }
  return out;
}

inline ImageTensor extract_patch(const ImageTensor& img, const PatchCrop& c, int patch) {
  ImageTensor out(img.c, patch, patch);
  out.color_space = img.color_space;
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y < patch; ++y)
      for (int x = 0; x < patch; ++x) {
        int sy = y, sx = c.flip ? patch - 1 - x : x;
        for (int r = 0; r < c.rot90; ++r) std::tie(sy, sx) = std::pair{sx, patch - 1 - sy};
        out.at(ch, y, x) = img.at(ch, c.y + sy, c.x + sx);
      }
  return out;
}

inline std::vector<ImageTensor> sample_patches(const ImageSource& ds, int patch, int batch, std::uint64_t seed,
                                               bool augment = false) {
  std::vector<ImageTensor> out;
  for (const auto& c : sample_patch_crops(ds, patch, batch, seed, augment))
    out.push_back(extract_patch(ds.image(c.index), c, patch));
  return out;
}

/// clean + iid N(0, sigma^2). Not clamped.
inline ImageTensor synth_gaussian(const ImageTensor& clean, double sigma, std::uint64_t seed) {
  if (!(sigma >= 0.0)) throw ConfigError("sigma", "must be non-negative");
  ImageTensor out = clean;
  if (sigma == 0.0) return out;
  auto rng = make_rng(derive_seed(seed, {0x6761757373ULL}));
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& v : out.data) v = static_cast<float>(v + n(rng));
  return out;
}

/// clean + box-filtered iid Gaussian noise, rescaled so each pixel's noise has
/// variance sigma^2. Neighbours closer than `kernel` pixels are correlated.
inline ImageTensor synth_correlated(const ImageTensor& clean, double sigma, int kernel, std::uint64_t seed) {
  if (kernel < 3 || kernel % 2 == 0) throw ConfigError("kernel_size", "must be odd and >= 3");
  if (!(sigma >= 0.0)) throw ConfigError("sigma", "must be non-negative");
  ImageTensor out = clean;
  if (sigma == 0.0) return out;
  auto rng = make_rng(derive_seed(seed, {0x636f7272ULL}));
  std::normal_distribution<double> n(0.0, 1.0);
  const int ph = clean.h + kernel - 1, pw = clean.w + kernel - 1;
  std::vector<double> field(static_cast<std::size_t>(ph) * pw);
  const double scale = sigma / kernel;
  for (int ch = 0; ch < clean.c; ++ch) {
    for (auto& v : field) v = n(rng);
    for (int y = 0; y < clean.h; ++y)
      for (int x = 0; x < clean.w; ++x) {
        double s = 0.0;
        for (int dy = 0; dy < kernel; ++dy)
          for (int dx = 0; dx < kernel; ++dx) s += field[static_cast<std::size_t>(y + dy) * pw + x + dx];
        out.at(ch, y, x) = static_cast<float>(out.at(ch, y, x) + scale * s);
      }
  }
  return out;
}

/// Pooled lag-1 autocorrelation over horizontal and vertical neighbour pairs
/// of a (noise) image, after removing its mean.
template <typename T>
double lag1_autocorrelation(const BasicImage<T>& img) {
  double mean = 0.0;
  for (auto v : img.data) mean += v;
  mean /= static_cast<double>(img.size());
  double var = 0.0, cov = 0.0;
  std::size_t pairs = 0;
  for (auto v : img.data) var += (v - mean) * (v - mean);
  var /= static_cast<double>(img.size());
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y < img.h; ++y)
      for (int x = 0; x < img.w; ++x) {
        const double a = img.at(ch, y, x) - mean;
        if (x + 1 < img.w) cov += a * (img.at(ch, y, x + 1) - mean), ++pairs;
        if (y + 1 < img.h) cov += a * (img.at(ch, y + 1, x) - mean), ++pairs;
      }
  if (pairs == 0 || var == 0.0) return 0.0;
  return cov / static_cast<double>(pairs) / var;
}

/// Procedural piecewise-smooth scene: a tilted gradient background with
/// random filled discs and rectangles. Values stay inside [0.05, 0.95].
inline ImageTensor synth_clean_scene(int c, int h, int w, std::uint64_t seed) {
  if (c != 1 && c != 3) throw ConfigError("channels", "must be 1 or 3");
  auto rng = make_rng(derive_seed(seed, {0x7363656e65ULL}));
  ImageTensor img(c, h, w);
  std::vector<double> base(c), gy(c), gx(c);
  for (int ch = 0; ch < c; ++ch) {
    base[ch] = 0.25 + 0.5 * uniform01(rng);
    gy[ch] = 0.3 * (uniform01(rng) - 0.5);
    gx[ch] = 0.3 * (uniform01(rng) - 0.5);
  }
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        img.at(ch, y, x) = static_cast<float>(base[ch] + gy[ch] * (y / double(h) - .5) + gx[ch] * (x / double(w) - .5));
  const int shapes = uniform_int<int>(rng, 6, 12);
  for (int s = 0; s < shapes; ++s) {
    const bool disc = uniform01(rng) < 0.5;
    const double cy = uniform01(rng) * h, cx = uniform01(rng) * w;
    const double ry = (0.06 + 0.2 * uniform01(rng)) * h, rx = disc ? ry : (0.06 + 0.2 * uniform01(rng)) * w;
    std::vector<double> col(c);
    for (auto& v : col) v = 0.1 + 0.8 * uniform01(rng);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
        const bool inside = disc ? dy * dy + dx * dx <= 1.0 : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (inside)
          for (int ch = 0; ch < c; ++ch) img.at(ch, y, x) = static_cast<float>(col[ch]);
      }
  }
  for (auto& v : img.data) v = std::clamp(v, 0.05f, 0.95f);
  return img;
}

enum class NoiseKind { gaussian, correlated };

/// Toy paired set of synthetic scenes. Clean images are seeded by index so
/// train and validation sets drawn with different seeds do not overlap.
inline InMemoryPairs make_toy_pairs(int count, int c, int h, int w, double sigma, std::uint64_t seed,
                                    NoiseKind kind = NoiseKind::gaussian, int kernel = 3) {
  InMemoryPairs out;
  for (int i = 0; i < count; ++i) {
    const auto s = derive_seed(seed, {static_cast<std::uint64_t>(i)});
    ImagePair p;
    p.name = "toy" + std::to_string(i);
    p.clean = synth_clean_scene(c, h, w, s);
    p.noisy = kind == NoiseKind::gaussian ? synth_gaussian(p.clean, sigma, s) : synth_correlated(p.clean, sigma, kernel, s);
    out.items.push_back(std::move(p));
  }
  return out;
}

inline InMemorySource noisy_source(const InMemoryPairs& pairs) {
  std::vector<ImageTensor> imgs;
  std::vector<std::string> names;
  for (const auto& p : pairs.items) imgs.push_back(p.noisy), names.push_back(p.name);
  return InMemorySource(std::move(imgs), std::move(names));
}

/// Writes a paired set as `noisy/` and `clean/` PNG folders (clamped on export).
inline void write_paired_folder(const fs::path& dir, const InMemoryPairs& pairs) {
  for (const auto& p : pairs.items) {
    write_png(dir / "noisy" / (p.name + ".png"), p.noisy);
    write_png(dir / "clean" / (p.name + ".png"), p.clean);
  }
}

}  // namespace ams
