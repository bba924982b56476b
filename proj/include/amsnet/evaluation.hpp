#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amsnet/datasets.hpp"
#include "amsnet/error.hpp"
#include "amsnet/image.hpp"
#include "amsnet/inference.hpp"

namespace ams {

/// Reports store PSNR of identical images as this finite value.
inline constexpr double kPsnrCapDb = 99.0;

template <typename T>
double psnr(const BasicImage<T>& a, const BasicImage<T>& b) {
  require_same_shape(a, b, "psnr");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return -10.0 * std::log10(se / static_cast<double>(a.size()));
}

inline double capped_psnr(double db) { return std::min(db, kPsnrCapDb); }

struct SsimOptions {
  double sigma = 1.5;
  int radius = 5;  // 11x11 window
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_taps(double sigma, int radius) {
  std::vector<double> t(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) sum += t[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : t) v /= sum;
  return t;
}

/// Separable filtering restricted to the fully-supported ("valid") region.
inline std::vector<double> filter_valid(const std::vector<double>& img, int h, int w, const std::vector<double>& taps) {
  const int r = static_cast<int>(taps.size() / 2);
  const int oh = h - 2 * r, ow = w - 2 * r;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow), out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < taps.size(); ++k) s += taps[k] * img[static_cast<std::size_t>(y) * w + x + k];
      rows[static_cast<std::size_t>(y) * ow + x] = s;
    }
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < taps.size(); ++k) s += taps[k] * rows[(y + k) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = s;
    }
  return out;
}

}  // namespace detail

/// Gaussian-window SSIM averaged over the valid region and then over channels.
template <typename T>
double ssim(const BasicImage<T>& a, const BasicImage<T>& b, const SsimOptions& o = {}) {
  require_same_shape(a, b, "ssim");
  const int win = 2 * o.radius + 1;
  if (a.h < win || a.w < win)
    throw ShapeError("ssim needs images of at least " + std::to_string(win) + "x" + std::to_string(win) + ", got " +
                     shape_string(a));
  const auto taps = detail::gaussian_taps(o.sigma, o.radius);
  const double c1 = (o.k1 * o.data_range) * (o.k1 * o.data_range);
  const double c2 = (o.k2 * o.data_range) * (o.k2 * o.data_range);
  const std::size_t n = a.plane_size();
  double total = 0.0;
  for (int ch = 0; ch < a.c; ++ch) {
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t p = 0; p < n; ++p) {
      x[p] = a.data[ch * n + p];
      y[p] = b.data[ch * n + p];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto ux = detail::filter_valid(x, a.h, a.w, taps), uy = detail::filter_valid(y, a.h, a.w, taps);
    const auto uxx = detail::filter_valid(xx, a.h, a.w, taps), uyy = detail::filter_valid(yy, a.h, a.w, taps);
    const auto uxy = detail::filter_valid(xy, a.h, a.w, taps);
    double sum = 0.0;
    for (std::size_t i = 0; i < ux.size(); ++i) {
      const double vx = uxx[i] - ux[i] * ux[i], vy = uyy[i] - uy[i] * uy[i], vxy = uxy[i] - ux[i] * uy[i];
      sum += ((2 * ux[i] * uy[i] + c1) * (2 * vxy + c2)) / ((ux[i] * ux[i] + uy[i] * uy[i] + c1) * (vx + vy + c2));
    }
    total += sum / static_cast<double>(ux.size());
  }
  return total / a.c;
}

/// Mean absolute 2x2 second difference, a detector for Nyquist-frequency
/// (checkerboard) patterns. Zero on affine images; 2 on a unit checkerboard.
template <typename T>
double checkerboard_score(const BasicImage<T>& img) {
  if (img.h < 2 || img.w < 2) throw ShapeError("checkerboard score needs at least 2x2 pixels, got " + shape_string(img));
  double sum = 0.0;
  for (int ch = 0; ch < img.c; ++ch)
    for (int y = 0; y + 1 < img.h; ++y)
      for (int x = 0; x + 1 < img.w; ++x)
        sum += std::abs(static_cast<double>(img.at(ch, y, x)) - img.at(ch, y, x + 1) - img.at(ch, y + 1, x) +
                        img.at(ch, y + 1, x + 1));
  return sum / (static_cast<double>(img.c) * (img.h - 1) * (img.w - 1));
}

struct EvalRow {
  std::string name;
  double psnr_db = 0.0;  // capped at kPsnrCapDb
  double ssim = 0.0;
  double checkerboard = 0.0;
  double input_psnr_db = 0.0;  // noisy vs clean, for reference
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_psnr_db = 0.0;
  double mean_ssim = 0.0;
  double mean_checkerboard = 0.0;
  double mean_input_psnr_db = 0.0;
  std::vector<std::string> skipped;
  nlohmann::json config = nlohmann::json::object();

  void recompute_means() {
    mean_psnr_db = mean_ssim = mean_checkerboard = mean_input_psnr_db = 0.0;
    if (rows.empty()) return;
    for (const auto& r : rows) {
      mean_psnr_db += r.psnr_db;
      mean_ssim += r.ssim;
      mean_checkerboard += r.checkerboard;
      mean_input_psnr_db += r.input_psnr_db;
    }
    const double n = static_cast<double>(rows.size());
    mean_psnr_db /= n;
    mean_ssim /= n;
    mean_checkerboard /= n;
    mean_input_psnr_db /= n;
  }
};

inline void to_json(nlohmann::json& j, const EvalRow& r) {
  j = {{"name", r.name}, {"psnr_db", r.psnr_db}, {"ssim", r.ssim}, {"checkerboard", r.checkerboard},
       {"input_psnr_db", r.input_psnr_db}};
}

inline void from_json(const nlohmann::json& j, EvalRow& r) {
  j.at("name").get_to(r.name);
  j.at("psnr_db").get_to(r.psnr_db);
  j.at("ssim").get_to(r.ssim);
  j.at("checkerboard").get_to(r.checkerboard);
  r.input_psnr_db = j.value("input_psnr_db", 0.0);
}

inline void to_json(nlohmann::json& j, const EvalReport& r) {
  j = {{"images", r.rows},
       {"aggregate",
        {{"count", r.rows.size()},
         {"psnr_db", r.mean_psnr_db},
         {"ssim", r.mean_ssim},
         {"checkerboard", r.mean_checkerboard},
         {"input_psnr_db", r.mean_input_psnr_db}}},
       {"skipped", {{"count", r.skipped.size()}, {"names", r.skipped}}},
       {"config", r.config}};
}

inline void from_json(const nlohmann::json& j, EvalReport& r) {
  j.at("images").get_to(r.rows);
  const auto& a = j.at("aggregate");
  a.at("psnr_db").get_to(r.mean_psnr_db);
  a.at("ssim").get_to(r.mean_ssim);
  a.at("checkerboard").get_to(r.mean_checkerboard);
  r.mean_input_psnr_db = a.value("input_psnr_db", 0.0);
  if (j.contains("skipped")) j.at("skipped").at("names").get_to(r.skipped);
  r.config = j.value("config", nlohmann::json::object());
}

inline std::string format_table(const EvalReport& r) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %10s %8s %12s %10s\n", "image", "psnr_db", "ssim", "checkerboard", "input_db");
  os << line;
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof line, "%-24s %10.3f %8.4f %12.5f %10.3f\n", row.name.c_str(), row.psnr_db, row.ssim,
                  row.checkerboard, row.input_psnr_db);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-24s %10.3f %8.4f %12.5f %10.3f\n", "mean", r.mean_psnr_db, r.mean_ssim,
                r.mean_checkerboard, r.mean_input_psnr_db);
  os << line;
  if (!r.skipped.empty()) os << "skipped " << r.skipped.size() << " unreadable pair(s)\n";
  return os.str();
}

/// Paired collections: size(), name(i) and pair(i) -> ImagePair.
template <typename P>
concept PairCollection = requires(const P& p, std::size_t i) {
  { p.size() } -> std::convertible_to<std::size_t>;
  { p.name(i) } -> std::convertible_to<std::string>;
  p.pair(i);
};

/// Scores `process(noisy, index)` against the clean image of every pair.
/// Pairs that fail to load are skipped and listed in the report.
template <PairCollection P, typename F>
EvalReport evaluate_outputs(const P& pairs, F&& process) {
  EvalReport report;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    std::optional<ImagePair> item;
    try {
      item.emplace(pairs.pair(i));
    } catch (const IoError&) {
      report.skipped.push_back(pairs.name(i));
      continue;
    }
    const ImageTensor out = process(item->noisy, i);
    EvalRow row;
    row.name = item->name;
    row.psnr_db = capped_psnr(psnr(out, item->clean));
    row.ssim = ssim(out, item->clean);
    row.checkerboard = checkerboard_score(out);
    row.input_psnr_db = capped_psnr(psnr(item->noisy, item->clean));
    report.rows.push_back(std::move(row));
  }
  report.recompute_means();
  return report;
}

inline void to_json(nlohmann::json& j, const InferConfig& c) {
  j = {{"s_inf", c.s_inf},
       {"k", c.k},
       {"seed", c.seed},
       {"refine", {{"enabled", c.refine.enabled}, {"T", c.refine.replicas}, {"p", c.refine.replace_prob},
                   {"pass", to_string(c.refine.pass)}}},
       {"tile", c.tile},
       {"tile_overlap", c.tile_overlap}};
}

template <BatchDenoiser D, PairCollection P>
EvalReport evaluate(const D& d, const P& pairs, Variant variant, const InferConfig& cfg,
                    const std::string& checkpoint_tag) {
  auto report = evaluate_outputs(pairs, [&](const ImageTensor& noisy, std::size_t i) {
    return denoise_variant(d, noisy, variant, cfg, checkpoint_tag, i);
  });
  report.config = cfg;
  report.config["variant"] = to_string(variant);
  report.config["refine"]["enabled"] = cfg.refine.enabled || uses_refinement(variant);
  return report;
}

}  // namespace ams
