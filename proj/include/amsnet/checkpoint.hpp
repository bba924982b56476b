#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "amsnet/denoisers.hpp"
#include "amsnet/error.hpp"

namespace ams {

inline constexpr char kCheckpointMagic[8] = {'A', 'M', 'S', 'N', 'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary little-endian record writer that keeps a running FNV-1a checksum.
class RecordWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <typename T>
  void pod(const T& v) {
    bytes(&v, sizeof(T));
  }
  void string(const std::string& s) {
    pod<std::uint64_t>(s.size());
    bytes(s.data(), s.size());
  }
  void floats(std::span<const float> v) {
    pod<std::uint64_t>(v.size());
    bytes(v.data(), v.size() * sizeof(float));
  }

  /// Appends the checksum and writes atomically (temp file + rename).
  void commit(const std::filesystem::path& path) {
    const std::uint64_t sum = fnv1a(buf_.data(), buf_.size());
    pod(sum);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
      std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
      if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
      f.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
      if (!f) throw IoError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  std::vector<char> buf_;
};

class RecordReader {
 public:
  RecordReader(const std::filesystem::path& path, const char (&magic)[8]) : path_(path.string()) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open " + path_);
    buf_.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    if (buf_.size() < sizeof(magic) + sizeof(std::uint32_t) + sizeof(std::uint64_t))
      throw CheckpointError(path_ + ": file is truncated or corrupt");
    if (std::memcmp(buf_.data(), magic, sizeof(magic)) != 0)
      throw CheckpointError(path_ + ": not a recognised file (bad magic)");
    std::uint64_t stored;
    std::memcpy(&stored, buf_.data() + buf_.size() - sizeof(stored), sizeof(stored));
    end_ = buf_.size() - sizeof(stored);
    if (fnv1a(buf_.data(), end_) != stored) throw CheckpointError(path_ + ": checksum mismatch, file is corrupt");
    pos_ = sizeof(magic);
  }

  void bytes(void* p, std::size_t n) {
    if (n > end_ - pos_) throw CheckpointError(path_ + ": file is truncated or corrupt");
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::string string() {
    const auto n = pod<std::uint64_t>();
    if (n > end_ - pos_) throw CheckpointError(path_ + ": file is truncated or corrupt");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::vector<float> floats() {
    const auto n = pod<std::uint64_t>();
    if (n > (end_ - pos_) / sizeof(float)) throw CheckpointError(path_ + ": file is truncated or corrupt");
    std::vector<float> v(n);
    bytes(v.data(), n * sizeof(float));
    return v;
  }
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
  std::vector<char> buf_;
  std::size_t pos_ = 0, end_ = 0;
};

/// Weights plus everything needed to rebuild and interpret them. `meta`
/// carries the variant tag ("B" or "P") and the training configuration.
struct Checkpoint {
  DenoiserSpec spec;
  nlohmann::json meta = nlohmann::json::object();
  std::int64_t step = 0;
  std::vector<float> params;

  std::string variant_tag() const { return meta.value("variant", std::string{}); }
};

inline Checkpoint make_checkpoint(const DenoiserHandle& d, nlohmann::json meta) {
  return Checkpoint{d.spec(), std::move(meta), d.step_count, d.flat_parameters()};
}

inline void write_checkpoint_body(RecordWriter& w, const Checkpoint& ck) {
  nlohmann::json header = {{"spec", ck.spec}, {"meta", ck.meta}, {"step", ck.step},
                           {"param_count", ck.params.size()}};
  w.string(header.dump());
  w.floats(ck.params);
}

inline Checkpoint read_checkpoint_body(RecordReader& r) {
  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.string());
    ck.spec = header.at("spec").get<DenoiserSpec>();
    ck.meta = header.value("meta", nlohmann::json::object());
    ck.step = header.at("step").get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(r.path() + ": malformed header (" + e.what() + ")");
  } catch (const ConfigError& e) {
    throw CheckpointError(r.path() + ": invalid denoiser spec (" + e.what() + ")");
  }
  ck.params = r.floats();
  if (ck.params.size() != header.value("param_count", std::size_t{0}))
    throw CheckpointError(r.path() + ": parameter count does not match header");
  return ck;
}

inline void check_version(RecordReader& r, std::uint32_t expected) {
  const auto v = r.pod<std::uint32_t>();
  if (v != expected)
    throw CheckpointError(r.path() + ": format version " + std::to_string(v) + " is not supported (expected " +
                          std::to_string(expected) + ")");
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  RecordWriter w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.pod(kCheckpointVersion);
  write_checkpoint_body(w, ck);
  w.commit(path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  RecordReader r(path, kCheckpointMagic);
  check_version(r, kCheckpointVersion);
  return read_checkpoint_body(r);
}

/// Rebuilds the denoiser described by a checkpoint and loads its weights.
inline DenoiserHandle restore_denoiser(const Checkpoint& ck) {
  DenoiserHandle d(ck.spec);
  if (ck.params.size() != d.parameter_count())
    throw CheckpointError("checkpoint has " + std::to_string(ck.params.size()) + " parameters but " +
                          to_string(ck.spec.arch) + " needs " + std::to_string(d.parameter_count()));
  d.set_flat_parameters(ck.params);
  d.step_count = ck.step;
  return d;
}

inline DenoiserHandle load_denoiser(const std::filesystem::path& path) { return restore_denoiser(load_checkpoint(path)); }

}  // namespace ams
