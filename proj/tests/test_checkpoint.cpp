#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "amsnet/checkpoint.hpp"
#include "test_util.hpp"

using namespace ams;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "amsnet_checkpoint_tests";
  fs::create_directories(dir);
  return dir / name;
}

DenoiserHandle net(Arch arch = Arch::blindspot_a) {
  auto spec = default_spec(arch, 3);
  spec.width = 8;
  spec.depth = 2;
  spec.seed = 12;
  return DenoiserHandle(spec);
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void dump(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST(Checkpoint, RoundTripRestoresIdenticalNetwork) {
  for (Arch a : {Arch::unet_small, Arch::dncnn, Arch::blindspot_a, Arch::blindspot_as}) {
    auto d = net(a);
    d.step_count = 42;
    const auto p = temp_file("roundtrip.ckpt");
    save_checkpoint(p, make_checkpoint(d, {{"variant", "B"}, {"note", "x"}}));
    const auto ck = load_checkpoint(p);
    EXPECT_EQ(ck.spec, d.spec());
    EXPECT_EQ(ck.step, 42);
    EXPECT_EQ(ck.variant_tag(), "B");
    EXPECT_EQ(ck.meta.at("note"), "x");
    const auto back = restore_denoiser(ck);
    EXPECT_EQ(back.parameter_hash(), d.parameter_hash());
    const std::vector<ImageTensor> batch{test::random_image(3, 8, 8, 1)};
    EXPECT_EQ(back.denoise_batch(batch), d.denoise_batch(batch));
  }
}

TEST(Checkpoint, TruncatedFileIsCorrupt) {
  const auto p = temp_file("trunc.ckpt");
  save_checkpoint(p, make_checkpoint(net(), {{"variant", "B"}}));
  auto bytes = slurp(p);
  for (std::size_t keep : {bytes.size() - 1, bytes.size() / 2, std::size_t{10}, std::size_t{0}}) {
    dump(p, std::vector<char>(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep)));
    EXPECT_THROW(load_checkpoint(p), CheckpointError) << "kept " << keep << " bytes";
  }
}

TEST(Checkpoint, FlippedByteIsDetected) {
  const auto p = temp_file("flip.ckpt");
  save_checkpoint(p, make_checkpoint(net(), {{"variant", "B"}}));
  auto bytes = slurp(p);
  bytes[bytes.size() / 2] ^= 0x01;
  dump(p, bytes);
  try {
    load_checkpoint(p);
    FAIL() << "corruption not detected";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("corrupt"), std::string::npos);
  }
}

TEST(Checkpoint, VersionMismatchIsExplicit) {
  const auto p = temp_file("version.ckpt");
  RecordWriter w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.pod<std::uint32_t>(kCheckpointVersion + 1);
  write_checkpoint_body(w, make_checkpoint(net(), {}));
  w.commit(p);
  try {
    load_checkpoint(p);
    FAIL() << "future version accepted";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST(Checkpoint, WrongMagicAndMissingFile) {
  const auto p = temp_file("magic.ckpt");
  std::ofstream(p) << "definitely not a checkpoint file at all";
  EXPECT_THROW(load_checkpoint(p), CheckpointError);
  EXPECT_THROW(load_checkpoint(temp_file("does_not_exist.ckpt")), CheckpointError);
}

TEST(Checkpoint, ParameterCountMismatchRejected) {
  auto ck = make_checkpoint(net(), {});
  ck.params.pop_back();
  EXPECT_THROW(restore_denoiser(ck), CheckpointError);
}
