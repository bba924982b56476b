#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "amsnet/denoisers.hpp"
#include "amsnet/inference.hpp"
#include "test_util.hpp"

using namespace ams;

namespace {

struct IdentityStub {
  int multiple = 1;
  int spatial_multiple() const { return multiple; }
  std::vector<ImageTensor> denoise_batch(const std::vector<ImageTensor>& b) const {
    for (const auto& img : b)
      if (img.h % multiple || img.w % multiple) throw ShapeError("stub: bad spatial size");
    return b;
  }
};

struct ConstantStub {
  float value = 0.25f;
  int spatial_multiple() const { return 1; }
  std::vector<ImageTensor> denoise_batch(const std::vector<ImageTensor>& b) const {
    std::vector<ImageTensor> out;
    for (const auto& img : b) out.emplace_back(img.c, img.h, img.w, value);
    return out;
  }
};

/// Affine map that records every input it sees.
struct RecordingStub {
  mutable std::vector<ImageTensor> seen;
  int spatial_multiple() const { return 1; }
  std::vector<ImageTensor> denoise_batch(const std::vector<ImageTensor>& b) const {
    std::vector<ImageTensor> out;
    for (const auto& img : b) {
      seen.push_back(img);
      ImageTensor o = img;
      for (auto& v : o.data) v = 0.5f * v + 0.1f;
      out.push_back(std::move(o));
    }
    return out;
  }
};

DenoiserHandle small_unet(int c = 3) {
  auto spec = default_spec(Arch::unet_small, c);
  spec.width = 8;
  spec.seed = 3;
  return DenoiserHandle(spec);
}

SubSampleSet random_subs(int s, int c, int h, int w, std::uint64_t seed) {
  return pd_split(test::random_image(c, h * s, w * s, seed), s);
}

double abs_sum(const ImageTensor& img) {
  double s = 0.0;
  for (float v : img.data) s += std::abs(v);
  return s;
}

}  // namespace

static_assert(BatchDenoiser<DenoiserHandle>);
static_assert(BatchDenoiser<IdentityStub>);

TEST(BranchDenoise, IdentityStubGivesZero) {
  const auto subs = random_subs(2, 3, 6, 5, 1);
  const auto masks = sample_mask_set(6, 5, 4, 0.5, 2);
  for (const auto& o : branch_denoise(IdentityStub{}, subs, masks).subs) EXPECT_EQ(abs_sum(o), 0.0);
}

TEST(BranchDenoise, ConstantStubFillsRestoredSupport) {
  const auto subs = random_subs(2, 3, 6, 5, 1);
  const auto masks = sample_mask_set(6, 5, 4, 0.5, 2);
  const auto out = branch_denoise(ConstantStub{0.25f}, subs, masks);
  for (int j = 0; j < 4; ++j)
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 5; ++x) EXPECT_EQ(out[j].at(ch, y, x), masks[j](y, x) ? 0.f : 0.25f);
}

TEST(BranchDenoise, RealDenoiserZeroOnKeptPositions) {
  const auto d = small_unet();
  const auto subs = random_subs(2, 3, 8, 8, 5);
  const auto masks = sample_mask_set(8, 8, 4, 0.5, 6);
  const auto out = branch_denoise(d, subs, masks);
  for (int j = 0; j < 4; ++j) EXPECT_EQ(abs_sum(apply_mask(out[j], masks[j])), 0.0);
}

TEST(BranchDenoise, RejectsMisalignedMasks) {
  const auto subs = random_subs(2, 1, 6, 5, 1);
  EXPECT_THROW(branch_denoise(IdentityStub{}, subs, sample_mask_set(6, 6, 4, 0.5, 2)), ShapeError);
  EXPECT_THROW(branch_denoise(IdentityStub{}, subs, sample_mask_set(6, 5, 9, 0.5, 2)), ShapeError);
}

TEST(Mmdb, ConstantStubGivesConstantEverywhere) {
  const auto subs = random_subs(2, 3, 5, 7, 1);
  for (int k : {2, 3, 4}) {
    const auto part = sample_partition_for_stride(5, 7, 2, k, 10 + k);
    for (const auto& o : mmdb_denoise(ConstantStub{0.7f}, subs, part).subs)
      for (float v : o.data) EXPECT_EQ(v, 0.7f);
  }
}

TEST(Mmdb, BranchOrderDoesNotMatter) {
  const auto d = small_unet();
  const auto subs = random_subs(2, 3, 8, 8, 3);
  auto part = sample_partition_for_stride(8, 8, 2, 2, 4);
  const auto a = mmdb_denoise(d, subs, part);
  std::swap(part.branch_masks[0], part.branch_masks[1]);
  const auto b = mmdb_denoise(d, subs, part);
  for (int j = 0; j < 4; ++j) EXPECT_EQ(a[j], b[j]);
}

TEST(Mmdb, EqualsSumOfBranchesAndBranchesAreDisjoint) {
  const auto d = small_unet();
  const auto subs = random_subs(2, 3, 8, 8, 3);
  const auto part = sample_partition_for_stride(8, 8, 2, 3, 4);
  const auto total = mmdb_denoise(d, subs, part);
  std::vector<SubSampleSet> branches;
  for (const auto& set : part.branch_masks) branches.push_back(branch_denoise(d, subs, set));
  for (int j = 0; j < 4; ++j) {
    for (std::size_t p = 0; p < total[j].size(); ++p) {
      float sum = 0.f;
      int writers = 0;
      for (const auto& br : branches) {
        sum += br[j].data[p];
        writers += br[j].data[p] != 0.f;
      }
      EXPECT_FLOAT_EQ(total[j].data[p], sum);
      EXPECT_LE(writers, 1);
    }
    // Reconstruct from the complementary supports.
    ImageTensor rebuilt(total[j].c, total[j].h, total[j].w);
    for (const auto& set : part.branch_masks) {
      const auto piece = apply_mask(total[j], complement(set[j]));
      for (std::size_t p = 0; p < rebuilt.size(); ++p) rebuilt.data[p] += piece.data[p];
    }
    EXPECT_EQ(rebuilt, total[j]);
  }
}

TEST(Mmdb, RejectsInvalidPartition) {
  const auto subs = random_subs(1, 1, 4, 4, 1);
  MaskPartition all_zero;
  all_zero.branch_masks.assign(2, MaskSet(1, MaskTensor(4, 4, 0)));
  EXPECT_THROW(mmdb_denoise(IdentityStub{}, subs, all_zero), ShapeError);
}

TEST(DenoiseImage, IdentityStubGivesZeroForAnyShape) {
  std::mt19937 rng(17);
  for (int t = 0; t < 20; ++t) {
    const int c = (t % 2) ? 3 : 1, h = 3 + rng() % 30, w = 3 + rng() % 30;
    InferConfig cfg;
    cfg.s_inf = 1 + rng() % 4;
    cfg.k = 2 + rng() % 3;
    cfg.seed = t;
    const auto img = test::random_image(c, h, w, t);
    const auto out = denoise_image_raw(IdentityStub{static_cast<int>(1 + rng() % 3)}, img, cfg);
    ASSERT_TRUE(out.same_shape(img));
    EXPECT_EQ(abs_sum(out), 0.0);
  }
}

TEST(DenoiseImage, StrideOneIsValid) {
  InferConfig cfg;
  cfg.s_inf = 1;
  const auto img = test::random_image(3, 12, 12, 2);
  const auto out = denoise_image(small_unet(), img, cfg);
  EXPECT_TRUE(out.same_shape(img));
  EXPECT_TRUE(all_finite(out));
}

TEST(DenoiseImage, DeterministicAndSeedSensitive) {
  const auto d = small_unet();
  const auto img = test::random_image(3, 21, 19, 4);
  InferConfig cfg;
  cfg.seed = 9;
  const auto a = denoise_image(d, img, cfg), b = denoise_image(d, img, cfg);
  EXPECT_EQ(a, b);
  cfg.seed = 10;
  EXPECT_NE(a, denoise_image(d, img, cfg));
  EXPECT_NE(denoise_image(d, img, cfg, 0), denoise_image(d, img, cfg, 1));
}

TEST(DenoiseImage, ClampsOnlyAtTheEnd) {
  const auto img = test::random_image(1, 8, 8, 1);
  InferConfig cfg;
  const auto raw = denoise_image_raw(ConstantStub{1.5f}, img, cfg);
  for (float v : raw.data) EXPECT_EQ(v, 1.5f);
  for (float v : denoise_image(ConstantStub{1.5f}, img, cfg).data) EXPECT_EQ(v, 1.f);
}

TEST(DenoiseImage, ChannelMismatchRejected) {
  EXPECT_THROW(denoise_image(small_unet(3), test::random_image(1, 8, 8, 1), InferConfig{}), ShapeError);
}

TEST(InferConfigValidation, RejectsBadFields) {
  const auto expect_field = [](InferConfig cfg, const std::string& field) {
    try {
      cfg.validate();
      ADD_FAILURE() << "accepted invalid " << field;
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.field(), field);
    }
  };
  InferConfig c;
  c.s_inf = 0;
  expect_field(c, "s_inf");
  c = {};
  c.k = 1;
  expect_field(c, "k");
  c = {};
  c.refine.replace_prob = 1.5;
  expect_field(c, "refine_p");
  c = {};
  c.refine.replicas = 0;
  expect_field(c, "refine_T");
  c = {};
  c.tile = 16;
  c.tile_overlap = 16;
  expect_field(c, "tile_overlap");
}

TEST(Refine, ZeroProbabilityIsForwardOfIntermediate) {
  const auto d = small_unet();
  const auto noisy = test::random_image(3, 13, 17, 1), inter = test::random_image(3, 13, 17, 2);
  const auto expected = refine_forward(d, inter, RefinePass::plain, 0);
  for (int T : {1, 3}) EXPECT_EQ(refine_r3(d, noisy, inter, T, 0.0, 7), expected);
}

TEST(Refine, UnitProbabilityIsForwardOfNoisy) {
  const auto d = small_unet();
  const auto noisy = test::random_image(3, 13, 17, 1), inter = test::random_image(3, 13, 17, 2);
  EXPECT_EQ(refine_r3(d, noisy, inter, 4, 1.0, 7), refine_forward(d, noisy, RefinePass::plain, 0));
}

TEST(Refine, MeanOfRecordedForwards) {
  RecordingStub stub;
  const auto noisy = test::random_image(1, 6, 6, 1), inter = test::random_image(1, 6, 6, 2);
  const auto out = refine_r3(stub, noisy, inter, 2, 0.5, 3);
  ASSERT_EQ(stub.seen.size(), 2u);
  for (std::size_t i = 0; i < out.size(); ++i) {
    // Every replicate pixel came from one of the two sources.
    for (const auto& x : stub.seen) EXPECT_TRUE(x.data[i] == noisy.data[i] || x.data[i] == inter.data[i]);
    const double expected = ((0.5f * stub.seen[0].data[i] + 0.1f) + double(0.5f * stub.seen[1].data[i] + 0.1f)) / 2;
    EXPECT_FLOAT_EQ(out.data[i], static_cast<float>(expected));
  }
  EXPECT_NE(stub.seen[0], stub.seen[1]);
  EXPECT_EQ(refine_r3(stub, noisy, inter, 2, 0.5, 3), out);
}

TEST(Refine, ReplacesWholePixelsAtRoughlyRateP) {
  RecordingStub stub;
  const auto noisy = test::random_image(3, 64, 64, 1), inter = test::random_image(3, 64, 64, 2);
  refine_r3(stub, noisy, inter, 1, 0.16, 5);
  const auto& x = stub.seen.front();
  int replaced = 0;
  const std::size_t n = x.plane_size();
  for (std::size_t p = 0; p < n; ++p) {
    const bool r0 = x.data[p] == noisy.data[p];
    for (int ch = 1; ch < 3; ++ch) EXPECT_EQ(x.data[ch * n + p] == noisy.data[ch * n + p], r0);
    replaced += r0;
  }
  EXPECT_NEAR(replaced / double(n), 0.16, 0.03);
}

TEST(Refine, RejectsBadArguments) {
  const auto a = test::random_image(1, 4, 4, 1);
  EXPECT_THROW(refine_r3(IdentityStub{}, a, a, 0, 0.1, 1), ConfigError);
  EXPECT_THROW(refine_r3(IdentityStub{}, a, a, 1, -0.1, 1), ConfigError);
  EXPECT_THROW(refine_r3(IdentityStub{}, a, a, 1, 1.1, 1), ConfigError);
  EXPECT_THROW(refine_r3(IdentityStub{}, a, test::random_image(1, 4, 5, 1), 1, 0.1, 1), ShapeError);
}

TEST(Refine, MaskedPassNeverCopiesInput) {
  const auto a = test::random_image(3, 10, 10, 1), b = test::random_image(3, 10, 10, 2);
  EXPECT_EQ(abs_sum(refine_r3(IdentityStub{}, a, b, 3, 0.3, 1, RefinePass::masked)), 0.0);
}

TEST(Variant, ParsingAndTags) {
  for (auto v : {Variant::B, Variant::P, Variant::B_E, Variant::P_E}) EXPECT_EQ(variant_from_string(to_string(v)), v);
  EXPECT_THROW(variant_from_string("Q"), ConfigError);
  EXPECT_EQ(required_training_tag(Variant::B_E), "B");
  EXPECT_EQ(required_training_tag(Variant::P_E), "P");
}

TEST(Variant, BaseEqualsDenoiseImage) {
  const auto d = small_unet();
  const auto img = test::random_image(3, 16, 16, 3);
  InferConfig cfg;
  EXPECT_EQ(denoise_variant(d, img, Variant::B, cfg, "B"), denoise_image(d, img, cfg));
  EXPECT_EQ(denoise_variant(d, img, Variant::P, cfg, "P"), denoise_image(d, img, cfg));
}

TEST(Variant, RefinedWithZeroProbabilityIsForwardOfIntermediate) {
  const auto d = small_unet();
  const auto img = test::random_image(3, 16, 16, 3);
  InferConfig cfg;
  cfg.refine.replicas = 1;
  cfg.refine.replace_prob = 0.0;
  const auto inter = denoise_image_raw(d, img, cfg);
  EXPECT_EQ(denoise_variant(d, img, Variant::B_E, cfg, "B"), clamp01(refine_forward(d, inter, RefinePass::plain, 0)));
}

TEST(Variant, IncompatibleCheckpointRejected) {
  const auto d = small_unet();
  const auto img = test::random_image(3, 8, 8, 3);
  EXPECT_THROW(denoise_variant(d, img, Variant::P_E, InferConfig{}, "B"), ConfigError);
  EXPECT_THROW(denoise_variant(d, img, Variant::B_E, InferConfig{}, "P"), ConfigError);
  EXPECT_THROW(denoise_variant(d, img, Variant::P, InferConfig{}, "B"), ConfigError);
}

TEST(Tiling, StubsBehaveAsWithoutTiles) {
  const auto img = test::random_image(3, 70, 53, 1);
  InferConfig cfg;
  cfg.tile = 32;
  cfg.tile_overlap = 8;
  EXPECT_EQ(abs_sum(denoise_image_raw(IdentityStub{}, img, cfg)), 0.0);
  for (float v : denoise_image_raw(ConstantStub{0.3f}, img, cfg).data) EXPECT_NEAR(v, 0.3f, 1e-6);
}

TEST(Tiling, CoversImageAndIsDeterministic) {
  const auto d = small_unet();
  const auto img = test::random_image(3, 50, 41, 1);
  InferConfig cfg;
  cfg.tile = 24;
  cfg.tile_overlap = 8;
  cfg.refine.replicas = 2;
  const auto a = denoise_variant(d, img, Variant::B_E, cfg, "B");
  EXPECT_TRUE(a.same_shape(img));
  EXPECT_EQ(a, denoise_variant(d, img, Variant::B_E, cfg, "B"));
}

TEST(Tiling, TileStartsCoverExtent) {
  for (int extent : {10, 32, 33, 64, 100, 257})
    for (int tile : {16, 32, 48}) {
      const auto starts = detail::tile_starts(extent, tile, 8);
      std::vector<int> covered(extent, 0);
      for (int s : starts)
        for (int i = s; i < std::min(extent, s + tile); ++i) covered[i] = 1;
      for (int v : covered) EXPECT_EQ(v, 1);
      for (int s : starts) EXPECT_TRUE(s >= 0 && (s + tile <= extent || extent <= tile));
    }
}
