#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "peakit/augment.hpp"
#include "peakit/patch_pipeline.hpp"
#include "test_util.hpp"

namespace peakit {
namespace {

RegionMask random_blob_mask(std::mt19937_64& rng, int w, int h) {
  RegionMask m(w, h);
  const int n = std::uniform_int_distribution<int>(0, 4)(rng);
  for (int k = 0; k < n; ++k) {
    EllipseAnnotation a;
    a.sequence = "s";
    a.cx = std::uniform_real_distribution<double>(0, w)(rng);
    a.cy = std::uniform_real_distribution<double>(0, h)(rng);
    a.rx = std::uniform_real_distribution<double>(4, 60)(rng);
    a.ry = std::uniform_real_distribution<double>(4, 60)(rng);
    const auto e = rasterize(a, w, h);
    for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] |= e.bits[i];
  }
  std::bernoulli_distribution flip(0.05);
  for (auto& b : m.bits)
    if (flip(rng)) b ^= 1;
  return m;
}

// Popcount oracle: explicit double loop over each window.
bool oracle_positive(const RegionMask& m, int x, int y, int size) {
  int ones = 0;
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) ones += m.at(x + c, y + r);
  return 2 * ones >= size * size;
}

TEST(LabelSpatial, ExactlyHalfIsPositive) {
  RegionMask m(32, 32);
  for (int i = 0; i < 512; ++i) m.bits[static_cast<std::size_t>(i) * 2] = 1;  // scattered 512 ones
  auto w = label_spatial(m, 32, 32);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_EQ(w[0].label, Label::Positive);
  EXPECT_EQ(w[0].source, WindowSource::CompressedCircled);
  m.bits[0] = 0;  // 511
  w = label_spatial(m, 32, 32);
  EXPECT_EQ(w[0].label, Label::Negative);
  EXPECT_EQ(w[0].source, WindowSource::CompressedUncircled);
}

TEST(LabelSpatial, AllZeroMaskIsAllNegative) {
  const RegionMask m(416, 240);
  const auto w = label_spatial(m, 72, 72, PeaType::Blocking, 3);
  EXPECT_EQ(w.size(), 5u * 3u);
  for (const auto& win : w) {
    EXPECT_EQ(win.label, Label::Negative);
    EXPECT_EQ(win.frame, 3);
    EXPECT_EQ(win.pea_type, PeaType::Blocking);
    EXPECT_LE(win.x + 72, 416);
    EXPECT_LE(win.y + 72, 240);
  }
}

TEST(LabelSpatial, RandomMasksMatchPopcountOracle) {
  std::mt19937_64 rng(31);
  for (int t = 0; t < 50; ++t) {
    const auto m = random_blob_mask(rng, 208, 160);
    for (int size : {32, 72})
      for (int stride : {size, 16}) {
        const auto windows = label_spatial(m, size, stride);
        std::size_t expected = 0;
        for (int y = 0; y + size <= m.height; y += stride)
          for (int x = 0; x + size <= m.width; x += stride) ++expected;
        ASSERT_EQ(windows.size(), expected);
        for (const auto& w : windows)
          ASSERT_EQ(w.label == Label::Positive, oracle_positive(m, w.x, w.y, size));
      }
  }
}

TEST(LabelSpatial, RejectsBadParameters) {
  RegionMask m(64, 64);
  EXPECT_THROW(label_spatial(m, 48, 48), Error);
  EXPECT_THROW(label_spatial(m, 32, 0), Error);
  EXPECT_THROW(label_spatial(m, 32, 3), Error);
}

TEST(LabelTemporal, WrongSpanLength) {
  std::vector<RegionMask> masks(9, RegionMask(64, 64));
  try {
    label_temporal(masks, 32, 32);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::WrongSpanLength);
  }
}

TEST(LabelTemporal, RegionInFirstFrameOnlyMakesCuboidPositive) {
  std::vector<RegionMask> masks(10, RegionMask(64, 64));
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) masks[0].at(x, y) = 1;
  const auto w = label_temporal(masks, 32, 32, PeaType::Flickering, 5);
  ASSERT_EQ(w.size(), 4u);
  EXPECT_EQ(w[0].label, Label::Positive);
  EXPECT_EQ(w[0].frame, 5);
  EXPECT_EQ(w[1].label, Label::Negative);
}

TEST(LabelTemporal, EqualsSpatialOnUnion) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    std::vector<RegionMask> masks;
    for (int k = 0; k < 10; ++k) masks.push_back(random_blob_mask(rng, 160, 96));
    RegionMask u(160, 96);
    for (const auto& m : masks)
      for (std::size_t i = 0; i < u.bits.size(); ++i) u.bits[i] |= m.bits[i];
    const auto temporal = label_temporal(masks, 32, 32);
    const auto spatial = label_spatial(u, 32, 32, PeaType::Flickering);
    ASSERT_EQ(temporal, spatial);
    for (const auto& w : temporal) ASSERT_EQ(w.label == Label::Positive, oracle_positive(u, w.x, w.y, 32));
  }
}

std::vector<LabeledWindow> negatives(std::size_t n, PeaType type = PeaType::Ringing) {
  std::vector<LabeledWindow> out(n);
  for (auto& w : out) {
    w.pea_type = type;
    w.size = window_size(type);
  }
  return out;
}

TEST(SampleNegatives, OneToTwoRatio) {
  const auto comp = negatives(100);
  const std::vector<int> frames{0, 1, 2};
  const auto ref = sample_negatives(comp, 416, 240, frames, {1, 2}, 42);
  EXPECT_EQ(ref.size(), 200u);
  for (const auto& w : ref) {
    EXPECT_EQ(w.source, WindowSource::Reference);
    EXPECT_EQ(w.label, Label::Negative);
    EXPECT_LE(w.x + w.size, 416);
    EXPECT_LE(w.y + w.size, 240);
    EXPECT_EQ(w.x % 2, 0);
    EXPECT_TRUE(w.frame >= 0 && w.frame <= 2);
  }
}

TEST(SampleNegatives, RatioOneToZeroAndDeterminism) {
  const auto comp = negatives(37, PeaType::Blocking);
  const std::vector<int> frames{4};
  EXPECT_TRUE(sample_negatives(comp, 416, 240, frames, {1, 0}, 1).empty());
  const auto a = sample_negatives(comp, 416, 240, frames, {1, 2}, 99);
  const auto b = sample_negatives(comp, 416, 240, frames, {1, 2}, 99);
  EXPECT_EQ(a, b);
  const auto c = sample_negatives(comp, 416, 240, frames, {1, 2}, 100);
  EXPECT_NE(a, c);
}

TEST(SampleNegatives, InsufficientArea) {
  const auto comp = negatives(3, PeaType::Blocking);
  const std::vector<int> frames{0};
  try {
    sample_negatives(comp, 64, 64, frames, {1, 2}, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InsufficientReferenceArea);
  }
}

std::vector<SplitItem> items(std::size_t pos, std::size_t neg, const std::string& prefix = "r") {
  std::vector<SplitItem> v;
  for (std::size_t i = 0; i < pos; ++i) v.push_back({prefix + "p" + std::to_string(i), "blocking/1"});
  for (std::size_t i = 0; i < neg; ++i) v.push_back({prefix + "n" + std::to_string(i), "blocking/0"});
  return v;
}

std::pair<std::size_t, std::size_t> counts(const SplitAssignment& a) {
  std::size_t train = 0, test = 0;
  for (const auto& [id, s] : a) (s == Split::Train ? train : test)++;
  return {train, test};
}

TEST(SplitTest, FiftyThousandRecords) {
  const auto v = items(25'000, 25'000);
  const auto a = split(v, 1);
  EXPECT_EQ(counts(a), std::make_pair(std::size_t{37'500}, std::size_t{12'500}));
  std::size_t pos_test = 0;
  for (const auto& it : v)
    if (it.stratum == "blocking/1" && a.at(it.id) == Split::Test) ++pos_test;
  EXPECT_EQ(pos_test, 6'250u);
}

TEST(SplitTest, FourRecordsKeepBothClassesInTrain) {
  const auto v = items(2, 2);
  const auto a = split(v, 3);
  EXPECT_EQ(counts(a), std::make_pair(std::size_t{3}, std::size_t{1}));
  std::set<std::string> train_strata;
  for (const auto& it : v)
    if (a.at(it.id) == Split::Train) train_strata.insert(it.stratum);
  EXPECT_EQ(train_strata.size(), 2u);
}

TEST(SplitTest, StratifiedWithinOneRecordPerClass) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 30; ++t) {
    const std::size_t p = std::uniform_int_distribution<std::size_t>(2, 300)(rng);
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 300)(rng);
    const auto v = items(p, n);
    const auto a = split(v, static_cast<std::uint64_t>(t));
    std::size_t pt = 0, nt = 0;
    for (const auto& it : v)
      if (a.at(it.id) == Split::Test) (it.stratum == "blocking/1" ? pt : nt)++;
    EXPECT_EQ(pt + nt, (p + n) / 4);
    EXPECT_LE(std::abs(static_cast<double>(pt) - p / 4.0), 1.0);
    EXPECT_LE(std::abs(static_cast<double>(nt) - n / 4.0), 1.0);
  }
}

TEST(SplitTest, InputOrderDoesNotMatter) {
  auto v = items(120, 333);
  const auto a = split(v, 9);
  std::mt19937_64 rng(1);
  std::shuffle(v.begin(), v.end(), rng);
  EXPECT_EQ(split(v, 9), a);
}

TEST(SplitTest, AddingARecordMovesAtMostTwoExistingAssignments) {
  std::mt19937_64 rng(12);
  for (int t = 0; t < 40; ++t) {
    auto v = items(std::uniform_int_distribution<std::size_t>(4, 80)(rng), std::uniform_int_distribution<std::size_t>(4, 80)(rng));
    const auto before = split(v, 17);
    v.push_back({"new" + std::to_string(t), t % 2 ? "blocking/1" : "blocking/0"});
    const auto after = split(v, 17);
    int changed = 0;
    for (const auto& [id, s] : before) changed += after.at(id) != s;
    EXPECT_LE(changed, 2);
  }
}

// ---------------------------------------------------------------------------

TEST(Augment, ZeroConfigIsIdentity) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const int s = t % 2 ? 32 : 72;
    const auto p = testing::random_frame(s, s, rng);
    EXPECT_EQ(augment(p, AugmentConfig::identity(), static_cast<std::uint64_t>(t)), p);
  }
}

TEST(Augment, DoubleFlipIsIdentity) {
  std::mt19937_64 rng(6);
  const auto p = testing::random_frame(32, 32, rng);
  AffineParams flip;
  flip.flip = true;
  const auto once = apply_affine(p, flip);
  EXPECT_NE(once, p);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) ASSERT_EQ(once.y[y * 32 + x], p.y[y * 32 + 31 - x]);
  EXPECT_EQ(apply_affine(once, flip), p);
}

TEST(Augment, QuarterTurnPermutesIndices) {
  PatchPayload p(2, 2);
  p.y = {1, 2, 3, 4};
  p.u = {50};
  p.v = {60};
  AffineParams rot;
  rot.rotation_deg = 90;
  const auto r = apply_affine(p, rot);
  EXPECT_EQ(r.y, (std::vector<std::uint8_t>{2, 4, 1, 3}));
  EXPECT_EQ(r.u, p.u);
  EXPECT_EQ(r.v, p.v);
}

TEST(Augment, QuarterTurnLargerPatch) {
  std::mt19937_64 rng(7);
  const auto p = testing::random_frame(32, 32, rng);
  AffineParams rot;
  rot.rotation_deg = 90;
  const auto r = apply_affine(p, rot);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) ASSERT_EQ(r.y[y * 32 + x], p.y[x * 32 + (31 - y)]);
}

TEST(Augment, CuboidFramesShareOneTransform) {
  std::mt19937_64 rng(8);
  const auto f = testing::random_frame(32, 32, rng);
  const std::vector<PatchPayload> cuboid(10, f);
  const auto out = augment(cuboid, AugmentConfig{}, 1234);
  ASSERT_EQ(out.size(), 10u);
  for (const auto& o : out) EXPECT_EQ(o, out[0]);
}

TEST(Augment, DeterministicAndShapePreserving) {
  std::mt19937_64 rng(10);
  const auto p = testing::random_frame(72, 72, rng);
  AugmentConfig cfg;
  cfg.fill_mode = FillMode::Reflect;
  const auto a = augment(p, cfg, 5), b = augment(p, cfg, 5);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.width, 72);
  EXPECT_EQ(a.u.size(), 36u * 36u);
}

TEST(Augment, ConstantFillUsesFillValueOutsideSupport) {
  PatchPayload p(8, 8);
  std::fill(p.y.begin(), p.y.end(), 200);
  AffineParams shift;
  shift.shift_x = 0.5;  // source moves 4 pixels right
  const auto out = apply_affine(p, shift, FillMode::Constant, 0.0);
  EXPECT_EQ(out.y[0], 200);
  EXPECT_EQ(out.y[7], 0);
  const auto nearest = apply_affine(p, shift, FillMode::Nearest);
  EXPECT_EQ(nearest.y[7], 200);
}

TEST(Augment, InvalidConfig) {
  AugmentConfig cfg;
  cfg.zoom_range = 1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg.zoom_range = 0.1;
  cfg.rotation_range = -1;
  EXPECT_THROW(cfg.validate(), Error);
}

}  // namespace
}  // namespace peakit
