#include <gtest/gtest.h>

#include <cmath>
#include <optional>
#include <random>
#include <sstream>

#include "peakit/classifier.hpp"
#include "test_util.hpp"

using namespace peakit;

namespace {

PatchPayload flat_patch(int size, std::uint8_t y, std::uint8_t u = 128, std::uint8_t v = 128) {
  PatchPayload p(size, size);
  std::fill(p.y.begin(), p.y.end(), y);
  std::fill(p.u.begin(), p.u.end(), u);
  std::fill(p.v.begin(), p.v.end(), v);
  return p;
}

/// Bright vs dark noisy patches: separable on the mean luma.
std::vector<LabeledPatch> separable_set(PeaType t, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 12.0);
  const int s = window_size(t);
  std::vector<LabeledPatch> out;
  for (std::size_t i = 0; i < n; ++i) {
    LabeledPatch lp;
    lp.label = i % 2 ? Label::Positive : Label::Negative;
    const double base = lp.label == Label::Positive ? 170.0 : 80.0;
    for (int k = 0; k < frames_per_patch(t); ++k) {
      auto p = flat_patch(s, 0);
      for (auto& v : p.y) v = static_cast<std::uint8_t>(std::clamp(base + noise(rng), 0.0, 255.0));
      for (auto& v : p.u) v = static_cast<std::uint8_t>(std::clamp(128 + noise(rng), 0.0, 255.0));
      for (auto& v : p.v) v = static_cast<std::uint8_t>(std::clamp(128 + noise(rng), 0.0, 255.0));
      lp.frames.push_back(std::move(p));
    }
    out.push_back(std::move(lp));
  }
  return out;
}

TrainConfig quick_config(int epochs) {
  TrainConfig c = TrainConfig::for_arch(Architecture::LeNet5);
  c.augment = false;
  c.epochs = epochs;
  c.lr_drops = {epochs / 2, 3 * epochs / 4, 9 * epochs / 10};
  c.batch_size = 32;
  return c;
}

void zero_weights(PeaClassifier& clf) {
  for (auto* p : nn::parameters_of(clf.network()))
    for (auto& v : p->value.values()) v = 0;
}

}  // namespace

TEST(Upsample, MatchesBilinearOracle) {
  std::mt19937_64 rng(1);
  const int cw = 5, ch = 4;
  std::vector<std::uint8_t> src(cw * ch);
  for (auto& v : src) v = static_cast<std::uint8_t>(rng() % 256);
  std::vector<float> dst(4 * cw * ch);
  detail::upsample2x(src, cw, ch, dst.data());
  auto sample = [&](int x, int y) {
    return static_cast<double>(src[std::clamp(y, 0, ch - 1) * cw + std::clamp(x, 0, cw - 1)]);
  };
  for (int y = 0; y < 2 * ch; ++y)
    for (int x = 0; x < 2 * cw; ++x) {
      // chroma j is centred on luma 2j + 0.5
      const double cx = (x - 0.5) / 2, cy = (y - 0.5) / 2;
      const int x0 = static_cast<int>(std::floor(cx)), y0 = static_cast<int>(std::floor(cy));
      const double fx = cx - x0, fy = cy - y0;
      const double want = (1 - fy) * ((1 - fx) * sample(x0, y0) + fx * sample(x0 + 1, y0)) +
                          fy * ((1 - fx) * sample(x0, y0 + 1) + fx * sample(x0 + 1, y0 + 1));
      EXPECT_NEAR(dst[y * 2 * cw + x], want / 255.0, 1e-5) << x << "," << y;
    }
}

TEST(Upsample, ConstantPlaneStaysConstant) {
  std::vector<std::uint8_t> src(16 * 16, 51);
  std::vector<float> dst(32 * 32);
  detail::upsample2x(src, 16, 16, dst.data());
  for (float v : dst) EXPECT_FLOAT_EQ(v, 0.2f);
}

TEST(FillInput, SpatialLayoutIsYThenUpsampledChroma) {
  const auto p = flat_patch(32, 255, 0, 51);
  std::vector<float> dst(3 * 32 * 32);
  fill_input(PeaType::Ringing, std::span<const PatchPayload>(&p, 1), dst.data());
  for (int i = 0; i < 1024; ++i) {
    EXPECT_FLOAT_EQ(dst[i], 1.0f);
    EXPECT_FLOAT_EQ(dst[1024 + i], 0.0f);
    EXPECT_FLOAT_EQ(dst[2048 + i], 0.2f);
  }
}

TEST(FillInput, TemporalLayoutIsOneLumaPlanePerFrame) {
  std::vector<PatchPayload> frames;
  for (int k = 0; k < 10; ++k) frames.push_back(flat_patch(32, static_cast<std::uint8_t>(k * 25), 7, 9));
  std::vector<float> dst(10 * 32 * 32);
  fill_input(PeaType::Flickering, frames, dst.data());
  for (int k = 0; k < 10; ++k)
    for (int i = 0; i < 1024; i += 97) EXPECT_FLOAT_EQ(dst[k * 1024 + i], k * 25 / 255.0f);
}

TEST(Predict, ZeroWeightsTieIsNegative) {
  PeaClassifier clf(PeaType::Blurring, ModelConfig::for_type(Architecture::LeNet5, PeaType::Blurring));
  zero_weights(clf);
  const auto p = flat_patch(72, 120);
  const auto r = clf.predict(std::span<const PatchPayload>(&p, 1));
  EXPECT_EQ(r.probability, 0.5);
  EXPECT_FALSE(r.positive);
}

TEST(Predict, WrongGeometryThrows) {
  PeaClassifier clf(PeaType::Ringing, ModelConfig::for_type(Architecture::LeNet5, PeaType::Ringing));
  const auto big = flat_patch(72, 10);
  try {
    clf.predict(std::span<const PatchPayload>(&big, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GeometryMismatch);
  }
  const std::vector<PatchPayload> two(2, flat_patch(32, 10));
  EXPECT_THROW(clf.predict(two), Error);
}

TEST(Predict, ModelConfigMustMatchType) {
  EXPECT_THROW(PeaClassifier(PeaType::Blocking, ModelConfig::for_type(Architecture::LeNet5, PeaType::Ringing)), Error);
}

// Batches take a different GEMM path than single samples, so agreement is to
// float rounding; repeated calls with the same input are bit-identical.
TEST(Predict, BatchMatchesSingle) {
  PeaClassifier clf(PeaType::ColorBleeding, ModelConfig::for_type(Architecture::LeNet5, PeaType::ColorBleeding), 4);
  const auto set = separable_set(PeaType::ColorBleeding, 70, 2);
  std::vector<std::vector<PatchPayload>> batch;
  for (const auto& s : set) batch.push_back(s.frames);
  const auto many = clf.predict_batch(batch);
  ASSERT_EQ(many.size(), set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto one = clf.predict(set[i].frames);
    EXPECT_NEAR(many[i].probability, one.probability, 1e-6) << i;
    EXPECT_EQ(one, clf.predict(set[i].frames));
  }
  EXPECT_EQ(many, clf.predict_batch(batch));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  PeaClassifier clf(PeaType::Floating, ModelConfig::for_type(Architecture::ResNeXt, PeaType::Floating), 11);
  clf.set_means(std::vector<float>(10, 0.25f));
  clf.set_provenance({{"seed", 11}});
  std::stringstream a;
  clf.save(a);
  const std::string bytes = a.str();
  ASSERT_EQ(bytes.substr(0, 4), "PEAM");
  auto back = PeaClassifier::load(a);
  EXPECT_EQ(back->pea_type(), PeaType::Floating);
  EXPECT_EQ(back->means(), clf.means());
  EXPECT_EQ(back->provenance(), clf.provenance());
  EXPECT_EQ(back->header(), clf.header());
  std::stringstream b;
  back->save(b);
  EXPECT_EQ(b.str(), bytes);
}

TEST(Checkpoint, FileRoundTripPredictsIdentically) {
  peakit::testing::TempDir dir;
  PeaClassifier clf(PeaType::Ringing, ModelConfig::for_type(Architecture::LeNet5, PeaType::Ringing), 3);
  clf.save(dir / "r.peam");
  const auto back = PeaClassifier::load(dir / "r.peam");
  for (const auto& s : separable_set(PeaType::Ringing, 8, 5)) EXPECT_EQ(back->predict(s.frames), clf.predict(s.frames));
}

TEST(Checkpoint, CorruptInputsAreRejected) {
  PeaClassifier clf(PeaType::Ringing, ModelConfig::for_type(Architecture::LeNet5, PeaType::Ringing));
  std::stringstream s;
  clf.save(s);
  const std::string good = s.str();
  auto code_of = [](std::string bytes) -> std::optional<ErrorCode> {
    std::stringstream in(bytes);
    try {
      PeaClassifier::load(in);
    } catch (const Error& e) {
      return e.code();
    }
    return std::nullopt;
  };
  std::string bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(code_of(bad_magic), ErrorCode::CorruptRecord);
  EXPECT_EQ(code_of(good.substr(0, 8)), ErrorCode::CorruptRecord);
  EXPECT_EQ(code_of(good.substr(0, good.size() - 10)), ErrorCode::CorruptRecord);
  EXPECT_EQ(code_of(""), ErrorCode::CorruptRecord);
  try {
    PeaClassifier::load(std::filesystem::path("/nonexistent/x.peam"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FileMissing);
    EXPECT_NE(std::string(e.what()).find("/nonexistent/x.peam"), std::string::npos);
  }
}

TEST(Train, SingleClassIsEmptyClass) {
  auto set = separable_set(PeaType::Ringing, 20, 1);
  for (auto& s : set) s.label = Label::Negative;
  try {
    train_classifier(PeaType::Ringing, set, {}, ModelConfig::for_type(Architecture::LeNet5, PeaType::Ringing), quick_config(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyClass);
  }
}

TEST(Train, HugeLearningRateDiverges) {
  const auto set = separable_set(PeaType::Ringing, 64, 1);
  auto cfg = quick_config(5);
  cfg.initial_lr = 1e12;
  try {
    train_classifier(PeaType::Ringing, set, {}, ModelConfig::for_type(Architecture::LeNet5, PeaType::Ringing), cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DivergedLoss);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(Train, ZeroEpochsReturnsInitialModel) {
  const auto set = separable_set(PeaType::Ringing, 16, 1);
  std::ostringstream log;
  const auto r =
      train_classifier(PeaType::Ringing, set, set, ModelConfig::for_type(Architecture::LeNet5, PeaType::Ringing), quick_config(0), &log);
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(log.str(), std::string(kEpochLogHeader) + "\n");
  EXPECT_EQ(r.train_counts.total(), 16u);
}

TEST(Train, SeparableSetIsLearned) {
  const auto train = separable_set(PeaType::Ringing, 400, 1);
  const auto test = separable_set(PeaType::Ringing, 200, 2);
  const auto r =
      train_classifier(PeaType::Ringing, train, test, ModelConfig::for_type(Architecture::LeNet5, PeaType::Ringing), quick_config(10));
  EXPECT_GE(nn::accuracy(r.test_counts), 0.99);
  EXPECT_EQ(r.log.size(), 10u);
  EXPECT_GE(nn::accuracy(r.train_counts), nn::accuracy(r.test_counts) - 0.01);
}

// Noise patches with shuffled labels: the network can only memorize, so its
// test predictions vary but carry no information about the labels.
TEST(Train, ShuffledLabelsStayAtChance) {
  auto noise_set = [](std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<LabeledPatch> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto p = flat_patch(32, 0);
      for (auto* plane : {&p.y, &p.u, &p.v})
        for (auto& v : *plane) v = static_cast<std::uint8_t>(rng() % 256);
      out[i].frames.push_back(std::move(p));
      out[i].label = i % 2 ? Label::Positive : Label::Negative;
    }
    std::vector<Label> labels;
    for (const auto& s : out) labels.push_back(s.label);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::size_t i = 0; i < n; ++i) out[i].label = labels[i];
    return out;
  };
  const auto train = noise_set(200, 1), test = noise_set(2000, 2);
  auto cfg = quick_config(20);
  cfg.lr_drops = {20, 20, 20};
  const auto r =
      train_classifier(PeaType::Ringing, train, test, ModelConfig::for_type(Architecture::LeNet5, PeaType::Ringing), cfg);
  EXPECT_GT(nn::accuracy(r.train_counts), 0.9);  // memorized
  EXPECT_GT(r.test_counts.tp + r.test_counts.fp, 200u);
  EXPECT_GT(r.test_counts.tn + r.test_counts.fn, 200u);
  EXPECT_NEAR(nn::accuracy(r.test_counts), 0.5, 0.05);
}

TEST(Train, Deterministic) {
  const auto set = separable_set(PeaType::Flickering, 48, 3);
  auto cfg = quick_config(2);
  cfg.augment = true;
  const auto m = ModelConfig::for_type(Architecture::LeNet5, PeaType::Flickering);
  std::ostringstream la, lb;
  const auto a = train_classifier(PeaType::Flickering, set, set, m, cfg, &la);
  const auto b = train_classifier(PeaType::Flickering, set, set, m, cfg, &lb);
  std::stringstream sa, sb;
  a.classifier->save(sa);
  b.classifier->save(sb);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(la.str(), lb.str());
}

TEST(Train, ConfigValidation) {
  auto c = quick_config(4);
  c.lr_drops = {1, 2};
  EXPECT_THROW(c.validate(), Error);
  c.strict_schedule = false;
  EXPECT_NO_THROW(c.validate());
  c.lr_drops = {3, 1, 2};
  EXPECT_THROW(c.validate(), Error);
  c = quick_config(4);
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), Error);
  const nlohmann::json j = quick_config(7);
  EXPECT_EQ(nlohmann::json(j.get<TrainConfig>()), j);
}
