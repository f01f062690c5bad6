#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "peakit/augment.hpp"
#include "peakit/dataset_store.hpp"
#include "peakit/error.hpp"
#include "peakit/models.hpp"
#include "peakit/nn/checkpoint.hpp"
#include "peakit/nn/loss.hpp"
#include "peakit/nn/metrics.hpp"
#include "peakit/nn/optim.hpp"
#include "peakit/patch_pipeline.hpp"
#include "peakit/pea_type.hpp"

namespace peakit {

struct Prediction {
  double probability = 0;  // p(PEA present)
  bool positive = false;

  bool operator==(const Prediction&) const = default;
};

/// Flags one PEA type on a patch (one frame) or a cuboid (ten frames).
class PeaDetector {
 public:
  virtual ~PeaDetector() = default;
  virtual PeaType pea_type() const = 0;
  virtual Prediction predict(std::span<const PatchPayload> frames) const = 0;

  virtual std::vector<Prediction> predict_batch(std::span<const std::vector<PatchPayload>> patches) const {
    std::vector<Prediction> out;
    out.reserve(patches.size());
    for (const auto& p : patches) out.push_back(predict(p));
    return out;
  }
};

inline void check_patch_geometry(PeaType t, std::span<const PatchPayload> frames) {
  const int size = window_size(t);
  if (frames.size() != static_cast<std::size_t>(frames_per_patch(t)))
    fail(ErrorCode::GeometryMismatch, std::string(to_string(t)) + " classifier takes " +
                                          std::to_string(frames_per_patch(t)) + " frame(s), got " +
                                          std::to_string(frames.size()));
  for (const auto& f : frames)
    if (f.width != size || f.height != size)
      fail(ErrorCode::GeometryMismatch, std::string(to_string(t)) + " classifier takes " + std::to_string(size) + "x" +
                                            std::to_string(size) + " patches, got " + std::to_string(f.width) + "x" +
                                            std::to_string(f.height));
}

namespace detail {

/// Bilinear x2 upsampling of a 4:2:0 chroma plane; chroma sample j sits at
/// luma coordinate 2j + 0.5.
inline void upsample2x(const std::vector<std::uint8_t>& src, int cw, int ch, float* dst) {
  const int w = 2 * cw, h = 2 * ch;
  auto taps = [](int x, int n, int& i0, int& i1, float& f) {
    const double c = (x - 0.5) / 2.0;
    const int base = static_cast<int>(std::floor(c));
    f = static_cast<float>(c - base);
    i0 = std::clamp(base, 0, n - 1);
    i1 = std::clamp(base + 1, 0, n - 1);
  };
  for (int y = 0; y < h; ++y) {
    int y0, y1;
    float fy;
    taps(y, ch, y0, y1, fy);
    for (int x = 0; x < w; ++x) {
      int x0, x1;
      float fx;
      taps(x, cw, x0, x1, fx);
      const float a = src[static_cast<std::size_t>(y0) * cw + x0], b = src[static_cast<std::size_t>(y0) * cw + x1];
      const float c = src[static_cast<std::size_t>(y1) * cw + x0], d = src[static_cast<std::size_t>(y1) * cw + x1];
      const float top = a + (b - a) * fx, bottom = c + (d - c) * fx;
      dst[static_cast<std::size_t>(y) * w + x] = (top + (bottom - top) * fy) / 255.0f;
    }
  }
}

}  // namespace detail

/// Writes the C x S x S network input in [0, 1]: Y, U, V for spatial types
/// (chroma upsampled), one luma plane per frame for temporal types.
inline void fill_input(PeaType t, std::span<const PatchPayload> frames, float* dst) {
  check_patch_geometry(t, frames);
  const int s = window_size(t);
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  if (is_temporal(t)) {
    for (std::size_t k = 0; k < frames.size(); ++k)
      for (std::size_t i = 0; i < plane; ++i) dst[k * plane + i] = frames[k].y[i] / 255.0f;
    return;
  }
  const auto& f = frames[0];
  for (std::size_t i = 0; i < plane; ++i) dst[i] = f.y[i] / 255.0f;
  detail::upsample2x(f.u, s / 2, s / 2, dst + plane);
  detail::upsample2x(f.v, s / 2, s / 2, dst + 2 * plane);
}

struct TrainConfig {
  int batch_size = 64;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double initial_lr = 0.1;
  std::vector<int> lr_drops = {20, 30, 36};
  double lr_factor = 10.0;
  int epochs = 40;
  std::uint64_t seed = 1;
  bool augment = false;
  AugmentConfig augmentation;
  /// Requires exactly three learning-rate drops.
  bool strict_schedule = true;

  /// LeNet-5 trains with augmentation at a smaller step; ResNeXt uses the
  /// plain momentum-SGD settings without augmentation.
  static TrainConfig for_arch(Architecture a) {
    TrainConfig c;
    if (a == Architecture::LeNet5) {
      c.initial_lr = 0.01;
      c.augment = true;
    }
    return c;
  }

  void validate() const {
    if (batch_size <= 0) fail(ErrorCode::ConfigInvalid, "batch_size must be positive");
    if (momentum < 0 || momentum >= 1) fail(ErrorCode::ConfigInvalid, "momentum must be in [0, 1)");
    if (weight_decay < 0) fail(ErrorCode::ConfigInvalid, "weight_decay must be >= 0");
    if (!(initial_lr > 0)) fail(ErrorCode::ConfigInvalid, "initial_lr must be positive");
    if (epochs < 0) fail(ErrorCode::ConfigInvalid, "epochs must be >= 0");
    if (lr_factor <= 0) fail(ErrorCode::ConfigInvalid, "lr_factor must be positive");
    if (strict_schedule && lr_drops.size() != 3)
      fail(ErrorCode::ConfigInvalid, "the schedule needs exactly three lr drops (got " + std::to_string(lr_drops.size()) + ")");
    if (!std::is_sorted(lr_drops.begin(), lr_drops.end())) fail(ErrorCode::ConfigInvalid, "lr_drops must be ascending");
    augmentation.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size}, {"momentum", c.momentum},   {"weight_decay", c.weight_decay},
       {"initial_lr", c.initial_lr}, {"lr_drops", c.lr_drops},   {"lr_factor", c.lr_factor},
       {"epochs", c.epochs},         {"seed", c.seed},           {"augment", c.augment},
       {"augmentation", c.augmentation}, {"strict_schedule", c.strict_schedule}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.momentum = j.value("momentum", c.momentum);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.initial_lr = j.value("initial_lr", c.initial_lr);
  c.lr_drops = j.value("lr_drops", c.lr_drops);
  c.lr_factor = j.value("lr_factor", c.lr_factor);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.augment = j.value("augment", c.augment);
  if (j.contains("augmentation")) c.augmentation = j.at("augmentation").get<AugmentConfig>();
  c.strict_schedule = j.value("strict_schedule", c.strict_schedule);
}

struct LabeledPatch {
  std::vector<PatchPayload> frames;
  Label label = Label::Negative;
};

inline constexpr std::array<char, 4> kClassifierMagic = {'P', 'E', 'A', 'M'};
inline constexpr std::uint16_t kClassifierVersion = 1;

/// One binary classifier for one PEA type.
class PeaClassifier final : public PeaDetector {
 public:
  PeaClassifier(PeaType type, ModelConfig cfg, std::uint64_t init_seed = 1)
      : type_(type), cfg_(std::move(cfg)), net_(cfg_.build<float>()) {
    if (cfg_.input_size() != window_size(type) || cfg_.input_channels() != peakit::input_channels(type))
      fail(ErrorCode::ConfigInvalid, std::string(to_string(type)) + " needs a " + std::to_string(peakit::input_channels(type)) +
                                         "-channel " + std::to_string(window_size(type)) + "-pixel model input");
    means_.assign(static_cast<std::size_t>(peakit::input_channels(type)), 0.0f);
    std::mt19937_64 rng(init_seed);
    net_->initialize(rng);
  }

  PeaType pea_type() const override { return type_; }
  const ModelConfig& config() const { return cfg_; }
  nn::Sequential<float>& network() { return *net_; }
  const std::vector<float>& means() const { return means_; }
  void set_means(std::vector<float> m) {
    if (m.size() != means_.size()) fail(ErrorCode::ShapeMismatch, "normalization needs one mean per input channel");
    means_ = std::move(m);
  }
  const nlohmann::json& provenance() const { return provenance_; }
  void set_provenance(nlohmann::json p) { provenance_ = std::move(p); }

  std::size_t input_elements() const {
    const auto s = static_cast<std::size_t>(window_size(type_));
    return means_.size() * s * s;
  }

  /// Normalized input for one sample.
  void prepare(std::span<const PatchPayload> frames, float* dst) const {
    fill_input(type_, frames, dst);
    const std::size_t plane = input_elements() / means_.size();
    for (std::size_t c = 0; c < means_.size(); ++c)
      for (std::size_t i = 0; i < plane; ++i) dst[c * plane + i] -= means_[c];
  }

  nn::Shape batch_shape(std::size_t n) const {
    const auto s = static_cast<std::size_t>(window_size(type_));
    return {n, means_.size(), s, s};
  }

  /// Softmax outputs [N, 2] in eval mode.
  nn::Tensor<float> forward_eval(const nn::Tensor<float>& x) const {
    std::lock_guard lock(mu_);
    return net_->forward(x, nn::Mode::Eval);
  }

  Prediction predict(std::span<const PatchPayload> frames) const override {
    nn::Tensor<float> x(batch_shape(1));
    prepare(frames, x.data());
    const auto p = forward_eval(x);
    return {p[1], p[1] > 0.5f};
  }

  std::vector<Prediction> predict_batch(std::span<const std::vector<PatchPayload>> patches) const override {
    std::vector<Prediction> out;
    out.reserve(patches.size());
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < patches.size(); start += kChunk) {
      const std::size_t n = std::min(kChunk, patches.size() - start);
      nn::Tensor<float> x(batch_shape(n));
      for (std::size_t i = 0; i < n; ++i) prepare(patches[start + i], x.data() + i * input_elements());
      const auto p = forward_eval(x);
      for (std::size_t i = 0; i < n; ++i) out.push_back({p[2 * i + 1], p[2 * i + 1] > 0.5f});
    }
    return out;
  }

  nlohmann::json header() const {
    return {{"pea_type", to_string(type_)},
            {"model", cfg_},
            {"input", {{"size", window_size(type_)}, {"channels", means_.size()}, {"frames", frames_per_patch(type_)}}},
            {"normalization", {{"scale", "1/255"}, {"channel_means", means_}}},
            {"provenance", provenance_}};
  }

  /// "PEAM", u16 version, u32 header length, JSON header, then the weights container.
  void save(std::ostream& out) const {
    const std::string h = header().dump();
    out.write(kClassifierMagic.data(), 4);
    nn::io::put_u16(out, kClassifierVersion);
    nn::io::put_u32(out, static_cast<std::uint32_t>(h.size()));
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    std::lock_guard lock(mu_);
    nn::save_weights(out, *net_);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write checkpoint " + path.string());
    save(out);
    if (!out) fail(ErrorCode::IoError, "failed writing checkpoint " + path.string());
  }

  static std::unique_ptr<PeaClassifier> load(std::istream& in, const std::string& source = "checkpoint") {
    std::array<char, 4> magic{};
    in.read(magic.data(), 4);
    if (!in || magic != kClassifierMagic) fail(ErrorCode::CorruptRecord, source + ": not a classifier checkpoint");
    const auto version = nn::io::get_u16(in);
    if (version != kClassifierVersion) fail(ErrorCode::CorruptRecord, source + ": unsupported version " + std::to_string(version));
    const auto len = nn::io::get_u32(in);
    std::string text(len, '\0');
    in.read(text.data(), len);
    if (!in) fail(ErrorCode::CorruptRecord, source + ": truncated header");
    nlohmann::json h;
    try {
      h = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::CorruptRecord, source + ": bad header: " + e.what());
    }
    auto clf = std::make_unique<PeaClassifier>(parse_pea_type(h.at("pea_type").get<std::string>()),
                                               h.at("model").get<ModelConfig>());
    clf->set_means(h.at("normalization").at("channel_means").get<std::vector<float>>());
    clf->provenance_ = h.value("provenance", nlohmann::json());
    nn::load_weights(in, *clf->net_);
    return clf;
  }

  static std::unique_ptr<PeaClassifier> load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::FileMissing, "checkpoint not found: " + path.string());
    return load(in, path.string());
  }

 private:
  PeaType type_;
  ModelConfig cfg_;
  std::vector<float> means_;
  std::unique_ptr<nn::Sequential<float>> net_;
  nlohmann::json provenance_;
  mutable std::mutex mu_;
};

inline nn::ConfusionCounts evaluate(const PeaDetector& detector, std::span<const LabeledPatch> samples) {
  nn::ConfusionCounts c;
  constexpr std::size_t kChunk = 256;
  std::vector<std::vector<PatchPayload>> batch;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, samples.size() - start);
    batch.clear();
    for (std::size_t i = 0; i < n; ++i) batch.push_back(samples[start + i].frames);
    const auto preds = detector.predict_batch(batch);
    for (std::size_t i = 0; i < n; ++i) c.add(preds[i].positive, samples[start + i].label == Label::Positive);
  }
  return c;
}

struct EpochStats {
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double train_acc = 0;  // running, over the augmented training batches
  double test_acc = 0;
};

inline constexpr const char* kEpochLogHeader = "epoch,lr,train_loss,train_acc,test_acc";

inline std::string format_epoch(const EpochStats& e) {
  std::ostringstream os;
  os.precision(6);
  os << e.epoch << ',' << e.lr << ',' << e.train_loss << ',' << e.train_acc << ',' << e.test_acc;
  return os.str();
}

struct TrainResult {
  std::unique_ptr<PeaClassifier> classifier;
  nn::ConfusionCounts train_counts;
  nn::ConfusionCounts test_counts;
  std::vector<EpochStats> log;
};

/// Per-channel means of the unaugmented training inputs.
inline std::vector<float> channel_means(PeaType type, std::span<const LabeledPatch> samples) {
  const int c = input_channels(type);
  const std::size_t plane = static_cast<std::size_t>(window_size(type)) * window_size(type);
  std::vector<double> sums(static_cast<std::size_t>(c), 0.0);
  std::vector<float> buf(plane * c);
  for (const auto& s : samples) {
    fill_input(type, s.frames, buf.data());
    for (int k = 0; k < c; ++k)
      sums[k] += std::accumulate(buf.begin() + k * plane, buf.begin() + (k + 1) * plane, 0.0);
  }
  std::vector<float> means(static_cast<std::size_t>(c), 0.0f);
  if (!samples.empty())
    for (int k = 0; k < c; ++k) means[k] = static_cast<float>(sums[k] / (static_cast<double>(plane) * samples.size()));
  return means;
}

/// Mini-batch momentum SGD with cross-entropy on the softmax logits.
/// Deterministic for a fixed seed in single-threaded builds.
inline TrainResult train_classifier(PeaType type, std::span<const LabeledPatch> train, std::span<const LabeledPatch> test,
                                    const ModelConfig& model_cfg, const TrainConfig& cfg, std::ostream* log_csv = nullptr) {
  cfg.validate();
  std::size_t positives = 0;
  for (const auto& s : train) positives += s.label == Label::Positive;
  if (positives == 0 || positives == train.size())
    fail(ErrorCode::EmptyClass, std::string(to_string(type)) + " training split has " + std::to_string(positives) +
                                    " positive and " + std::to_string(train.size() - positives) + " negative samples");

  TrainResult res;
  res.classifier = std::make_unique<PeaClassifier>(type, model_cfg, cfg.seed);
  auto& clf = *res.classifier;
  clf.set_means(channel_means(type, train));
  auto& net = clf.network();
  const std::size_t head = net.size() - 1;  // everything before the softmax
  nn::Sgd<float> opt(nn::parameters_of(net), static_cast<float>(cfg.momentum), static_cast<float>(cfg.weight_decay));

  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (log_csv) *log_csv << kEpochLogHeader << '\n';

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = nn::scheduled_lr(cfg.initial_lr, cfg.lr_drops, epoch, cfg.lr_factor);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    nn::ConfusionCounts running;
    for (std::size_t start = 0, batch_no = 0; start < order.size(); start += cfg.batch_size, ++batch_no) {
      const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - start);
      nn::Tensor<float> x(clf.batch_shape(n));
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& s = train[order[start + i]];
        labels[i] = static_cast<int>(s.label);
        if (cfg.augment) {
          const std::uint64_t seed = detail::splitmix64(cfg.seed ^ detail::splitmix64(
                                                                       static_cast<std::uint64_t>(epoch) * train.size() + order[start + i]));
          clf.prepare(augment(std::span<const PatchPayload>(s.frames), cfg.augmentation, seed), x.data() + i * clf.input_elements());
        } else {
          clf.prepare(s.frames, x.data() + i * clf.input_elements());
        }
      }
      nn::zero_grad(net);
      const auto logits = net.forward_until(x, nn::Mode::Train, head);
      const auto r = nn::softmax_cross_entropy(logits, std::span<const int>(labels));
      if (!std::isfinite(r.loss))
        fail(ErrorCode::DivergedLoss, std::string(to_string(type)) + ": loss became non-finite at epoch " +
                                          std::to_string(epoch) + ", batch " + std::to_string(batch_no) + " (lr " +
                                          std::to_string(lr) + ")");
      net.backward_from(r.grad, head);
      opt.step(static_cast<float>(lr));
      loss_sum += static_cast<double>(r.loss) * n;
      for (std::size_t i = 0; i < n; ++i) running.add(r.probabilities[2 * i + 1] > 0.5f, labels[i] == 1);
    }
    EpochStats e;
    e.epoch = epoch;
    e.lr = lr;
    e.train_loss = train.empty() ? 0 : loss_sum / train.size();
    e.train_acc = nn::accuracy_or_nan(running);
    e.test_acc = nn::accuracy_or_nan(evaluate(clf, test));
    res.log.push_back(e);
    if (log_csv) *log_csv << format_epoch(e) << '\n' << std::flush;
  }
  res.train_counts = evaluate(clf, train);
  res.test_counts = evaluate(clf, test);
  return res;
}

inline LabeledPatch to_labeled_patch(const PatchRecord& r) {
  LabeledPatch p;
  p.label = r.label;
  for (int k = 0; k < r.n_frames; ++k) p.frames.push_back(r.frame(k));
  return p;
}

/// Records of one PEA type split by their manifest assignment; unassigned
/// records are split on the fly (not persisted).
inline std::pair<std::vector<LabeledPatch>, std::vector<LabeledPatch>> load_split(const DatasetStore& store, PeaType type,
                                                                                  std::uint64_t seed) {
  std::vector<const ManifestEntry*> entries;
  std::vector<SplitItem> unassigned;
  for (const auto& e : store.entries()) {
    if (e.pea_type != type) continue;
    entries.push_back(&e);
    if (!e.split) unassigned.push_back({std::to_string(e.offset), std::to_string(static_cast<int>(e.label))});
  }
  const auto fallback = split(unassigned, seed);
  std::pair<std::vector<LabeledPatch>, std::vector<LabeledPatch>> out;
  for (const auto* e : entries) {
    const Split s = e->split ? *e->split : fallback.at(std::to_string(e->offset));
    (s == Split::Train ? out.first : out.second).push_back(to_labeled_patch(store.read_record(e->offset)));
  }
  return out;
}

}  // namespace peakit
