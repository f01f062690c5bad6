#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "peakit/analysis.hpp"
#include "peakit/annotation.hpp"
#include "peakit/classifier.hpp"
#include "peakit/dataset_store.hpp"
#include "peakit/error.hpp"
#include "peakit/image_io.hpp"
#include "peakit/models.hpp"
#include "peakit/patch_pipeline.hpp"
#include "peakit/service.hpp"
#include "peakit/synthetic.hpp"
#include "peakit/video_io.hpp"

#ifndef PEAKIT_VERSION
#define PEAKIT_VERSION "0.0.0"
#endif

namespace peakit::cli {

inline constexpr const char* kVersion = PEAKIT_VERSION;

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitInternal = 3 };

inline int exit_code_for(ErrorCode c) { return c == ErrorCode::ConfigInvalid ? kExitUsage : kExitData; }

/// Root for default input and output locations: $PEA_DATA_DIR, else ".".
inline std::filesystem::path data_root() {
  const char* env = std::getenv("PEA_DATA_DIR");
  return env && *env ? std::filesystem::path(env) : std::filesystem::path(".");
}

// ---------------------------------------------------------------------------
// Provenance

/// Identity of a run: the resolved options with every path reduced to its
/// file name, so the same job gives the same hash in any directory.
struct JobConfig {
  std::string subcommand;
  nlohmann::json params = nlohmann::json::object();
  std::uint64_t seed = 0;

  nlohmann::json canonical() const {
    return {{"subcommand", subcommand}, {"params", params}, {"seed", seed}, {"version", kVersion}};
  }

  /// FNV-1a over the canonical JSON (keys sorted), as 16 hex digits.
  std::string hash() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << detail::fnv1a64(canonical().dump());
    return os.str();
  }

  /// One-line header written into text outputs.
  std::string header() const {
    return std::string("peakit ") + kVersion + " " + subcommand + " config_hash=" + hash() + " seed=" + std::to_string(seed);
  }

  nlohmann::json provenance() const {
    return {{"toolkit", "peakit"}, {"version", kVersion}, {"config_hash", hash()}, {"seed", seed}, {"config", canonical()}};
  }
};

inline std::string base(const std::filesystem::path& p) { return p.filename().string(); }

inline std::vector<std::string> type_names(const std::vector<PeaType>& types) {
  std::vector<std::string> out;
  for (auto t : types) out.emplace_back(to_string(t));
  return out;
}

inline std::vector<PeaType> types_or_all(const std::vector<PeaType>& types) {
  return types.empty() ? std::vector<PeaType>(kAllPeaTypes.begin(), kAllPeaTypes.end()) : types;
}

/// Tiny frame cache so that windows sharing a frame decode it once.
class FrameCache {
 public:
  explicit FrameCache(const SequenceReader& seq, std::size_t capacity = 32) : seq_(seq), capacity_(capacity) {}

  const FrameBuffer& get(int index) {
    auto it = frames_.find(index);
    if (it != frames_.end()) return it->second;
    if (frames_.size() >= capacity_) frames_.clear();
    return frames_.emplace(index, seq_.read_frame(index)).first->second;
  }

 private:
  const SequenceReader& seq_;
  std::size_t capacity_;
  std::map<int, FrameBuffer> frames_;
};

// ---------------------------------------------------------------------------
// label

struct LabelOptions {
  std::filesystem::path annotations;
  std::filesystem::path sequences;
  std::filesystem::path out_store;
  std::vector<PeaType> types;  // empty: all six
  int stride = 0;              // 0: window size
  NegativeRatio ratio;
  bool all_frames = false;
  int min_subjects = 1;  // 1: union of subjects, k > 1: k-of-n agreement
  bool append = false;
  std::uint64_t seed = 1;

  JobConfig job() const {
    return {"label",
            {{"annotations", base(annotations)},
             {"sequences", base(sequences)},
             {"out_store", base(out_store)},
             {"types", type_names(types_or_all(types))},
             {"stride", stride},
             {"ratio", {ratio.compressed, ratio.reference}},
             {"all_frames", all_frames},
             {"min_subjects", min_subjects},
             {"append", append}},
            seed};
  }
};

struct LabelSummary {
  ClassCounts counts{};
  std::size_t positives = 0;
  std::size_t uncircled = 0;
  std::size_t reference = 0;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string record_key(const ManifestEntry& e) {
  return e.sequence + "|" + std::to_string(e.frame) + "|" + std::to_string(e.x) + "|" + std::to_string(e.y) + "|" +
         std::string(to_string(e.pea_type)) + "|" + std::to_string(static_cast<int>(e.label));
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view a, std::string_view b) {
  return peakit::detail::splitmix64(peakit::detail::fnv1a64(b, peakit::detail::fnv1a64(a)) ^ seed);
}

}  // namespace detail

/// Records get a stable identity (location, type, label) for the split, so
/// re-labeling with more annotations keeps earlier assignments.
inline void assign_store_splits(DatasetStore& store, std::uint64_t seed) {
  std::vector<std::string> ids;
  std::map<std::string, int> seen;
  std::vector<SplitItem> items;
  for (const auto& e : store.entries()) {
    auto key = detail::record_key(e);
    key += "#" + std::to_string(seen[key]++);
    items.push_back({key, std::string(to_string(e.pea_type)) + ":" + std::to_string(static_cast<int>(e.label))});
    ids.push_back(std::move(key));
  }
  const auto assignment = split(items, seed);
  std::size_t i = 0;
  store.assign_splits([&](const ManifestEntry&) { return std::optional<Split>(assignment.at(ids[i++])); });
}

inline LabelSummary cmd_label(const LabelOptions& o, std::ostream& out, std::ostream& err) {
  const JobConfig job = o.job();
  if (o.stride < 0) fail(ErrorCode::ConfigInvalid, "--stride must be >= 0");
  if (o.min_subjects < 1) fail(ErrorCode::ConfigInvalid, "--min-subjects must be >= 1");
  if (o.ratio.compressed <= 0 || o.ratio.reference < 0) fail(ErrorCode::ConfigInvalid, "--ratio must be C:R with C > 0, R >= 0");
  const auto annotations = load_session(o.annotations);
  const SequenceRegistry registry(o.sequences);
  LabelSummary summary;
  auto warn = [&](const std::string& w) {
    summary.warnings.push_back(w);
    err << "warning: " << w << '\n';
  };

  std::map<std::string, std::vector<const EllipseAnnotation*>> by_sequence;
  for (const auto& a : annotations) {
    if (!registry.contains(a.sequence))
      fail(ErrorCode::FileMissing, o.annotations.string() + ": annotation refers to unknown sequence '" + a.sequence +
                                       "' (not in " + o.sequences.string() + ")");
    if (auto v = check_annotation(a, registry.get(a.sequence).meta()))
      fail(ErrorCode::OutOfBounds, o.annotations.string() + ": annotation on '" + a.sequence + "' frame " +
                                       std::to_string(a.frame) + ": field '" + v->field + "': " + v->message);
    by_sequence[a.sequence].push_back(&a);
  }
  if (annotations.empty()) warn("annotation file " + o.annotations.string() + " is empty");

  std::vector<std::string> targets;
  for (const auto& name : registry.names())
    if (by_sequence.count(name) || (o.all_frames && registry.get(name).meta().qp)) targets.push_back(name);

  if (!o.append) {
    std::filesystem::remove(o.out_store);
    std::filesystem::remove(DatasetStore::manifest_path_for(o.out_store));
  }
  if (o.out_store.has_parent_path()) std::filesystem::create_directories(o.out_store.parent_path());
  DatasetStore store(o.out_store, job.header() + " config=" + job.canonical().dump());

  for (const auto& name : targets) {
    const auto& seq = registry.get(name);
    const auto& meta = seq.meta();
    const auto& anns = by_sequence[name];
    const SequenceReader* ref = nullptr;
    if (meta.reference) {
      if (!registry.contains(*meta.reference))
        fail(ErrorCode::FileMissing, "reference sequence '" + *meta.reference + "' of '" + name + "' not found in " +
                                         o.sequences.string());
      ref = &registry.get(*meta.reference);
    } else if (o.ratio.reference > 0) {
      warn("'" + name + "' names no reference sequence; no reference negatives drawn for it");
    }

    std::set<int> frames, spans;
    for (const auto* a : anns) {
      for (int f = a->start_frame(); f < std::min(a->end_frame(), seq.frame_count()); ++f) frames.insert(f);
      if (a->temporal) spans.insert(a->frame);
    }
    if (o.all_frames) {
      for (int f = 0; f < seq.frame_count(); ++f) frames.insert(f);
      for (int s = 0; s + kTemporalSpan <= seq.frame_count(); s += kTemporalSpan) spans.insert(s);
    }

    FrameCache cache(seq), ref_cache(ref ? *ref : seq);
    for (PeaType t : types_or_all(o.types)) {
      const int size = window_size(t);
      const int stride = o.stride ? o.stride : size;
      auto mask_at = [&](int f) {
        std::vector<RegionMask> masks;
        for (const auto* a : anns)
          if (a->pea_type == t && a->covers(f)) masks.push_back(rasterize(*a, meta.width, meta.height));
        return o.min_subjects > 1 ? majority_masks(masks, o.min_subjects, meta.width, meta.height)
                                  : union_masks(masks, meta.width, meta.height);
      };
      std::vector<LabeledWindow> windows;
      if (is_temporal(t)) {
        for (int s : spans) {
          if (s + kTemporalSpan > seq.frame_count()) continue;
          std::vector<RegionMask> masks;
          for (int k = 0; k < kTemporalSpan; ++k) masks.push_back(mask_at(s + k));
          auto w = label_temporal(masks, size, stride, t, s);
          windows.insert(windows.end(), w.begin(), w.end());
        }
      } else {
        for (int f : frames) {
          auto w = label_spatial(mask_at(f), size, stride, t, f);
          windows.insert(windows.end(), w.begin(), w.end());
        }
      }
      std::vector<LabeledWindow> negatives;
      for (const auto& w : windows)
        if (w.label == Label::Negative) negatives.push_back(w);
      std::vector<LabeledWindow> refs;
      if (ref && o.ratio.reference > 0 && !negatives.empty()) {
        std::vector<int> ref_frames;
        const int last = ref->frame_count() - frames_per_patch(t);
        for (int f = 0; f <= last; ++f) ref_frames.push_back(f);
        if (ref_frames.empty()) {
          warn("reference '" + ref->meta().name + "' is too short for " + std::string(to_string(t)) + " cuboids");
        } else {
          refs = sample_negatives(negatives, ref->width(), ref->height(), ref_frames, o.ratio,
                                  detail::mix_seed(o.seed, name, to_string(t)));
        }
      }

      auto emit = [&](const LabeledWindow& w, FrameCache& src, const SequenceMeta& src_meta, bool is_ref) {
        PatchRecord r;
        r.pea_type = t;
        r.label = w.label;
        r.size = static_cast<std::uint16_t>(size);
        r.n_frames = static_cast<std::uint8_t>(frames_per_patch(t));
        r.qp = is_ref ? kReferenceQp : static_cast<std::uint8_t>(src_meta.qp.value_or(kReferenceQp));
        r.sequence = src_meta.name;
        r.frame_number = static_cast<std::uint32_t>(w.frame);
        r.x = static_cast<std::uint16_t>(w.x);
        r.y = static_cast<std::uint16_t>(w.y);
        for (int k = 0; k < r.n_frames; ++k) append_planes(crop(src.get(w.frame + k), w.x, w.y, size, size), r.payload);
        store.write_record(r);
      };
      for (const auto& w : windows) {
        emit(w, cache, meta, false);
        (w.label == Label::Positive ? summary.positives : summary.uncircled) += 1;
      }
      for (const auto& w : refs) emit(w, ref_cache, ref->meta(), true);
      summary.reference += refs.size();
    }
  }

  if (store.size() >= 4)
    assign_store_splits(store, o.seed);
  else if (store.size() > 0)
    warn("fewer than 4 records; split left unassigned");
  summary.counts = store.stats();

  out << "# " << job.header() << '\n';
  out << "type,negatives,positives\n";
  for (PeaType t : kAllPeaTypes)
    out << to_string(t) << ',' << summary.counts[index_of(t)][0] << ',' << summary.counts[index_of(t)][1] << '\n';
  out << "positives=" << summary.positives << " uncircled_negatives=" << summary.uncircled
      << " reference_negatives=" << summary.reference << " store=" << o.out_store.string() << '\n';
  return summary;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::filesystem::path store;
  std::filesystem::path out_dir;
  std::vector<PeaType> types;  // empty: every type present in the store
  Architecture arch = Architecture::ResNeXt;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<int> batch_size;
  std::optional<bool> augment;
  std::vector<int> lr_drops;  // empty: 50%, 75% and 90% of the epochs
  std::uint64_t seed = 1;

  /// Effective training settings: per-architecture defaults plus overrides.
  TrainConfig train_config() const {
    TrainConfig c = TrainConfig::for_arch(arch);
    if (epochs) {
      c.epochs = *epochs;
      c.lr_drops = {c.epochs / 2, c.epochs * 3 / 4, c.epochs * 9 / 10};
    }
    if (!lr_drops.empty()) c.lr_drops = lr_drops;
    if (lr) c.initial_lr = *lr;
    if (batch_size) c.batch_size = *batch_size;
    if (augment) c.augment = *augment;
    c.seed = seed;
    return c;
  }

  JobConfig job() const {
    return {"train",
            {{"store", base(store)},
             {"out_dir", base(out_dir)},
             {"types", type_names(types)},
             {"arch", to_string(arch)},
             {"train", train_config()}},
            seed};
  }
};

inline std::string checkpoint_name(PeaType t, Architecture a) {
  return std::string(to_string(t)) + "_" + std::string(to_string(a)) + ".peam";
}

inline std::string format_accuracy(const nn::ConfusionCounts& c) {
  const double a = nn::accuracy_or_nan(c);
  if (std::isnan(a)) return "undefined";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << a;
  return os.str();
}

inline std::string format_counts(const nn::ConfusionCounts& c) {
  return "TP=" + std::to_string(c.tp) + " FP=" + std::to_string(c.fp) + " TN=" + std::to_string(c.tn) +
         " FN=" + std::to_string(c.fn);
}

struct TrainOutcome {
  PeaType type;
  std::filesystem::path checkpoint;
  nn::ConfusionCounts train_counts;
  nn::ConfusionCounts test_counts;
};

inline std::vector<TrainOutcome> cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  const JobConfig job = o.job();
  const TrainConfig tc = o.train_config();
  try {
    tc.validate();
  } catch (const Error& e) {
    fail(ErrorCode::ConfigInvalid, e.what());
  }
  if (!std::filesystem::exists(o.store)) fail(ErrorCode::FileMissing, "store not found: " + o.store.string());
  const DatasetStore store(o.store);
  std::vector<PeaType> types = o.types;
  if (types.empty()) {
    const auto counts = store.stats();
    for (PeaType t : kAllPeaTypes) {
      const auto& c = counts[index_of(t)];
      if (c[0] && c[1])
        types.push_back(t);
      else if (c[0] || c[1])
        err << "warning: skipping " << to_string(t) << ": only one class in " << o.store.string() << '\n';
    }
    if (types.empty()) fail(ErrorCode::EmptyClass, "no PEA type in " + o.store.string() + " has both labels");
  }
  std::filesystem::create_directories(o.out_dir);
  std::vector<TrainOutcome> outcomes;
  out << "# " << job.header() << '\n';
  out << "type,arch,train_accuracy,test_accuracy,checkpoint\n";
  for (PeaType t : types) {
    auto [train, test] = load_split(store, t, o.seed);
    const auto stem = o.out_dir / checkpoint_name(t, o.arch);
    auto log_path = stem;
    log_path.replace_extension(".log.csv");
    std::ofstream log(log_path);
    if (!log) fail(ErrorCode::IoError, "cannot write " + log_path.string());
    log << "# " << job.header() << '\n';
    auto r = train_classifier(t, train, test, ModelConfig::for_type(o.arch, t), tc, &log);
    r.classifier->set_provenance(job.provenance());
    r.classifier->save(stem);
    out << to_string(t) << ',' << to_string(o.arch) << ',' << format_accuracy(r.train_counts) << ','
        << format_accuracy(r.test_counts) << ',' << stem.string() << std::endl;
    outcomes.push_back({t, stem, r.train_counts, r.test_counts});
  }
  return outcomes;
}

// ---------------------------------------------------------------------------
// eval

enum class SplitSelection { Train, Test, All };

inline SplitSelection parse_split_selection(std::string_view s) {
  if (s == "train") return SplitSelection::Train;
  if (s == "test") return SplitSelection::Test;
  if (s == "all") return SplitSelection::All;
  fail(ErrorCode::ConfigInvalid, "--split must be train, test or all, got '" + std::string(s) + "'");
}

/// Records of the detector's type from the selected split of a store.
inline nn::ConfusionCounts eval_detector(const PeaDetector& d, const DatasetStore& store, SplitSelection sel, std::uint64_t seed) {
  auto [train, test] = load_split(store, d.pea_type(), seed);
  std::vector<LabeledPatch> samples;
  if (sel != SplitSelection::Test) samples.insert(samples.end(), train.begin(), train.end());
  if (sel != SplitSelection::Train) samples.insert(samples.end(), test.begin(), test.end());
  if (samples.empty())
    fail(ErrorCode::EmptyClass, std::string("no ") + std::string(to_string(d.pea_type())) + " records in the selected split");
  return evaluate(d, samples);
}

struct EvalOptions {
  std::filesystem::path store;
  std::vector<std::filesystem::path> models;
  SplitSelection split = SplitSelection::Test;
  std::uint64_t seed = 1;
};

inline std::vector<std::pair<PeaType, nn::ConfusionCounts>> cmd_eval(const EvalOptions& o, std::ostream& out) {
  if (o.models.empty()) fail(ErrorCode::ConfigInvalid, "eval needs at least one --model");
  if (!std::filesystem::exists(o.store)) fail(ErrorCode::FileMissing, "store not found: " + o.store.string());
  const DatasetStore store(o.store);
  std::vector<std::pair<PeaType, nn::ConfusionCounts>> results;
  out << "type,accuracy,tp,fp,tn,fn,model\n";
  for (const auto& m : o.models) {
    const auto clf = PeaClassifier::load(m);
    const auto c = eval_detector(*clf, store, o.split, o.seed);
    out << to_string(clf->pea_type()) << ',' << format_accuracy(c) << ',' << c.tp << ',' << c.fp << ',' << c.tn << ','
        << c.fn << ',' << m.string() << '\n';
    results.emplace_back(clf->pea_type(), c);
  }
  return results;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeOptions {
  std::filesystem::path models_dir;
  Architecture arch = Architecture::ResNeXt;
  std::filesystem::path sequences;
  std::vector<std::string> names;  // empty: every compressed sequence
  bool include_reference = false;
  int grid = 72;
  std::filesystem::path out_dir;
  bool maps = false;

  JobConfig job() const {
    return {"analyze",
            {{"models_dir", base(models_dir)},
             {"arch", to_string(arch)},
             {"sequences", base(sequences)},
             {"names", names},
             {"include_reference", include_reference},
             {"grid", grid},
             {"out_dir", base(out_dir)},
             {"maps", maps}},
            0};
  }
};

struct LoadedBank {
  std::vector<std::unique_ptr<PeaClassifier>> classifiers;
  DetectorBank bank{};
};

inline LoadedBank load_bank(const std::filesystem::path& dir, Architecture arch) {
  LoadedBank b;
  b.classifiers.reserve(kNumPeaTypes);
  for (PeaType t : kAllPeaTypes) {
    const auto path = dir / checkpoint_name(t, arch);
    if (!std::filesystem::exists(path))
      fail(ErrorCode::MissingClassifier, std::string("no ") + std::string(to_string(t)) + " classifier at " + path.string());
    b.classifiers.push_back(PeaClassifier::load(path));
  }
  for (const auto& c : b.classifiers) b.bank[index_of(c->pea_type())] = c.get();
  require_bank(b.bank);
  return b;
}

struct AnalyzeOutcome {
  std::vector<IntensityReport> reports;
  QpTable table;
};

inline AnalyzeOutcome cmd_analyze(const AnalyzeOptions& o, std::ostream& out, std::ostream& err) {
  const JobConfig job = o.job();
  const auto bank = load_bank(o.models_dir, o.arch);
  const SequenceRegistry registry(o.sequences);
  std::vector<std::string> names = o.names;
  if (names.empty())
    for (const auto& n : registry.names())
      if (registry.get(n).meta().qp || o.include_reference) names.push_back(n);
  if (names.empty()) fail(ErrorCode::FileMissing, "no sequences to analyze in " + o.sequences.string());
  std::filesystem::create_directories(o.out_dir);
  if (o.maps) std::filesystem::create_directories(o.out_dir / "maps");

  AnalyzeOutcome res;
  for (const auto& name : names) {
    const auto& seq = registry.get(name);
    auto on_frame = [&](const FramePatterns& fp) {
      if (!o.maps || fp.frame % kTemporalSpan) return;
      char idx[16];
      std::snprintf(idx, sizeof idx, "%04d", fp.frame);
      const auto stem = o.out_dir / "maps" / (name + "_f" + idx);
      write_file(stem.string() + "_combined.png", encode_png(combined_map(fp), job.header()));
      for (PeaType t : kAllPeaTypes)
        write_file(stem.string() + "_" + std::string(to_string(t)) + ".png", encode_png(pea_map(fp, t), job.header()));
    };
    auto rep = sequence_intensity(bank.bank, seq, {o.grid}, on_frame);
    for (const auto& n : rep.notes) err << "note: " << name << ": " << n << '\n';
    res.reports.push_back(std::move(rep));
  }
  res.table = qp_report(res.reports);

  const std::vector<std::string> comments{job.header()};
  {
    std::ofstream csv(o.out_dir / "report.csv");
    write_report_csv(csv, res.reports, comments);
  }
  {
    std::ofstream csv(o.out_dir / "qp_report.csv");
    write_qp_csv(csv, res.table, comments);
  }
  {
    nlohmann::json j{{"provenance", job.provenance()}, {"sequences", nlohmann::json::array()}, {"qp_report", to_json(res.table)}};
    for (const auto& r : res.reports) j["sequences"].push_back(to_json(r));
    std::ofstream js(o.out_dir / "report.json");
    js << j.dump(2) << '\n';
  }
  out << "# " << job.header() << '\n';
  out << "sequence,qp,overall,spatial_mean,temporal_mean\n";
  for (const auto& r : res.reports)
    out << r.sequence << ',' << (r.qp ? std::to_string(*r.qp) : "") << ',' << r.overall << ',' << r.spatial_mean() << ','
        << r.temporal_mean() << '\n';
  out << "monotonicity=" << (res.table.monotonicity ? std::to_string(*res.table.monotonicity) : std::string("n/a")) << '\n';
  return res;
}

// ---------------------------------------------------------------------------
// extract

struct ExtractOptions {
  std::filesystem::path sequences;
  std::string sequence;
  int first = 0;
  int count = 1;
  std::filesystem::path out_dir;
  bool pgm = false;  // luma only
};

inline std::vector<std::filesystem::path> cmd_extract(const ExtractOptions& o, std::ostream& out) {
  const SequenceRegistry registry(o.sequences);
  const auto& seq = registry.get(o.sequence);
  if (o.count < 1) fail(ErrorCode::ConfigInvalid, "--count must be >= 1");
  std::filesystem::create_directories(o.out_dir);
  std::vector<std::filesystem::path> written;
  for (int i = o.first; i < o.first + o.count; ++i) {
    const auto f = seq.read_frame(i);
    char idx[16];
    std::snprintf(idx, sizeof idx, "%04d", i);
    auto path = o.out_dir / (o.sequence + "_f" + idx + (o.pgm ? ".pgm" : ".png"));
    if (o.pgm) {
      GrayImage g(f.width, f.height);
      g.pixels = f.y;
      write_pgm(path, g, {o.sequence + " frame " + std::to_string(i)});
    } else {
      write_file(path, encode_png(yuv_to_rgb(f)));
    }
    out << path.string() << '\n';
    written.push_back(path);
  }
  return written;
}

// ---------------------------------------------------------------------------
// serve / synth

struct ServeCommandOptions {
  std::filesystem::path sequences;
  std::filesystem::path annotations;
  ServeOptions serve;
};

inline void cmd_serve(const ServeCommandOptions& o, std::ostream& out) {
  const SequenceRegistry registry(o.sequences);
  AnnotationStore store(o.annotations);
  AnnotationService service(registry, store);
  httplib::Server server;
  out << "serving " << registry.names().size() << " sequence(s) on http://" << o.serve.host << ":" << o.serve.port << std::endl;
  serve(service, o.serve, server);
}

/// `annotations`, when given, is where the session file ends up.
inline synth::Fixture cmd_synth(const std::filesystem::path& dir, const synth::FixtureOptions& opt, std::ostream& out,
                                const std::optional<std::filesystem::path>& annotations = std::nullopt) {
  auto fx = synth::write_fixture(dir, opt);
  if (annotations && *annotations != fx.annotations) {
    if (annotations->has_parent_path()) std::filesystem::create_directories(annotations->parent_path());
    std::filesystem::rename(fx.annotations, *annotations);
    fx.annotations = *annotations;
  }
  for (const auto& m : fx.sequences) out << (dir / (m.name + ".yuv")).string() << '\n';
  out << fx.annotations.string() << '\n';
  return fx;
}

}  // namespace peakit::cli
