#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "peakit/classifier.hpp"
#include "peakit/error.hpp"
#include "peakit/image_io.hpp"
#include "peakit/pea_type.hpp"
#include "peakit/video_io.hpp"

namespace peakit {

/// Six presence flags in the fixed order blurring, blocking, ringing,
/// color_bleeding, flickering, floating.
struct PeaPattern {
  std::array<bool, kNumPeaTypes> flags{};

  bool& operator[](PeaType t) { return flags[index_of(t)]; }
  bool operator[](PeaType t) const { return flags[index_of(t)]; }

  int popcount() const { return static_cast<int>(std::count(flags.begin(), flags.end(), true)); }

  std::string str() const {
    std::string s;
    for (bool f : flags) s += f ? '1' : '0';
    return s;
  }

  static PeaPattern from_string(std::string_view s) {
    if (s.size() != kNumPeaTypes || s.find_first_not_of("01") != std::string_view::npos)
      fail(ErrorCode::ParseError, "PEA pattern must be 6 characters of 0/1, got '" + std::string(s) + "'");
    PeaPattern p;
    for (std::size_t i = 0; i < kNumPeaTypes; ++i) p.flags[i] = s[i] == '1';
    return p;
  }

  bool operator==(const PeaPattern&) const = default;
};

inline double patch_intensity(const PeaPattern& p) { return p.popcount() / static_cast<double>(kNumPeaTypes); }

/// One detector per PEA type, indexed by index_of(type).
using DetectorBank = std::array<const PeaDetector*, kNumPeaTypes>;

inline void require_bank(const DetectorBank& bank) {
  for (PeaType t : kAllPeaTypes) {
    const auto* d = bank[index_of(t)];
    if (!d) fail(ErrorCode::MissingClassifier, std::string("no classifier loaded for ") + std::string(to_string(t)));
    if (d->pea_type() != t)
      fail(ErrorCode::InvalidArgument, std::string("classifier in the ") + std::string(to_string(t)) + " slot is for " +
                                           std::string(to_string(d->pea_type())));
  }
}

struct CellGrid {
  int grid = 72;
  int cols = 0;
  int rows = 0;

  int cells() const { return cols * rows; }
};

inline CellGrid grid_for(int width, int height, int grid) {
  if (grid <= 0 || grid % 2) fail(ErrorCode::InvalidArgument, "grid size must be positive and even");
  return {grid, width / grid, height / grid};
}

/// Top-left corner of a size x size window centered on a grid cell, moved
/// inside the frame when it overhangs and rounded to even coordinates.
/// Empty when the window is larger than the frame.
inline std::optional<std::pair<int, int>> window_origin(int col, int row, int grid, int size, int width, int height) {
  if (size > width || size > height) return std::nullopt;
  auto place = [&](int cell, int limit) {
    int o = cell * grid + (grid - size) / 2;
    o = std::clamp(o, 0, limit - size);
    return o - (o & 1);
  };
  return std::make_pair(place(col, width), place(row, height));
}

/// Flags of one detector over a grid: 1 / 0, or -1 where its window does not fit.
inline std::vector<int> detect_grid(const PeaDetector& d, std::span<const FrameBuffer> frames, const CellGrid& g) {
  const int size = window_size(d.pea_type());
  std::vector<int> out(static_cast<std::size_t>(g.cells()), -1);
  if (frames.empty()) return out;
  const int W = frames[0].width, H = frames[0].height;
  std::vector<std::vector<PatchPayload>> patches;
  std::vector<std::size_t> where;
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) {
      const auto o = window_origin(c, r, g.grid, size, W, H);
      if (!o) continue;
      std::vector<PatchPayload> p;
      for (const auto& f : frames) p.push_back(crop(f, o->first, o->second, size, size));
      patches.push_back(std::move(p));
      where.push_back(static_cast<std::size_t>(r) * g.cols + c);
    }
  const auto preds = d.predict_batch(patches);
  for (std::size_t i = 0; i < preds.size(); ++i) out[where[i]] = preds[i].positive ? 1 : 0;
  return out;
}

/// Pattern of one grid cell given the cell-sized patch and, for temporal
/// types, its 10-frame cuboid (empty when unavailable). Each classifier sees
/// its own window size centered in the cell.
inline PeaPattern patch_pattern(const DetectorBank& bank, const PatchPayload& cell, std::span<const PatchPayload> cuboid) {
  require_bank(bank);
  if (cell.width != cell.height) fail(ErrorCode::InvalidArgument, "grid cells are square");
  const CellGrid g{cell.width, 1, 1};
  PeaPattern p;
  for (PeaType t : kAllPeaTypes) {
    std::vector<int> flag;
    if (is_temporal(t)) {
      if (cuboid.size() != static_cast<std::size_t>(kTemporalSpan)) continue;
      flag = detect_grid(*bank[index_of(t)], cuboid, g);
    } else {
      flag = detect_grid(*bank[index_of(t)], std::span<const FrameBuffer>(&cell, 1), g);
    }
    p[t] = flag[0] == 1;
  }
  return p;
}

/// Per-cell patterns of one frame.
struct FramePatterns {
  int frame = 0;
  CellGrid grid;
  std::vector<PeaPattern> cells;
};

/// One grayscale pixel per cell: 255 where `type` fired.
inline GrayImage pea_map(const FramePatterns& fp, PeaType type) {
  GrayImage img(fp.grid.cols, fp.grid.rows);
  for (std::size_t i = 0; i < fp.cells.size(); ++i) img.pixels[i] = fp.cells[i][type] ? 255 : 0;
  return img;
}

/// One grayscale pixel per cell: round(patch intensity * 255).
inline GrayImage combined_map(const FramePatterns& fp) {
  GrayImage img(fp.grid.cols, fp.grid.rows);
  for (std::size_t i = 0; i < fp.cells.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(patch_intensity(fp.cells[i]) * 255.0));
  return img;
}

/// Map of a single detector on a frame (spatial) or a 10-frame cuboid (temporal).
inline GrayImage pea_map(const PeaDetector& d, std::span<const FrameBuffer> frames, int grid = 72) {
  if (frames.empty()) fail(ErrorCode::InvalidArgument, "pea_map needs at least one frame");
  const auto g = grid_for(frames[0].width, frames[0].height, grid);
  const auto flags = detect_grid(d, frames, g);
  GrayImage img(g.cols, g.rows);
  for (std::size_t i = 0; i < flags.size(); ++i) img.pixels[i] = flags[i] == 1 ? 255 : 0;
  return img;
}

struct IntensityReport {
  std::string sequence;
  std::string reference;  // groups compressed versions of one source
  std::optional<int> qp;
  std::optional<CodingStructure> coding_structure;
  int grid = 72;
  int cols = 0;
  int rows = 0;
  int frames_evaluated = 0;
  int spans = 0;
  std::size_t patches = 0;
  std::array<double, kNumPeaTypes> rates{};
  double overall = 0;
  std::array<std::size_t, kNumPeaTypes> unevaluable{};
  bool temporal_available = true;
  std::vector<std::string> notes;

  double spatial_mean() const {
    double s = 0;
    int n = 0;
    for (PeaType t : kAllPeaTypes)
      if (!is_temporal(t)) s += rates[index_of(t)], ++n;
    return s / n;
  }
  double temporal_mean() const {
    double s = 0;
    int n = 0;
    for (PeaType t : kAllPeaTypes)
      if (is_temporal(t)) s += rates[index_of(t)], ++n;
    return s / n;
  }
};

struct AnalysisOptions {
  int grid = 72;
};

/// Mean PEA intensity over all non-overlapping grid cells of all evaluated
/// frames. Frames are consumed in complete 10-frame spans; temporal flags of a
/// span apply to each of its frames. Clips shorter than one span are analysed
/// frame by frame with temporal flags absent.
inline IntensityReport sequence_intensity(const DetectorBank& bank, const SequenceReader& seq, const AnalysisOptions& opt = {},
                                          const std::function<void(const FramePatterns&)>& on_frame = {}) {
  require_bank(bank);
  const auto& meta = seq.meta();
  IntensityReport rep;
  rep.sequence = meta.name;
  rep.reference = meta.reference.value_or(meta.name);
  rep.qp = meta.qp;
  rep.coding_structure = meta.coding_structure;
  const CellGrid g = grid_for(meta.width, meta.height, opt.grid);
  rep.grid = g.grid;
  rep.cols = g.cols;
  rep.rows = g.rows;
  const int F = seq.frame_count();
  std::vector<std::pair<int, int>> chunks;  // [start, length)
  if (F >= kTemporalSpan) {
    rep.spans = F / kTemporalSpan;
    for (int s = 0; s < rep.spans; ++s) chunks.emplace_back(s * kTemporalSpan, kTemporalSpan);
    if (F % kTemporalSpan)
      rep.notes.push_back("last " + std::to_string(F % kTemporalSpan) + " frame(s) outside a complete 10-frame span were skipped");
  } else {
    rep.temporal_available = false;
    rep.notes.push_back(std::string(error_code_name(ErrorCode::SequenceTooShort)) + ": " + std::to_string(F) +
                        " frame(s) < 10, temporal flags absent");
    for (int f = 0; f < F; ++f) chunks.emplace_back(f, 1);
  }
  if (g.cells() == 0) rep.notes.push_back("frame smaller than one grid cell; nothing evaluated");

  std::array<std::uint64_t, kNumPeaTypes> sums{};
  std::uint64_t flag_sum = 0;  // integer counts keep constant inputs exact
  for (const auto& [start, len] : chunks) {
    std::vector<FrameBuffer> frames;
    for (int k = 0; k < len; ++k) frames.push_back(seq.read_frame(start + k));
    std::array<std::vector<int>, kNumPeaTypes> temporal_flags;
    for (PeaType t : kAllPeaTypes)
      if (is_temporal(t)) {
        if (len == kTemporalSpan) {
          temporal_flags[index_of(t)] = detect_grid(*bank[index_of(t)], frames, g);
          for (int v : temporal_flags[index_of(t)]) rep.unevaluable[index_of(t)] += (v < 0) * kTemporalSpan;
        } else {
          temporal_flags[index_of(t)].assign(static_cast<std::size_t>(g.cells()), 0);
        }
      }
    for (int k = 0; k < len; ++k) {
      FramePatterns fp{start + k, g, std::vector<PeaPattern>(static_cast<std::size_t>(g.cells()))};
      for (PeaType t : kAllPeaTypes) {
        std::vector<int> flags;
        if (is_temporal(t)) {
          flags = temporal_flags[index_of(t)];
        } else {
          flags = detect_grid(*bank[index_of(t)], std::span<const FrameBuffer>(&frames[static_cast<std::size_t>(k)], 1), g);
          for (int v : flags) rep.unevaluable[index_of(t)] += v < 0;
        }
        for (std::size_t i = 0; i < flags.size(); ++i) fp.cells[i][t] = flags[i] == 1;
      }
      for (const auto& p : fp.cells) {
        for (std::size_t i = 0; i < kNumPeaTypes; ++i) sums[i] += p.flags[i];
        flag_sum += static_cast<std::uint64_t>(p.popcount());
      }
      rep.patches += fp.cells.size();
      ++rep.frames_evaluated;
      if (on_frame) on_frame(fp);
    }
  }
  if (rep.patches) {
    for (std::size_t i = 0; i < kNumPeaTypes; ++i) rep.rates[i] = static_cast<double>(sums[i]) / static_cast<double>(rep.patches);
    rep.overall = static_cast<double>(flag_sum) / static_cast<double>(kNumPeaTypes * rep.patches);
  }
  for (PeaType t : kAllPeaTypes)
    if (rep.unevaluable[index_of(t)])
      rep.notes.push_back(std::to_string(rep.unevaluable[index_of(t)]) + " " + std::string(to_string(t)) +
                          " window(s) larger than the frame counted as negative");
  return rep;
}

struct QpRow {
  std::string group;
  std::optional<CodingStructure> coding_structure;
  std::optional<int> qp;
  std::size_t reports = 0;
  std::array<double, kNumPeaTypes> rates{};
  double spatial_mean = 0;
  double temporal_mean = 0;
  double overall = 0;
};

struct QpTable {
  std::vector<QpRow> rows;  // sorted by group, structure, qp
  std::size_t pairs_checked = 0;
  std::size_t pairs_monotone = 0;
  /// Fraction of (sequence, structure, type) series that never decrease as qp
  /// grows; empty when no series has two qp values.
  std::optional<double> monotonicity;
};

/// Averages reports per (source sequence, coding structure, qp).
inline QpTable qp_report(std::span<const IntensityReport> reports) {
  using Key = std::tuple<std::string, int, int>;  // group, structure (-1 none), qp (-1 none)
  std::map<Key, QpRow> rows;
  for (const auto& r : reports) {
    const Key k{r.reference, r.coding_structure ? static_cast<int>(*r.coding_structure) : -1, r.qp.value_or(-1)};
    auto& row = rows[k];
    row.group = r.reference;
    row.coding_structure = r.coding_structure;
    row.qp = r.qp;
    ++row.reports;
    for (std::size_t i = 0; i < kNumPeaTypes; ++i) row.rates[i] += r.rates[i];
    row.spatial_mean += r.spatial_mean();
    row.temporal_mean += r.temporal_mean();
    row.overall += r.overall;
  }
  QpTable table;
  for (auto& [k, row] : rows) {
    const double n = static_cast<double>(row.reports);
    for (auto& v : row.rates) v /= n;
    row.spatial_mean /= n;
    row.temporal_mean /= n;
    row.overall /= n;
    table.rows.push_back(row);
  }
  for (std::size_t i = 0; i < table.rows.size();) {
    std::size_t j = i;
    std::vector<const QpRow*> series;
    while (j < table.rows.size() && table.rows[j].group == table.rows[i].group &&
           table.rows[j].coding_structure == table.rows[i].coding_structure) {
      if (table.rows[j].qp) series.push_back(&table.rows[j]);
      ++j;
    }
    if (series.size() >= 2)
      for (std::size_t t = 0; t < kNumPeaTypes; ++t) {
        bool monotone = true;
        for (std::size_t s = 1; s < series.size(); ++s) monotone &= series[s]->rates[t] >= series[s - 1]->rates[t];
        ++table.pairs_checked;
        table.pairs_monotone += monotone;
      }
    i = j;
  }
  if (table.pairs_checked)
    table.monotonicity = static_cast<double>(table.pairs_monotone) / static_cast<double>(table.pairs_checked);
  return table;
}

// ---------------------------------------------------------------------------
// Report output

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline std::string opt_qp(const std::optional<int>& qp) { return qp ? std::to_string(*qp) : ""; }

inline std::string opt_structure(const std::optional<CodingStructure>& c) { return c ? std::string(to_string(*c)) : ""; }

}  // namespace detail

inline constexpr const char* kReportCsvHeader = "sequence,qp,structure,type,rate,spatial_mean,temporal_mean,overall,patches";

/// Long form: one row per report and PEA type.
inline void write_report_csv(std::ostream& out, std::span<const IntensityReport> reports,
                             const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) out << "# " << c << '\n';
  out << kReportCsvHeader << '\n';
  for (const auto& r : reports)
    for (PeaType t : kAllPeaTypes)
      out << r.sequence << ',' << detail::opt_qp(r.qp) << ',' << detail::opt_structure(r.coding_structure) << ','
          << to_string(t) << ',' << detail::fmt(r.rates[index_of(t)]) << ',' << detail::fmt(r.spatial_mean()) << ','
          << detail::fmt(r.temporal_mean()) << ',' << detail::fmt(r.overall) << ',' << r.patches << '\n';
}

inline constexpr const char* kQpCsvHeader = "sequence,structure,qp,type,rate,spatial_mean,temporal_mean,overall";

inline void write_qp_csv(std::ostream& out, const QpTable& table, const std::vector<std::string>& comments = {}) {
  for (const auto& c : comments) out << "# " << c << '\n';
  out << "# monotonicity=" << (table.monotonicity ? detail::fmt(*table.monotonicity) : std::string("n/a")) << '\n';
  out << kQpCsvHeader << '\n';
  for (const auto& r : table.rows)
    for (PeaType t : kAllPeaTypes)
      out << r.group << ',' << detail::opt_structure(r.coding_structure) << ',' << detail::opt_qp(r.qp) << ','
          << to_string(t) << ',' << detail::fmt(r.rates[index_of(t)]) << ',' << detail::fmt(r.spatial_mean) << ','
          << detail::fmt(r.temporal_mean) << ',' << detail::fmt(r.overall) << '\n';
}

inline nlohmann::json to_json(const IntensityReport& r) {
  nlohmann::json rates;
  for (PeaType t : kAllPeaTypes) rates[to_string(t)] = r.rates[index_of(t)];
  return {{"sequence", r.sequence},
          {"reference", r.reference},
          {"qp", r.qp ? nlohmann::json(*r.qp) : nlohmann::json(nullptr)},
          {"coding_structure", r.coding_structure ? nlohmann::json(detail::opt_structure(r.coding_structure)) : nlohmann::json(nullptr)},
          {"grid", {{"size", r.grid}, {"cols", r.cols}, {"rows", r.rows}}},
          {"frames_evaluated", r.frames_evaluated},
          {"spans", r.spans},
          {"patches", r.patches},
          {"rates", rates},
          {"spatial_mean", r.spatial_mean()},
          {"temporal_mean", r.temporal_mean()},
          {"overall", r.overall},
          {"temporal_available", r.temporal_available},
          {"notes", r.notes}};
}

inline nlohmann::json to_json(const QpTable& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : t.rows) {
    nlohmann::json rates;
    for (PeaType p : kAllPeaTypes) rates[to_string(p)] = r.rates[index_of(p)];
    rows.push_back({{"sequence", r.group},
                    {"coding_structure", r.coding_structure ? nlohmann::json(detail::opt_structure(r.coding_structure)) : nlohmann::json(nullptr)},
                    {"qp", r.qp ? nlohmann::json(*r.qp) : nlohmann::json(nullptr)},
                    {"reports", r.reports},
                    {"rates", rates},
                    {"spatial_mean", r.spatial_mean},
                    {"temporal_mean", r.temporal_mean},
                    {"overall", r.overall}});
  }
  return {{"rows", rows},
          {"series_checked", t.pairs_checked},
          {"series_monotone", t.pairs_monotone},
          {"monotonicity", t.monotonicity ? nlohmann::json(*t.monotonicity) : nlohmann::json("n/a")}};
}

}  // namespace peakit
