#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "peakit/error.hpp"
#include "peakit/pea_type.hpp"
#include "peakit/video_io.hpp"

namespace peakit {

/// An axis-aligned ellipse circled by one subject on one frame. A temporal
/// annotation marks the 10-frame segment starting at `frame`.
struct EllipseAnnotation {
  std::string sequence;
  int frame = 0;
  PeaType pea_type = PeaType::Blurring;
  double cx = 0, cy = 0;
  double rx = 1, ry = 1;
  std::string subject_id;
  bool temporal = false;

  int start_frame() const { return frame; }
  int end_frame() const { return temporal ? frame + kTemporalSpan : frame + 1; }
  bool covers(int f) const { return f >= start_frame() && f < end_frame(); }

  bool operator==(const EllipseAnnotation&) const = default;
};

struct FieldViolation {
  std::string field;
  std::string message;
};

/// Checks the annotation on its own. Returns the first violated invariant.
inline std::optional<FieldViolation> check_annotation(const EllipseAnnotation& a) {
  if (a.sequence.empty()) return FieldViolation{"sequence", "must not be empty"};
  if (a.frame < 0) return FieldViolation{"frame", "must be >= 0"};
  if (!std::isfinite(a.cx) || !std::isfinite(a.cy)) return FieldViolation{"cx", "center must be finite"};
  if (!(a.rx > 0) || !std::isfinite(a.rx)) return FieldViolation{"rx", "semi-axis rx must be > 0"};
  if (!(a.ry > 0) || !std::isfinite(a.ry)) return FieldViolation{"ry", "semi-axis ry must be > 0"};
  if (a.temporal && !is_temporal(a.pea_type))
    return FieldViolation{"temporal", "temporal marks are only valid for flickering or floating"};
  return std::nullopt;
}

/// Checks the annotation against the sequence it refers to.
inline std::optional<FieldViolation> check_annotation(const EllipseAnnotation& a, const SequenceMeta& meta) {
  if (auto v = check_annotation(a)) return v;
  if (a.frame >= meta.frame_count)
    return FieldViolation{"frame", "frame " + std::to_string(a.frame) + " outside [0, " +
                                       std::to_string(meta.frame_count) + ")"};
  if (a.cx < 0 || a.cx >= meta.width) return FieldViolation{"cx", "center x outside [0, " + std::to_string(meta.width) + ")"};
  if (a.cy < 0 || a.cy >= meta.height)
    return FieldViolation{"cy", "center y outside [0, " + std::to_string(meta.height) + ")"};
  if (a.temporal && a.frame + kTemporalSpan > meta.frame_count)
    return FieldViolation{"frame", "temporal span [" + std::to_string(a.frame) + ", " +
                                       std::to_string(a.frame + kTemporalSpan) + ") exceeds " +
                                       std::to_string(meta.frame_count) + " frames"};
  return std::nullopt;
}

struct RegionMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  RegionMask() = default;
  RegionMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}

  std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return bits[static_cast<std::size_t>(y) * width + x]; }

  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

  bool operator==(const RegionMask&) const = default;
};

/// Pixel-center inclusion test shared by rasterization and its callers.
inline bool ellipse_contains(const EllipseAnnotation& a, int px, int py) {
  const double dx = (px + 0.5 - a.cx) / a.rx;
  const double dy = (py + 0.5 - a.cy) / a.ry;
  return dx * dx + dy * dy <= 1.0;
}

inline RegionMask rasterize(const EllipseAnnotation& a, int width, int height) {
  RegionMask mask(width, height);
  // Bounding box with a one-pixel margin; the exact test decides every pixel inside it.
  const double x0 = std::floor(a.cx - a.rx) - 1, x1 = std::ceil(a.cx + a.rx) + 1;
  const double y0 = std::floor(a.cy - a.ry) - 1, y1 = std::ceil(a.cy + a.ry) + 1;
  const int xs = static_cast<int>(std::max(0.0, x0));
  const int xe = static_cast<int>(std::min<double>(width - 1, x1));
  const int ys = static_cast<int>(std::max(0.0, y0));
  const int ye = static_cast<int>(std::min<double>(height - 1, y1));
  for (int py = ys; py <= ye; ++py)
    for (int px = xs; px <= xe; ++px)
      if (ellipse_contains(a, px, py)) mask.at(px, py) = 1;
  return mask;
}

inline RegionMask union_masks(std::span<const RegionMask> masks, int width, int height) {
  RegionMask out(width, height);
  for (const auto& m : masks) {
    if (m.width != width || m.height != height)
      fail(ErrorCode::DimensionMismatch, "mask " + std::to_string(m.width) + "x" + std::to_string(m.height) +
                                             " does not match " + std::to_string(width) + "x" + std::to_string(height));
    for (std::size_t i = 0; i < out.bits.size(); ++i) out.bits[i] |= m.bits[i];
  }
  return out;
}

inline RegionMask union_masks(std::span<const RegionMask> masks) {
  if (masks.empty()) fail(ErrorCode::DimensionMismatch, "union of an empty list needs explicit dimensions");
  return union_masks(masks, masks.front().width, masks.front().height);
}

/// A pixel is set when at least `k` of the masks set it. k = 1 is the union.
inline RegionMask majority_masks(std::span<const RegionMask> masks, int k, int width, int height) {
  if (k < 1) fail(ErrorCode::InvalidArgument, "majority threshold must be >= 1");
  std::vector<int> votes(static_cast<std::size_t>(width) * height, 0);
  for (const auto& m : masks) {
    if (m.width != width || m.height != height) fail(ErrorCode::DimensionMismatch, "mask dimensions differ");
    for (std::size_t i = 0; i < votes.size(); ++i) votes[i] += m.bits[i];
  }
  RegionMask out(width, height);
  for (std::size_t i = 0; i < votes.size(); ++i) out.bits[i] = votes[i] >= k ? 1 : 0;
  return out;
}

// ---------------------------------------------------------------------------
// Line-delimited JSON persistence.

inline nlohmann::json to_json_object(const EllipseAnnotation& a) {
  return nlohmann::json{{"sequence", a.sequence}, {"frame", a.frame}, {"pea_type", std::string(to_string(a.pea_type))},
                        {"cx", a.cx},             {"cy", a.cy},       {"rx", a.rx},
                        {"ry", a.ry},             {"subject_id", a.subject_id}, {"temporal", a.temporal}};
}

/// ParseError raised for one named field of an annotation object.
class FieldError : public Error {
 public:
  FieldError(std::string field, std::string detail, const std::string& where)
      : Error(ErrorCode::ParseError, where + ": field '" + field + "': " + detail),
        field_(std::move(field)),
        detail_(std::move(detail)) {}

  const std::string& field() const noexcept { return field_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string field_;
  std::string detail_;
};

/// Decodes one annotation object. Errors name the offending field.
inline EllipseAnnotation annotation_from_json(const nlohmann::json& j, const std::string& where = "annotation") {
  auto field_error = [&](const std::string& field, const std::string& msg) { return FieldError(field, msg, where); };
  if (!j.is_object()) throw Error(ErrorCode::ParseError, where + ": expected a JSON object");
  EllipseAnnotation a;
  auto require = [&](const char* field) -> const nlohmann::json& {
    if (!j.contains(field)) throw field_error(field, "missing");
    return j.at(field);
  };
  const auto& seq = require("sequence");
  if (!seq.is_string()) throw field_error("sequence", "expected string");
  a.sequence = seq.get<std::string>();
  const auto& frame = require("frame");
  if (!frame.is_number_integer()) throw field_error("frame", "expected integer");
  a.frame = frame.get<int>();
  const auto& pt = require("pea_type");
  if (!pt.is_string()) throw field_error("pea_type", "expected string");
  auto parsed = try_parse_pea_type(pt.get<std::string>());
  if (!parsed)
    throw field_error("pea_type", "'" + pt.get<std::string>() +
                                      "' is not one of {blurring, blocking, ringing, color_bleeding, flickering, floating}");
  a.pea_type = *parsed;
  for (auto [name, dst] : {std::pair{"cx", &a.cx}, std::pair{"cy", &a.cy}, std::pair{"rx", &a.rx}, std::pair{"ry", &a.ry}}) {
    const auto& v = require(name);
    if (!v.is_number()) throw field_error(name, "expected number");
    *dst = v.get<double>();
  }
  if (j.contains("subject_id")) {
    if (!j["subject_id"].is_string()) throw field_error("subject_id", "expected string");
    a.subject_id = j["subject_id"].get<std::string>();
  }
  if (j.contains("temporal")) {
    if (!j["temporal"].is_boolean()) throw field_error("temporal", "expected boolean");
    a.temporal = j["temporal"].get<bool>();
  }
  if (auto v = check_annotation(a)) throw field_error(v->field, v->message);
  return a;
}

inline std::string to_json_line(const EllipseAnnotation& a) { return to_json_object(a).dump(); }

inline void save_session(std::ostream& out, std::span<const EllipseAnnotation> anns) {
  for (const auto& a : anns) {
    if (auto v = check_annotation(a)) fail(ErrorCode::InvalidArgument, "field '" + v->field + "': " + v->message);
    out << to_json_line(a) << '\n';
  }
}

inline void save_session(const std::filesystem::path& path, std::span<const EllipseAnnotation> anns) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  save_session(out, anns);
}

inline std::vector<EllipseAnnotation> load_session(std::istream& in, const std::string& source = "session") {
  std::vector<EllipseAnnotation> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, source + " line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(annotation_from_json(j, source + " line " + std::to_string(lineno)));
  }
  return out;
}

inline std::vector<EllipseAnnotation> load_session(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::FileMissing, "annotation file not found: " + path.string());
  return load_session(in, path.string());
}

/// Append-only annotation file shared by concurrent writers. Each append is
/// flushed and synced before returning.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path path) : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) cache_ = load_session(path_);
  }

  void append(const EllipseAnnotation& a) {
    if (auto v = check_annotation(a)) fail(ErrorCode::InvalidArgument, "field '" + v->field + "': " + v->message);
    const std::string line = to_json_line(a) + "\n";
    std::lock_guard lock(mutex_);
    detail::FileDescriptor fd(::open(path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644));
    if (!fd) fail(ErrorCode::IoError, "cannot open " + path_.string());
    std::size_t done = 0;
    while (done < line.size()) {
      const ssize_t n = ::write(fd.get(), line.data() + done, line.size() - done);
      if (n <= 0) fail(ErrorCode::IoError, "append failed: " + path_.string());
      done += static_cast<std::size_t>(n);
    }
    ::fsync(fd.get());
    cache_.push_back(a);
  }

  std::vector<EllipseAnnotation> snapshot() const {
    std::lock_guard lock(mutex_);
    return cache_;
  }

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::vector<EllipseAnnotation> cache_;
};

}  // namespace peakit
