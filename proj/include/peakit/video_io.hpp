#pragma once

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "peakit/error.hpp"

namespace peakit {

enum class CodingStructure { AllIntra, RandomAccess, LowDelay, LowDelayP };

inline std::string_view to_string(CodingStructure c) {
  switch (c) {
    case CodingStructure::AllIntra: return "all_intra";
    case CodingStructure::RandomAccess: return "random_access";
    case CodingStructure::LowDelay: return "low_delay";
    case CodingStructure::LowDelayP: return "low_delay_p";
  }
  return "unknown";
}

inline CodingStructure parse_coding_structure(std::string_view s) {
  for (auto c : {CodingStructure::AllIntra, CodingStructure::RandomAccess, CodingStructure::LowDelay,
                 CodingStructure::LowDelayP})
    if (to_string(c) == s) return c;
  fail(ErrorCode::ParseError, "coding_structure '" + std::string(s) +
                                  "' is not one of {all_intra, random_access, low_delay, low_delay_p}");
}

/// Describes one raw sequence. `qp` is absent for an uncompressed reference;
/// `reference` names the reference sequence a compressed sequence was coded from.
struct SequenceMeta {
  std::string name;
  std::string class_label;
  int width = 0;
  int height = 0;
  int frame_count = 0;
  double frame_rate = 30.0;
  std::optional<int> qp;
  std::optional<CodingStructure> coding_structure;
  std::optional<std::string> reference;
  int bit_depth = 8;

  std::size_t frame_bytes() const {
    return static_cast<std::size_t>(width) * height * 3 / 2;
  }

  void validate() const {
    if (width <= 0 || height <= 0)
      fail(ErrorCode::InvalidArgument, "sequence '" + name + "': width and height must be positive");
    if (width % 2 != 0 || height % 2 != 0)
      fail(ErrorCode::OddGeometry, "sequence '" + name + "': 4:2:0 needs even width and height, got " +
                                       std::to_string(width) + "x" + std::to_string(height));
    if (bit_depth != 8)
      fail(ErrorCode::UnsupportedFormat,
           "sequence '" + name + "': only 8-bit samples are supported, got " + std::to_string(bit_depth));
    if (qp && (*qp < 0 || *qp > 51))
      fail(ErrorCode::InvalidArgument, "sequence '" + name + "': qp " + std::to_string(*qp) + " outside 0..51");
  }
};

inline void to_json(nlohmann::json& j, const SequenceMeta& m) {
  j = nlohmann::json{{"name", m.name},         {"class", m.class_label},
                     {"width", m.width},       {"height", m.height},
                     {"frame_count", m.frame_count}, {"frame_rate", m.frame_rate},
                     {"bit_depth", m.bit_depth}};
  j["qp"] = m.qp ? nlohmann::json(*m.qp) : nlohmann::json(nullptr);
  j["coding_structure"] =
      m.coding_structure ? nlohmann::json(std::string(to_string(*m.coding_structure))) : nlohmann::json(nullptr);
  if (m.reference) j["reference"] = *m.reference;
}

inline void from_json(const nlohmann::json& j, SequenceMeta& m) {
  try {
    m.name = j.at("name").get<std::string>();
    m.class_label = j.value("class", std::string());
    m.width = j.at("width").get<int>();
    m.height = j.at("height").get<int>();
    m.frame_count = j.value("frame_count", 0);
    m.frame_rate = j.value("frame_rate", 30.0);
    m.bit_depth = j.value("bit_depth", 8);
    m.qp.reset();
    if (j.contains("qp") && !j["qp"].is_null()) m.qp = j["qp"].get<int>();
    m.coding_structure.reset();
    if (j.contains("coding_structure") && !j["coding_structure"].is_null())
      m.coding_structure = parse_coding_structure(j["coding_structure"].get<std::string>());
    m.reference.reset();
    if (j.contains("reference") && !j["reference"].is_null()) m.reference = j["reference"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("sequence metadata: ") + e.what());
  }
}

/// Parses the `name_WxH_fps` naming convention (the fps part is optional).
inline std::optional<SequenceMeta> meta_from_filename(const std::filesystem::path& path) {
  static const std::regex pattern(R"(^(.+?)_(\d+)x(\d+)(?:_(\d+(?:\.\d+)?)(?:fps)?)?$)");
  std::smatch m;
  const std::string stem = path.stem().string();
  if (!std::regex_match(stem, m, pattern)) return std::nullopt;
  SequenceMeta meta;
  meta.name = stem;
  meta.width = std::stoi(m[2]);
  meta.height = std::stoi(m[3]);
  if (m[4].matched) meta.frame_rate = std::stod(m[4]);
  return meta;
}

/// One 8-bit 4:2:0 picture (or a rectangular piece of one).
struct FrameBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> y;
  std::vector<std::uint8_t> u;
  std::vector<std::uint8_t> v;

  FrameBuffer() = default;
  FrameBuffer(int w, int h)
      : width(w),
        height(h),
        y(static_cast<std::size_t>(w) * h),
        u(static_cast<std::size_t>(w / 2) * (h / 2)),
        v(static_cast<std::size_t>(w / 2) * (h / 2)) {}

  int chroma_width() const { return width / 2; }
  int chroma_height() const { return height / 2; }
  std::size_t byte_size() const { return y.size() + u.size() + v.size(); }

  std::uint8_t luma(int x, int yy) const { return y[static_cast<std::size_t>(yy) * width + x]; }

  bool operator==(const FrameBuffer&) const = default;
};

/// A cropped region carries the same three-plane layout as a frame.
using PatchPayload = FrameBuffer;

/// Serializes planes Y, U, V back to back.
inline void append_planes(const FrameBuffer& f, std::vector<std::uint8_t>& out) {
  out.insert(out.end(), f.y.begin(), f.y.end());
  out.insert(out.end(), f.u.begin(), f.u.end());
  out.insert(out.end(), f.v.begin(), f.v.end());
}

inline FrameBuffer planes_from_bytes(std::span<const std::uint8_t> bytes, int w, int h) {
  FrameBuffer f(w, h);
  if (bytes.size() != f.byte_size())
    fail(ErrorCode::SizeMismatch, "expected " + std::to_string(f.byte_size()) + " bytes for " + std::to_string(w) +
                                      "x" + std::to_string(h) + " planes, got " + std::to_string(bytes.size()));
  auto it = bytes.begin();
  std::copy_n(it, f.y.size(), f.y.begin());
  it += static_cast<std::ptrdiff_t>(f.y.size());
  std::copy_n(it, f.u.size(), f.u.begin());
  it += static_cast<std::ptrdiff_t>(f.u.size());
  std::copy_n(it, f.v.size(), f.v.begin());
  return f;
}

/// Copies the (x, y, w, h) rectangle of every plane. Coordinates and extents
/// must be even so the chroma rectangle lines up exactly.
inline PatchPayload crop(const FrameBuffer& frame, int x, int y, int w, int h) {
  if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > frame.width || y + h > frame.height)
    fail(ErrorCode::OutOfBounds, "crop (" + std::to_string(x) + "," + std::to_string(y) + "," + std::to_string(w) +
                                     "," + std::to_string(h) + ") outside " + std::to_string(frame.width) + "x" +
                                     std::to_string(frame.height));
  if ((x | y | w | h) & 1)
    fail(ErrorCode::OddGeometry, "crop geometry must be even for 4:2:0 chroma alignment");
  PatchPayload out(w, h);
  for (int r = 0; r < h; ++r)
    std::copy_n(frame.y.begin() + static_cast<std::ptrdiff_t>(y + r) * frame.width + x, w,
                out.y.begin() + static_cast<std::ptrdiff_t>(r) * w);
  const int cw = frame.chroma_width();
  const int cx = x / 2, cy = y / 2, ow = w / 2, oh = h / 2;
  for (int r = 0; r < oh; ++r) {
    const auto src = static_cast<std::ptrdiff_t>(cy + r) * cw + cx;
    std::copy_n(frame.u.begin() + src, ow, out.u.begin() + static_cast<std::ptrdiff_t>(r) * ow);
    std::copy_n(frame.v.begin() + src, ow, out.v.begin() + static_cast<std::ptrdiff_t>(r) * ow);
  }
  return out;
}

namespace detail {

class FileDescriptor {
 public:
  FileDescriptor() = default;
  explicit FileDescriptor(int fd) : fd_(fd) {}
  FileDescriptor(const FileDescriptor&) = delete;
  FileDescriptor& operator=(const FileDescriptor&) = delete;
  FileDescriptor(FileDescriptor&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  FileDescriptor& operator=(FileDescriptor&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  ~FileDescriptor() { reset(); }

  int get() const { return fd_; }
  explicit operator bool() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

/// Positional read of exactly `out.size()` bytes; returns false on short read.
inline bool pread_exact(int fd, std::span<std::uint8_t> out, std::uint64_t offset) {
  std::size_t done = 0;
  while (done < out.size()) {
    const ssize_t n = ::pread(fd, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
    if (n <= 0) return false;
    done += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace detail

/// Random-access reader over a headerless planar 4:2:0 file. Reads use
/// pread on a shared descriptor, so one reader can serve many threads.
class SequenceReader {
 public:
  SequenceReader(const std::filesystem::path& path, SequenceMeta meta) : path_(path), meta_(std::move(meta)) {
    meta_.validate();
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path_, ec))
      fail(ErrorCode::FileMissing, "sequence file not found: " + path_.string());
    const auto size = std::filesystem::file_size(path_, ec);
    if (ec) fail(ErrorCode::IoError, "cannot stat " + path_.string());
    const auto fb = meta_.frame_bytes();
    if (size == 0 || size % fb != 0)
      fail(ErrorCode::SizeMismatch, path_.string() + ": size " + std::to_string(size) + " is not a multiple of " +
                                        std::to_string(fb) + " bytes per " + std::to_string(meta_.width) + "x" +
                                        std::to_string(meta_.height) + " frame (wrong resolution?)");
    meta_.frame_count = static_cast<int>(size / fb);
    fd_ = detail::FileDescriptor(::open(path_.c_str(), O_RDONLY | O_CLOEXEC));
    if (!fd_) fail(ErrorCode::IoError, "cannot open " + path_.string());
  }

  const SequenceMeta& meta() const { return meta_; }
  const std::filesystem::path& path() const { return path_; }
  int frame_count() const { return meta_.frame_count; }
  int width() const { return meta_.width; }
  int height() const { return meta_.height; }

  FrameBuffer read_frame(int index) const {
    if (index < 0 || index >= meta_.frame_count)
      fail(ErrorCode::IndexOutOfRange, "frame " + std::to_string(index) + " of '" + meta_.name + "' outside [0, " +
                                           std::to_string(meta_.frame_count) + ")");
    FrameBuffer f(meta_.width, meta_.height);
    const std::uint64_t base = static_cast<std::uint64_t>(index) * meta_.frame_bytes();
    if (!detail::pread_exact(fd_.get(), f.y, base) || !detail::pread_exact(fd_.get(), f.u, base + f.y.size()) ||
        !detail::pread_exact(fd_.get(), f.v, base + f.y.size() + f.u.size()))
      fail(ErrorCode::IoError, "short read of frame " + std::to_string(index) + " in " + path_.string());
    return f;
  }

 private:
  std::filesystem::path path_;
  SequenceMeta meta_;
  detail::FileDescriptor fd_;
};

inline SequenceReader open_sequence(const std::filesystem::path& path, const SequenceMeta& meta) {
  return SequenceReader(path, meta);
}

/// Appends frames to a raw 4:2:0 file.
class SequenceWriter {
 public:
  explicit SequenceWriter(const std::filesystem::path& path, bool append = false)
      : out_(path, std::ios::binary | (append ? std::ios::app : std::ios::trunc)), path_(path) {
    if (!out_) fail(ErrorCode::IoError, "cannot write " + path.string());
  }

  void write(const FrameBuffer& f) {
    if (f.width % 2 || f.height % 2) fail(ErrorCode::OddGeometry, "frame dimensions must be even");
    out_.write(reinterpret_cast<const char*>(f.y.data()), static_cast<std::streamsize>(f.y.size()));
    out_.write(reinterpret_cast<const char*>(f.u.data()), static_cast<std::streamsize>(f.u.size()));
    out_.write(reinterpret_cast<const char*>(f.v.data()), static_cast<std::streamsize>(f.v.size()));
    if (!out_) fail(ErrorCode::IoError, "write failed: " + path_.string());
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
  std::filesystem::path path_;
};

inline void save_meta(const std::filesystem::path& path, const SequenceMeta& meta) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << nlohmann::json(meta).dump(2) << "\n";
}

inline SequenceMeta load_meta(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::FileMissing, "metadata sidecar not found: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return j.get<SequenceMeta>();
}

/// Resolves sequence names to files in one directory. A `<name>.json` sidecar
/// next to `<name>.yuv` wins; otherwise the file name convention is parsed.
class SequenceRegistry {
 public:
  SequenceRegistry() = default;

  explicit SequenceRegistry(const std::filesystem::path& dir) : dir_(dir) {
    std::error_code ec;
    if (!std::filesystem::is_directory(dir, ec)) fail(ErrorCode::FileMissing, "sequence directory not found: " + dir.string());
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".yuv") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& yuv : files) {
      auto sidecar = yuv;
      sidecar.replace_extension(".json");
      std::optional<SequenceMeta> meta;
      if (std::filesystem::exists(sidecar))
        meta = load_meta(sidecar);
      else
        meta = meta_from_filename(yuv);
      if (!meta) continue;
      add(yuv, *meta);
    }
  }

  void add(const std::filesystem::path& file, SequenceMeta meta) {
    auto reader = std::make_shared<SequenceReader>(file, std::move(meta));
    entries_[reader->meta().name] = reader;
  }

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }

  const SequenceReader& get(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end())
      fail(ErrorCode::FileMissing, "unknown sequence '" + name + "'" + (dir_.empty() ? "" : " in " + dir_.string()));
    return *it->second;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  const std::filesystem::path& directory() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::shared_ptr<SequenceReader>> entries_;
};

}  // namespace peakit
