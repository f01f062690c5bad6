#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "peakit/error.hpp"
#include "peakit/patch_pipeline.hpp"
#include "peakit/pea_type.hpp"
#include "peakit/video_io.hpp"

namespace peakit {

inline constexpr std::array<char, 4> kRecordMagic = {'P', 'E', 'A', '2'};
inline constexpr std::uint16_t kRecordVersion = 1;
inline constexpr std::uint8_t kReferenceQp = 255;

inline std::size_t payload_bytes(int size, int n_frames) {
  return static_cast<std::size_t>(n_frames) * (static_cast<std::size_t>(size) * size * 3 / 2);
}

struct PatchRecord {
  PeaType pea_type = PeaType::Ringing;
  Label label = Label::Negative;
  std::uint16_t size = 32;
  std::uint8_t n_frames = 1;
  std::uint8_t qp = kReferenceQp;
  std::string sequence;
  std::uint32_t frame_number = 0;
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::vector<std::uint8_t> payload;

  /// Frame k of the patch as Y/U/V planes.
  PatchPayload frame(int k) const {
    const std::size_t per = payload_bytes(size, 1);
    return planes_from_bytes(std::span(payload).subspan(per * k, per), size, size);
  }

  bool operator==(const PatchRecord&) const = default;
};

inline void validate(const PatchRecord& r) {
  if (r.size != window_size(r.pea_type))
    fail(ErrorCode::InvalidArgument, std::string(to_string(r.pea_type)) + " patches are " +
                                         std::to_string(window_size(r.pea_type)) + "x" +
                                         std::to_string(window_size(r.pea_type)) + ", got size " + std::to_string(r.size));
  if (r.n_frames != frames_per_patch(r.pea_type))
    fail(ErrorCode::InvalidArgument, std::string(to_string(r.pea_type)) + " patches carry " +
                                         std::to_string(frames_per_patch(r.pea_type)) + " frame(s), got " +
                                         std::to_string(r.n_frames));
  if (r.label != Label::Negative && r.label != Label::Positive) fail(ErrorCode::InvalidArgument, "label must be 0 or 1");
  if (r.qp > 51 && r.qp != kReferenceQp) fail(ErrorCode::InvalidArgument, "qp must be 0..51 or 255");
  if (r.sequence.empty() || r.sequence.size() > 255)
    fail(ErrorCode::InvalidArgument, "sequence name must be 1..255 bytes");
  if (r.sequence.find_first_of(",\n\r\"") != std::string::npos)
    fail(ErrorCode::InvalidArgument, "sequence name must not contain commas, quotes or newlines");
  if (r.payload.size() != payload_bytes(r.size, r.n_frames))
    fail(ErrorCode::PayloadLengthMismatch, "payload of " + std::to_string(r.payload.size()) + " bytes, geometry needs " +
                                               std::to_string(payload_bytes(r.size, r.n_frames)));
}

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<std::uint8_t>& data() { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> data) : data_(data) {}
  bool has(std::size_t n) const { return pos_ + n <= data_.size(); }
  std::uint8_t u8() { return data_[pos_++]; }
  std::uint16_t u16() {
    std::uint16_t v = static_cast<std::uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::span<const std::uint8_t> take(std::size_t n) {
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

// magic(4) version(2) pea_type(1) label(1) size(2) n_frames(1) qp(1) frame(4) x(2) y(2) name_len(1)
inline constexpr std::size_t kFixedHeaderBytes = 21;

}  // namespace detail

inline std::vector<std::uint8_t> encode_record(const PatchRecord& r) {
  validate(r);
  detail::ByteWriter w;
  w.bytes(kRecordMagic.data(), kRecordMagic.size());
  w.u16(kRecordVersion);
  w.u8(static_cast<std::uint8_t>(r.pea_type));
  w.u8(static_cast<std::uint8_t>(r.label));
  w.u16(r.size);
  w.u8(r.n_frames);
  w.u8(r.qp);
  w.u32(r.frame_number);
  w.u16(r.x);
  w.u16(r.y);
  w.u8(static_cast<std::uint8_t>(r.sequence.size()));
  w.bytes(r.sequence.data(), r.sequence.size());
  w.u32(static_cast<std::uint32_t>(r.payload.size()));
  w.bytes(r.payload.data(), r.payload.size());
  return std::move(w.data());
}

struct ManifestEntry {
  std::uint64_t offset = 0;
  PeaType pea_type = PeaType::Ringing;
  Label label = Label::Negative;
  int size = 0;
  int n_frames = 0;
  int qp = 0;
  std::string sequence;
  std::uint32_t frame = 0;
  int x = 0;
  int y = 0;
  std::optional<Split> split;

  bool operator==(const ManifestEntry&) const = default;
};

inline ManifestEntry manifest_entry(std::uint64_t offset, const PatchRecord& r, std::optional<Split> split) {
  return ManifestEntry{offset, r.pea_type, r.label, r.size, r.n_frames, r.qp, r.sequence, r.frame_number, r.x, r.y, split};
}

using ClassCounts = std::array<std::array<std::size_t, 2>, kNumPeaTypes>;

/// Append-only binary patch store plus a CSV manifest (`<store>.manifest.csv`).
/// A record becomes visible to lookup/stats once its manifest row is written.
class DatasetStore {
 public:
  static std::filesystem::path manifest_path_for(const std::filesystem::path& store) {
    return std::filesystem::path(store.string() + ".manifest.csv");
  }

  explicit DatasetStore(std::filesystem::path path, std::string provenance_comment = {})
      : path_(std::move(path)), manifest_path_(manifest_path_for(path_)), provenance_(std::move(provenance_comment)) {
    if (!std::filesystem::exists(path_)) {
      std::ofstream create(path_, std::ios::binary);
      if (!create) fail(ErrorCode::IoError, "cannot create store " + path_.string());
    }
    if (std::filesystem::exists(manifest_path_)) {
      load_manifest();
    } else {
      for (const auto& [offset, rec] : scan()) entries_.push_back(manifest_entry(offset, rec, std::nullopt));
      rewrite_manifest();
    }
    end_offset_ = std::filesystem::file_size(path_);
    for (std::size_t i = 0; i < entries_.size(); ++i) index_entry(i);
  }

  const std::filesystem::path& path() const { return path_; }
  const std::filesystem::path& manifest_path() const { return manifest_path_; }
  const std::vector<ManifestEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::uint64_t write_record(const PatchRecord& r, std::optional<Split> split = std::nullopt) {
    const auto bytes = encode_record(r);
    const std::uint64_t offset = end_offset_;
    {
      std::ofstream out(path_, std::ios::binary | std::ios::app);
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      out.flush();
      if (!out) fail(ErrorCode::IoError, "append failed: " + path_.string());
    }
    end_offset_ += bytes.size();
    entries_.push_back(manifest_entry(offset, r, split));
    {
      std::ofstream m(manifest_path_, std::ios::app);
      write_row(m, entries_.back());
      if (!m) fail(ErrorCode::IoError, "manifest append failed: " + manifest_path_.string());
    }
    index_entry(entries_.size() - 1);
    return offset;
  }

  PatchRecord read_record(std::uint64_t offset) const {
    detail::FileDescriptor fd(::open(path_.c_str(), O_RDONLY | O_CLOEXEC));
    if (!fd) fail(ErrorCode::IoError, "cannot open " + path_.string());
    return read_at(fd.get(), offset, std::filesystem::file_size(path_)).first;
  }

  /// All records indexed at (sequence, frame, x, y); several PEA types may share a location.
  std::vector<PatchRecord> lookup(const std::string& sequence, std::uint32_t frame, int x, int y) const {
    std::vector<PatchRecord> out;
    auto it = index_.find(std::make_tuple(sequence, frame, x, y));
    if (it == index_.end()) return out;
    for (std::size_t i : it->second) out.push_back(read_record(entries_[i].offset));
    return out;
  }

  ClassCounts stats() const {
    ClassCounts c{};
    for (const auto& e : entries_) ++c[index_of(e.pea_type)][static_cast<int>(e.label)];
    return c;
  }

  /// Sequential parse of the whole store file, independent of the manifest.
  std::vector<std::pair<std::uint64_t, PatchRecord>> scan() const {
    std::vector<std::pair<std::uint64_t, PatchRecord>> out;
    detail::FileDescriptor fd(::open(path_.c_str(), O_RDONLY | O_CLOEXEC));
    if (!fd) fail(ErrorCode::IoError, "cannot open " + path_.string());
    const std::uint64_t size = std::filesystem::file_size(path_);
    std::uint64_t offset = 0;
    while (offset < size) {
      auto [rec, next] = read_at(fd.get(), offset, size);
      out.emplace_back(offset, std::move(rec));
      offset = next;
    }
    return out;
  }

  /// Replaces the split column of every entry and rewrites the manifest.
  template <typename F>
  void assign_splits(F&& split_of) {
    for (auto& e : entries_) e.split = split_of(e);
    rewrite_manifest();
  }

 private:
  using Key = std::tuple<std::string, std::uint32_t, int, int>;

  void index_entry(std::size_t i) {
    const auto& e = entries_[i];
    index_[std::make_tuple(e.sequence, e.frame, e.x, e.y)].push_back(i);
  }

  static std::pair<PatchRecord, std::uint64_t> read_at(int fd, std::uint64_t offset, std::uint64_t file_size) {
    auto corrupt = [&](const std::string& why) -> Error {
      return Error(ErrorCode::CorruptRecord, "record at offset " + std::to_string(offset) + ": " + why);
    };
    if (offset + detail::kFixedHeaderBytes > file_size) throw corrupt("truncated header");
    std::vector<std::uint8_t> head(detail::kFixedHeaderBytes);
    if (!detail::pread_exact(fd, head, offset)) throw corrupt("short read");
    detail::ByteReader r(head);
    auto magic = r.take(4);
    if (!std::equal(magic.begin(), magic.end(), kRecordMagic.begin())) throw corrupt("bad magic");
    const auto version = r.u16();
    if (version != kRecordVersion) throw corrupt("unsupported version " + std::to_string(version));
    PatchRecord rec;
    const auto type_id = r.u8();
    if (type_id >= kNumPeaTypes) throw corrupt("pea_type id " + std::to_string(type_id));
    rec.pea_type = static_cast<PeaType>(type_id);
    const auto label = r.u8();
    if (label > 1) throw corrupt("label " + std::to_string(label));
    rec.label = static_cast<Label>(label);
    rec.size = r.u16();
    rec.n_frames = r.u8();
    rec.qp = r.u8();
    rec.frame_number = r.u32();
    rec.x = r.u16();
    rec.y = r.u16();
    const std::size_t name_len = r.u8();
    std::uint64_t pos = offset + detail::kFixedHeaderBytes;
    if (pos + name_len + 4 > file_size) throw corrupt("truncated name");
    std::vector<std::uint8_t> tail(name_len + 4);
    if (!detail::pread_exact(fd, tail, pos)) throw corrupt("short read");
    rec.sequence.assign(tail.begin(), tail.begin() + static_cast<std::ptrdiff_t>(name_len));
    detail::ByteReader tr(std::span<const std::uint8_t>(tail).subspan(name_len));
    const std::uint32_t payload_len = tr.u32();
    pos += name_len + 4;
    if (payload_len != payload_bytes(rec.size, rec.n_frames))
      throw Error(ErrorCode::PayloadLengthMismatch, "record at offset " + std::to_string(offset) + ": payload_len " +
                                                        std::to_string(payload_len) + " does not match geometry");
    if (pos + payload_len > file_size) throw corrupt("truncated payload");
    rec.payload.resize(payload_len);
    if (!detail::pread_exact(fd, rec.payload, pos)) throw corrupt("short read");
    return {std::move(rec), pos + payload_len};
  }

  static constexpr const char* kHeader = "offset,pea_type,label,size,n_frames,qp,sequence,frame,x,y,split";

  static void write_row(std::ostream& out, const ManifestEntry& e) {
    out << e.offset << ',' << to_string(e.pea_type) << ',' << static_cast<int>(e.label) << ',' << e.size << ','
        << e.n_frames << ',' << e.qp << ',' << e.sequence << ',' << e.frame << ',' << e.x << ',' << e.y << ','
        << (e.split ? std::string(to_string(*e.split)) : std::string("unassigned")) << '\n';
  }

  void rewrite_manifest() {
    const auto tmp = std::filesystem::path(manifest_path_.string() + ".tmp");
    {
      std::ofstream out(tmp);
      if (!out) fail(ErrorCode::IoError, "cannot write " + tmp.string());
      if (!provenance_.empty()) out << "# " << provenance_ << '\n';
      out << kHeader << '\n';
      for (const auto& e : entries_) write_row(out, e);
    }
    std::filesystem::rename(tmp, manifest_path_);
  }

  void load_manifest() {
    std::ifstream in(manifest_path_);
    std::string line;
    int lineno = 0;
    std::uint64_t last = 0;
    bool have_last = false;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      if (line == kHeader) continue;
      std::vector<std::string> cols;
      std::stringstream ss(line);
      std::string col;
      while (std::getline(ss, col, ',')) cols.push_back(col);
      auto bad = [&](const std::string& why) -> Error {
        return Error(ErrorCode::ParseError, manifest_path_.string() + " line " + std::to_string(lineno) + ": " + why);
      };
      if (cols.size() != 11) throw bad("expected 11 columns");
      ManifestEntry e;
      try {
        e.offset = std::stoull(cols[0]);
        e.pea_type = parse_pea_type(cols[1]);
        e.label = static_cast<Label>(std::stoi(cols[2]));
        e.size = std::stoi(cols[3]);
        e.n_frames = std::stoi(cols[4]);
        e.qp = std::stoi(cols[5]);
        e.sequence = cols[6];
        e.frame = static_cast<std::uint32_t>(std::stoul(cols[7]));
        e.x = std::stoi(cols[8]);
        e.y = std::stoi(cols[9]);
      } catch (const std::logic_error&) {
        throw bad("malformed number");
      }
      if (cols[10] == "train")
        e.split = Split::Train;
      else if (cols[10] == "test")
        e.split = Split::Test;
      else if (cols[10] != "unassigned")
        throw bad("unknown split '" + cols[10] + "'");
      if (have_last && e.offset <= last) throw bad("offsets must be strictly increasing");
      last = e.offset;
      have_last = true;
      entries_.push_back(std::move(e));
    }
  }

  std::filesystem::path path_;
  std::filesystem::path manifest_path_;
  std::string provenance_;
  std::uint64_t end_offset_ = 0;
  std::vector<ManifestEntry> entries_;
  std::map<Key, std::vector<std::size_t>> index_;
};

}  // namespace peakit
