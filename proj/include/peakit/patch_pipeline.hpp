#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "peakit/annotation.hpp"
#include "peakit/error.hpp"
#include "peakit/pea_type.hpp"
#include "peakit/video_io.hpp"

namespace peakit {

enum class WindowSource : std::uint8_t { CompressedCircled, CompressedUncircled, Reference };

inline std::string_view to_string(WindowSource s) {
  switch (s) {
    case WindowSource::CompressedCircled: return "compressed_circled";
    case WindowSource::CompressedUncircled: return "compressed_uncircled";
    case WindowSource::Reference: return "reference";
  }
  return "unknown";
}

/// A labeled square window. For temporal types `frame` is the first frame of
/// the 10-frame cuboid.
struct LabeledWindow {
  int x = 0;
  int y = 0;
  int size = 32;
  int frame = 0;
  PeaType pea_type = PeaType::Ringing;
  Label label = Label::Negative;
  WindowSource source = WindowSource::CompressedUncircled;

  bool operator==(const LabeledWindow&) const = default;
};

namespace detail {

/// Summed-area table with one row/column of zero padding.
class IntegralImage {
 public:
  explicit IntegralImage(const RegionMask& m) : w_(m.width + 1), sums_(static_cast<std::size_t>(m.width + 1) * (m.height + 1), 0) {
    for (int y = 0; y < m.height; ++y) {
      std::int64_t row = 0;
      for (int x = 0; x < m.width; ++x) {
        row += m.at(x, y);
        sums_[idx(x + 1, y + 1)] = sums_[idx(x + 1, y)] + row;
      }
    }
  }

  std::int64_t sum(int x, int y, int w, int h) const {
    return sums_[idx(x + w, y + h)] - sums_[idx(x, y + h)] - sums_[idx(x + w, y)] + sums_[idx(x, y)];
  }

 private:
  std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * w_ + x; }
  int w_;
  std::vector<std::int64_t> sums_;
};

inline void check_window_params(int size, int stride) {
  if (size != 32 && size != 72) fail(ErrorCode::InvalidArgument, "window size must be 32 or 72, got " + std::to_string(size));
  if (stride <= 0 || stride % 2 != 0)
    fail(ErrorCode::InvalidArgument, "stride must be a positive even number, got " + std::to_string(stride));
}

}  // namespace detail

/// Slides a size x size window over the mask on the stride grid. A window is
/// positive when at least half of its pixels are circled. Windows that would
/// cross the frame border are skipped.
inline std::vector<LabeledWindow> label_spatial(const RegionMask& mask, int size, int stride,
                                                PeaType type = PeaType::Ringing, int frame = 0) {
  detail::check_window_params(size, stride);
  std::vector<LabeledWindow> out;
  if (mask.width < size || mask.height < size) return out;
  const detail::IntegralImage integral(mask);
  const std::int64_t area = static_cast<std::int64_t>(size) * size;
  for (int y = 0; y + size <= mask.height; y += stride) {
    for (int x = 0; x + size <= mask.width; x += stride) {
      const bool positive = 2 * integral.sum(x, y, size, size) >= area;
      out.push_back(LabeledWindow{x, y, size, frame, type, positive ? Label::Positive : Label::Negative,
                                  positive ? WindowSource::CompressedCircled : WindowSource::CompressedUncircled});
    }
  }
  return out;
}

/// Labels the cuboids of one 10-frame segment: the spatial rule applied to
/// the union of the ten masks.
inline std::vector<LabeledWindow> label_temporal(std::span<const RegionMask> masks, int size, int stride,
                                                 PeaType type = PeaType::Flickering, int start_frame = 0) {
  if (masks.size() != static_cast<std::size_t>(kTemporalSpan))
    fail(ErrorCode::WrongSpanLength,
         "temporal labeling needs exactly 10 masks, got " + std::to_string(masks.size()));
  return label_spatial(union_masks(masks), size, stride, type, start_frame);
}

struct NegativeRatio {
  int compressed = 1;
  int reference = 2;
};

/// Draws reference-frame negatives uniformly at random so that
/// |compressed negatives| : |reference negatives| follows `ratio`. Placement
/// ignores the circled region. Coordinates are even for chroma alignment.
inline std::vector<LabeledWindow> sample_negatives(std::span<const LabeledWindow> compressed_negatives, int ref_width,
                                                   int ref_height, std::span<const int> reference_frames,
                                                   NegativeRatio ratio, std::uint64_t seed) {
  if (ratio.compressed <= 0 || ratio.reference < 0)
    fail(ErrorCode::InvalidArgument, "negative ratio must be a positive number of compressed negatives to >= 0 reference");
  const std::size_t count = compressed_negatives.size() * static_cast<std::size_t>(ratio.reference) /
                            static_cast<std::size_t>(ratio.compressed);
  std::vector<LabeledWindow> out;
  if (count == 0) return out;
  if (reference_frames.empty()) fail(ErrorCode::InsufficientReferenceArea, "no reference frames to sample from");
  std::mt19937_64 rng(seed);
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const LabeledWindow& proto = compressed_negatives[i % compressed_negatives.size()];
    if (ref_width < proto.size || ref_height < proto.size)
      fail(ErrorCode::InsufficientReferenceArea, "reference frame " + std::to_string(ref_width) + "x" +
                                                     std::to_string(ref_height) + " cannot hold a " +
                                                     std::to_string(proto.size) + " window");
    std::uniform_int_distribution<std::size_t> pick_frame(0, reference_frames.size() - 1);
    std::uniform_int_distribution<int> pick_x(0, (ref_width - proto.size) / 2);
    std::uniform_int_distribution<int> pick_y(0, (ref_height - proto.size) / 2);
    LabeledWindow w = proto;
    w.frame = reference_frames[pick_frame(rng)];
    w.x = 2 * pick_x(rng);
    w.y = 2 * pick_y(rng);
    w.label = Label::Negative;
    w.source = WindowSource::Reference;
    out.push_back(w);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Train/test split.

enum class Split : std::uint8_t { Train, Test };

inline std::string_view to_string(Split s) { return s == Split::Train ? "train" : "test"; }

struct SplitItem {
  std::string id;
  std::string stratum;  // records are split 75:25 within each stratum
};

using SplitAssignment = std::unordered_map<std::string, Split>;

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Stratified 75:25 split. The overall test count is floor(n / 4); it is
/// shared among strata by largest remainder, and inside a stratum the records
/// with the smallest hash(id, seed) go to test. The result depends only on the
/// set of (id, stratum) pairs and the seed, never on input order.
inline SplitAssignment split(std::span<const SplitItem> items, std::uint64_t seed) {
  std::map<std::string, std::vector<const SplitItem*>> strata;
  for (const auto& it : items) strata[it.stratum].push_back(&it);

  const std::size_t total_test = items.size() / 4;
  struct Quota {
    std::string stratum;
    std::size_t base;
    std::size_t remainder;  // in quarters
  };
  std::vector<Quota> quotas;
  std::size_t assigned = 0;
  for (const auto& [name, members] : strata) {
    quotas.push_back({name, members.size() / 4, members.size() % 4});
    assigned += members.size() / 4;
  }
  std::vector<std::size_t> order(quotas.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return quotas[a].remainder > quotas[b].remainder; });
  for (std::size_t k = 0; assigned < total_test && k < order.size(); ++k, ++assigned) quotas[order[k]].base += 1;

  SplitAssignment out;
  for (const auto& q : quotas) {
    auto members = strata[q.stratum];
    auto key = [seed](const SplitItem* it) { return detail::splitmix64(detail::fnv1a64(it->id) ^ seed); };
    std::sort(members.begin(), members.end(), [&](const SplitItem* a, const SplitItem* b) {
      const auto ka = key(a), kb = key(b);
      return ka != kb ? ka < kb : a->id < b->id;
    });
    for (std::size_t i = 0; i < members.size(); ++i) out[members[i]->id] = i < q.base ? Split::Test : Split::Train;
  }
  return out;
}

}  // namespace peakit
