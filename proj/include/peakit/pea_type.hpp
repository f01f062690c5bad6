#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "peakit/error.hpp"

namespace peakit {

/// The six artifact classes, in the fixed bit order used by PEA patterns and
/// by the on-disk pea_type id.
enum class PeaType : std::uint8_t {
  Blurring = 0,
  Blocking = 1,
  Ringing = 2,
  ColorBleeding = 3,
  Flickering = 4,
  Floating = 5,
};

inline constexpr int kNumPeaTypes = 6;
inline constexpr int kTemporalSpan = 10;

inline constexpr std::array<PeaType, kNumPeaTypes> kAllPeaTypes = {
    PeaType::Blurring, PeaType::Blocking,   PeaType::Ringing,
    PeaType::ColorBleeding, PeaType::Flickering, PeaType::Floating};

inline constexpr int index_of(PeaType t) { return static_cast<int>(t); }

inline constexpr bool is_temporal(PeaType t) {
  return t == PeaType::Flickering || t == PeaType::Floating;
}

/// Ringing, color bleeding and flickering use 32x32 windows; blurring,
/// blocking and floating use 72x72.
inline constexpr int window_size(PeaType t) {
  switch (t) {
    case PeaType::Ringing:
    case PeaType::ColorBleeding:
    case PeaType::Flickering:
      return 32;
    default:
      return 72;
  }
}

inline constexpr int frames_per_patch(PeaType t) { return is_temporal(t) ? kTemporalSpan : 1; }

inline std::string_view to_string(PeaType t) {
  switch (t) {
    case PeaType::Blurring: return "blurring";
    case PeaType::Blocking: return "blocking";
    case PeaType::Ringing: return "ringing";
    case PeaType::ColorBleeding: return "color_bleeding";
    case PeaType::Flickering: return "flickering";
    case PeaType::Floating: return "floating";
  }
  return "unknown";
}

inline std::optional<PeaType> try_parse_pea_type(std::string_view s) {
  for (PeaType t : kAllPeaTypes)
    if (to_string(t) == s) return t;
  return std::nullopt;
}

inline PeaType parse_pea_type(std::string_view s) {
  if (auto t = try_parse_pea_type(s)) return *t;
  fail(ErrorCode::ParseError,
       "pea_type '" + std::string(s) +
           "' is not one of {blurring, blocking, ringing, color_bleeding, flickering, floating}");
}

inline PeaType pea_type_from_id(int id) {
  if (id < 0 || id >= kNumPeaTypes)
    fail(ErrorCode::ParseError, "pea_type id " + std::to_string(id) + " outside 0..5");
  return static_cast<PeaType>(id);
}

enum class Label : std::uint8_t { Negative = 0, Positive = 1 };

}  // namespace peakit
