#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include <json.hpp>

#include "peakit/error.hpp"
#include "peakit/video_io.hpp"

namespace peakit {

enum class FillMode { Nearest, Reflect, Constant };

struct AugmentConfig {
  double rotation_range = 15.0;  // degrees, drawn from [-r, r]
  double width_shift = 0.10;     // fraction of width
  double height_shift = 0.10;    // fraction of height
  double shear_range = 10.0;     // degrees
  double zoom_range = 0.10;      // zoom factors drawn from [1 - z, 1 + z]
  bool horizontal_flip = true;
  FillMode fill_mode = FillMode::Nearest;
  double fill_value = 0.0;  // used by FillMode::Constant

  static AugmentConfig identity() {
    return AugmentConfig{0, 0, 0, 0, 0, false, FillMode::Nearest, 0};
  }

  void validate() const {
    if (rotation_range < 0 || width_shift < 0 || height_shift < 0 || shear_range < 0 || zoom_range < 0)
      fail(ErrorCode::InvalidArgument, "augmentation ranges must be >= 0");
    if (zoom_range >= 1) fail(ErrorCode::InvalidArgument, "zoom_range must be < 1");
  }
};

/// One concrete transform. Maps an output pixel to its source location:
/// src = center + R(rotation) * Shear(shear) * diag(zoom) * d + shift,
/// where d is the offset from the patch center (x negated first when flipping).
struct AffineParams {
  double rotation_deg = 0;
  double shift_x = 0;  // fraction of width
  double shift_y = 0;
  double shear_deg = 0;
  double zoom_x = 1;
  double zoom_y = 1;
  bool flip = false;
};

inline AffineParams draw_affine(const AugmentConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  auto uniform = [&rng](double r) { return r > 0 ? std::uniform_real_distribution<double>(-r, r)(rng) : 0.0; };
  AffineParams p;
  p.rotation_deg = uniform(cfg.rotation_range);
  p.shift_x = uniform(cfg.width_shift);
  p.shift_y = uniform(cfg.height_shift);
  p.shear_deg = uniform(cfg.shear_range);
  p.zoom_x = 1.0 + uniform(cfg.zoom_range);
  p.zoom_y = 1.0 + uniform(cfg.zoom_range);
  p.flip = cfg.horizontal_flip && std::bernoulli_distribution(0.5)(rng);
  return p;
}

namespace detail {

inline int reflect_index(int i, int n) {
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

inline double sample_plane(std::span<const double> plane, int w, int h, int x, int y, FillMode mode, double cval) {
  if (x < 0 || y < 0 || x >= w || y >= h) {
    switch (mode) {
      case FillMode::Constant: return cval;
      case FillMode::Nearest:
        x = std::clamp(x, 0, w - 1);
        y = std::clamp(y, 0, h - 1);
        break;
      case FillMode::Reflect:
        x = reflect_index(x, w);
        y = reflect_index(y, h);
        break;
    }
  }
  return plane[static_cast<std::size_t>(y) * w + x];
}

inline std::vector<double> warp_plane(std::span<const double> src, int w, int h, const AffineParams& p, FillMode mode,
                                      double cval) {
  const double th = p.rotation_deg * std::numbers::pi / 180.0;
  const double sh = p.shear_deg * std::numbers::pi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  // R * Shear * Zoom with Shear = [[1, -sin(sh)], [0, cos(sh)]].
  const double a00 = c * p.zoom_x, a01 = (-c * std::sin(sh) - s * std::cos(sh)) * p.zoom_y;
  const double a10 = s * p.zoom_x, a11 = (-s * std::sin(sh) + c * std::cos(sh)) * p.zoom_y;
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  const double tx = p.shift_x * w, ty = p.shift_y * h;
  std::vector<double> out(static_cast<std::size_t>(w) * h);
  for (int oy = 0; oy < h; ++oy) {
    for (int ox = 0; ox < w; ++ox) {
      double dx = ox - cx;
      const double dy = oy - cy;
      if (p.flip) dx = -dx;
      const double sx = cx + a00 * dx + a01 * dy + tx;
      const double sy = cy + a10 * dx + a11 * dy + ty;
      const double fx0 = std::floor(sx), fy0 = std::floor(sy);
      const double fx = sx - fx0, fy = sy - fy0;
      const int x0 = static_cast<int>(fx0), y0 = static_cast<int>(fy0);
      double v = 0;
      // Skip zero-weight taps so an exact integer mapping never touches fill values.
      if (fx < 1 && fy < 1) v += (1 - fx) * (1 - fy) * sample_plane(src, w, h, x0, y0, mode, cval);
      if (fx > 0 && fy < 1) v += fx * (1 - fy) * sample_plane(src, w, h, x0 + 1, y0, mode, cval);
      if (fx < 1 && fy > 0) v += (1 - fx) * fy * sample_plane(src, w, h, x0, y0 + 1, mode, cval);
      if (fx > 0 && fy > 0) v += fx * fy * sample_plane(src, w, h, x0 + 1, y0 + 1, mode, cval);
      out[static_cast<std::size_t>(oy) * w + ox] = v;
    }
  }
  return out;
}

inline std::uint8_t to_sample(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace detail

/// Applies one transform to all planes. Chroma is replicated to full
/// resolution, warped with the luma geometry, then averaged back down 2x2.
inline PatchPayload apply_affine(const PatchPayload& in, const AffineParams& p, FillMode mode = FillMode::Nearest,
                                 double cval = 0.0) {
  const int w = in.width, h = in.height;
  PatchPayload out(w, h);
  {
    std::vector<double> plane(in.y.begin(), in.y.end());
    auto warped = detail::warp_plane(plane, w, h, p, mode, cval);
    std::transform(warped.begin(), warped.end(), out.y.begin(), detail::to_sample);
  }
  const int cw = w / 2, ch = h / 2;
  for (int k = 0; k < 2; ++k) {
    const auto& src = k == 0 ? in.u : in.v;
    auto& dst = k == 0 ? out.u : out.v;
    std::vector<double> full(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) full[static_cast<std::size_t>(y) * w + x] = src[static_cast<std::size_t>(y / 2) * cw + x / 2];
    auto warped = detail::warp_plane(full, w, h, p, mode, cval);
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x) {
        const auto at = [&](int xx, int yy) { return warped[static_cast<std::size_t>(yy) * w + xx]; };
        const double avg = (at(2 * x, 2 * y) + at(2 * x + 1, 2 * y) + at(2 * x, 2 * y + 1) + at(2 * x + 1, 2 * y + 1)) / 4.0;
        dst[static_cast<std::size_t>(y) * cw + x] = detail::to_sample(avg);
      }
  }
  return out;
}

inline PatchPayload augment(const PatchPayload& patch, const AugmentConfig& cfg, std::uint64_t seed) {
  if (patch.width != patch.height) fail(ErrorCode::InvalidArgument, "augmentation expects a square patch");
  std::mt19937_64 rng(seed);
  return apply_affine(patch, draw_affine(cfg, rng), cfg.fill_mode, cfg.fill_value);
}

/// Temporal cuboids get one transform shared by all frames.
inline std::vector<PatchPayload> augment(std::span<const PatchPayload> frames, const AugmentConfig& cfg,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const AffineParams p = draw_affine(cfg, rng);
  std::vector<PatchPayload> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(apply_affine(f, p, cfg.fill_mode, cfg.fill_value));
  return out;
}

inline void to_json(nlohmann::json& j, const AugmentConfig& c) {
  static const char* modes[] = {"nearest", "reflect", "constant"};
  j = {{"rotation_range", c.rotation_range}, {"width_shift", c.width_shift},
       {"height_shift", c.height_shift},     {"shear_range", c.shear_range},
       {"zoom_range", c.zoom_range},         {"horizontal_flip", c.horizontal_flip},
       {"fill_mode", modes[static_cast<int>(c.fill_mode)]}, {"fill_value", c.fill_value}};
}

inline void from_json(const nlohmann::json& j, AugmentConfig& c) {
  c.rotation_range = j.value("rotation_range", c.rotation_range);
  c.width_shift = j.value("width_shift", c.width_shift);
  c.height_shift = j.value("height_shift", c.height_shift);
  c.shear_range = j.value("shear_range", c.shear_range);
  c.zoom_range = j.value("zoom_range", c.zoom_range);
  c.horizontal_flip = j.value("horizontal_flip", c.horizontal_flip);
  const auto mode = j.value("fill_mode", std::string("nearest"));
  if (mode == "nearest")
    c.fill_mode = FillMode::Nearest;
  else if (mode == "reflect")
    c.fill_mode = FillMode::Reflect;
  else if (mode == "constant")
    c.fill_mode = FillMode::Constant;
  else
    fail(ErrorCode::ParseError, "unknown fill_mode '" + mode + "' (expected nearest, reflect or constant)");
  c.fill_value = j.value("fill_value", c.fill_value);
}

}  // namespace peakit
