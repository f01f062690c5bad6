#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "peakit/annotation.hpp"
#include "peakit/classifier.hpp"
#include "peakit/error.hpp"
#include "peakit/video_io.hpp"

// Programmatic stand-ins for subject-labelled data: clean content, injected
// blocking and blurring, and a small annotated sequence corpus.
namespace peakit::synth {

using Plane = std::vector<double>;

namespace detail {

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::vector<std::uint8_t> quantize(const Plane& p) {
  std::vector<std::uint8_t> out(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) out[i] = static_cast<std::uint8_t>(std::clamp(std::lround(p[i]), 0L, 255L));
  return out;
}

inline Plane to_plane(const std::vector<std::uint8_t>& v) { return Plane(v.begin(), v.end()); }

/// Separable Gaussian, clamped borders.
inline Plane gaussian_blur(const Plane& src, int w, int h, double sigma) {
  if (sigma <= 0) return src;
  const int r = static_cast<int>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double sum = 0;
  for (int i = -r; i <= r; ++i) sum += (k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (auto& v : k) v /= sum;
  Plane tmp(src.size()), out(src.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * src[static_cast<std::size_t>(y) * w + std::clamp(x + i, 0, w - 1)];
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[static_cast<std::size_t>(std::clamp(y + i, 0, h - 1)) * w + x];
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  return out;
}

/// Gradient + sinusoids + step edges + fine noise.
inline Plane textured_plane(int w, int h, std::mt19937_64& rng, double noise_lo, double noise_hi) {
  Plane p(static_cast<std::size_t>(w) * h);
  const double base = uniform(rng, 60, 190), gx = uniform(rng, -0.6, 0.6), gy = uniform(rng, -0.6, 0.6);
  struct Wave { double fx, fy, phase, amp; };
  std::vector<Wave> waves(static_cast<std::size_t>(std::uniform_int_distribution<int>(1, 3)(rng)));
  for (auto& wv : waves) {
    const double f = uniform(rng, 0.02, 0.35), th = uniform(rng, 0, std::numbers::pi);
    wv = {f * std::cos(th), f * std::sin(th), uniform(rng, 0, 2 * std::numbers::pi), uniform(rng, 4, 25)};
  }
  struct Edge { double nx, ny, c, amp; };
  std::vector<Edge> edges(static_cast<std::size_t>(std::uniform_int_distribution<int>(0, 2)(rng)));
  for (auto& e : edges) {
    const double th = uniform(rng, 0, 2 * std::numbers::pi);
    e = {std::cos(th), std::sin(th), uniform(rng, 0.2, 0.8) * (w * std::abs(std::cos(th)) + h * std::abs(std::sin(th))),
         uniform(rng, -50, 50)};
  }
  std::normal_distribution<double> noise(0.0, uniform(rng, noise_lo, noise_hi));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double v = base + gx * (x - w / 2.0) + gy * (y - h / 2.0);
      for (const auto& wv : waves) v += wv.amp * std::sin(2 * std::numbers::pi * (wv.fx * x + wv.fy * y) + wv.phase);
      for (const auto& e : edges) v += (e.nx * x + e.ny * y > e.c) ? e.amp : 0.0;
      p[static_cast<std::size_t>(y) * w + x] = v + noise(rng);
    }
  return p;
}

inline Plane smooth_plane(int w, int h, std::mt19937_64& rng) {
  Plane p(static_cast<std::size_t>(w) * h);
  const double base = uniform(rng, 90, 166), gx = uniform(rng, -0.8, 0.8), gy = uniform(rng, -0.8, 0.8);
  std::normal_distribution<double> noise(0.0, uniform(rng, 1, 4));
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) p[static_cast<std::size_t>(y) * w + x] = base + gx * (x - w / 2.0) + gy * (y - h / 2.0) + noise(rng);
  return p;
}

/// Flattens each b x b block toward its mean and adds a per-block DC offset.
inline void blockify(Plane& p, int w, int h, int b, int phase_x, int phase_y, double flatten, double offset,
                     std::mt19937_64& rng) {
  for (int by = -phase_y; by < h; by += b)
    for (int bx = -phase_x; bx < w; bx += b) {
      const int x0 = std::max(bx, 0), y0 = std::max(by, 0), x1 = std::min(bx + b, w), y1 = std::min(by + b, h);
      double mean = 0;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) mean += p[static_cast<std::size_t>(y) * w + x];
      mean /= static_cast<double>((x1 - x0) * (y1 - y0));
      const double dc = uniform(rng, -offset, offset);
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) {
          double& v = p[static_cast<std::size_t>(y) * w + x];
          v = v + flatten * (mean - v) + dc;
        }
    }
}

}  // namespace detail

/// Natural-looking content with fine texture throughout.
inline FrameBuffer clean_image(int w, int h, std::mt19937_64& rng) {
  FrameBuffer f(w, h);
  f.y = detail::quantize(detail::textured_plane(w, h, rng, 4, 12));
  f.u = detail::quantize(detail::smooth_plane(w / 2, h / 2, rng));
  f.v = detail::quantize(detail::smooth_plane(w / 2, h / 2, rng));
  return f;
}

/// 8x8 (luma) block boundary discontinuities at a random grid phase.
inline void inject_blocking(FrameBuffer& f, std::mt19937_64& rng, double strength = 1.0) {
  const int px = 2 * std::uniform_int_distribution<int>(0, 3)(rng), py = 2 * std::uniform_int_distribution<int>(0, 3)(rng);
  const double flatten = std::clamp(detail::uniform(rng, 0.6, 1.0) * strength, 0.0, 1.0);
  const double offset = detail::uniform(rng, 6, 14) * strength;
  auto y = detail::to_plane(f.y);
  detail::blockify(y, f.width, f.height, 8, px, py, flatten, offset, rng);
  f.y = detail::quantize(y);
  for (auto* c : {&f.u, &f.v}) {
    auto p = detail::to_plane(*c);
    detail::blockify(p, f.width / 2, f.height / 2, 4, px / 2, py / 2, flatten, offset / 2, rng);
    *c = detail::quantize(p);
  }
}

/// Gaussian low-pass on all planes.
inline void inject_blurring(FrameBuffer& f, double sigma) {
  f.y = detail::quantize(detail::gaussian_blur(detail::to_plane(f.y), f.width, f.height, sigma));
  f.u = detail::quantize(detail::gaussian_blur(detail::to_plane(f.u), f.width / 2, f.height / 2, sigma / 2));
  f.v = detail::quantize(detail::gaussian_blur(detail::to_plane(f.v), f.width / 2, f.height / 2, sigma / 2));
}

inline void inject_blurring(FrameBuffer& f, std::mt19937_64& rng) { inject_blurring(f, detail::uniform(rng, 1.0, 2.2)); }

/// Balanced corpus for one spatial type (blocking or blurring): `per_class`
/// artifact patches and as many clean ones, interleaved.
inline std::vector<LabeledPatch> make_patch_corpus(PeaType type, int per_class, std::uint64_t seed) {
  if (type != PeaType::Blocking && type != PeaType::Blurring)
    fail(ErrorCode::InvalidArgument, "synthetic corpora exist for blocking and blurring only");
  const int s = window_size(type);
  std::mt19937_64 rng(seed);
  std::vector<LabeledPatch> out;
  out.reserve(static_cast<std::size_t>(per_class) * 2);
  for (int i = 0; i < per_class; ++i)
    for (Label label : {Label::Positive, Label::Negative}) {
      auto f = clean_image(s, s, rng);
      if (label == Label::Positive) {
        if (type == PeaType::Blocking)
          inject_blocking(f, rng);
        else
          inject_blurring(f, rng);
      }
      out.push_back({{std::move(f)}, label});
    }
  return out;
}

/// Splits a corpus 75:25 with the stratified split.
inline std::pair<std::vector<LabeledPatch>, std::vector<LabeledPatch>> split_corpus(std::vector<LabeledPatch> corpus,
                                                                                    std::uint64_t seed) {
  std::vector<SplitItem> items;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    items.push_back({std::to_string(i), std::to_string(static_cast<int>(corpus[i].label))});
  const auto a = split(items, seed);
  std::pair<std::vector<LabeledPatch>, std::vector<LabeledPatch>> out;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    (a.at(std::to_string(i)) == Split::Train ? out.first : out.second).push_back(std::move(corpus[i]));
  return out;
}

struct FixtureOptions {
  int width = 216;
  int height = 144;
  int frames = 20;
  std::vector<int> qps = {27, 37};
  std::string name = "synth";
  std::uint64_t seed = 1;
};

struct Fixture {
  std::filesystem::path directory;
  std::filesystem::path annotations;
  std::vector<SequenceMeta> sequences;  // reference first
};

/// Writes a reference clip, one compressed-looking clip per qp, JSON sidecars
/// and a JSONL annotation session. Compressed clips carry blocking in the left
/// third, blurring in the right third and brightness flicker in the middle,
/// each stronger at higher qp. The annotations circle those regions and add
/// ringing, color bleeding and floating marks so every type has labels.
inline Fixture write_fixture(const std::filesystem::path& dir, const FixtureOptions& opt = {}) {
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(opt.seed);
  const int w = opt.width, h = opt.height;
  if (w % 2 || h % 2) fail(ErrorCode::OddGeometry, "fixture dimensions must be even");
  const auto base = clean_image(w + 2 * opt.frames, h, rng);

  std::vector<FrameBuffer> reference;
  for (int t = 0; t < opt.frames; ++t) reference.push_back(crop(base, 2 * t, 0, w, h));  // slow pan

  Fixture fx;
  fx.directory = dir;
  auto write_seq = [&](const SequenceMeta& meta, const std::vector<FrameBuffer>& frames) {
    SequenceWriter out(dir / (meta.name + ".yuv"));
    for (const auto& f : frames) out.write(f);
    save_meta(dir / (meta.name + ".json"), meta);
    fx.sequences.push_back(meta);
  };
  SequenceMeta ref;
  ref.name = opt.name;
  ref.class_label = "synthetic";
  ref.width = w;
  ref.height = h;
  ref.frame_count = opt.frames;
  write_seq(ref, reference);

  const int third = (w / 3) & ~1;
  std::vector<EllipseAnnotation> anns;
  for (int qp : opt.qps) {
    const double strength = std::clamp((qp - 17) / 20.0, 0.2, 1.5);
    std::vector<FrameBuffer> frames;
    for (int t = 0; t < opt.frames; ++t) {
      FrameBuffer f = reference[static_cast<std::size_t>(t)];
      auto left = crop(f, 0, 0, third, h);
      inject_blocking(left, rng, strength);
      auto right = crop(f, w - third, 0, third, h);
      inject_blurring(right, 0.8 + 1.2 * strength);
      for (int y = 0; y < h; ++y) {
        std::copy_n(left.y.begin() + static_cast<std::ptrdiff_t>(y) * third, third, f.y.begin() + static_cast<std::ptrdiff_t>(y) * w);
        std::copy_n(right.y.begin() + static_cast<std::ptrdiff_t>(y) * third, third,
                    f.y.begin() + static_cast<std::ptrdiff_t>(y) * w + (w - third));
      }
      for (int y = 0; y < h / 2; ++y)
        for (auto [dst, l, r] : {std::tuple{&f.u, &left.u, &right.u}, std::tuple{&f.v, &left.v, &right.v}}) {
          std::copy_n(l->begin() + static_cast<std::ptrdiff_t>(y) * (third / 2), third / 2,
                      dst->begin() + static_cast<std::ptrdiff_t>(y) * (w / 2));
          std::copy_n(r->begin() + static_cast<std::ptrdiff_t>(y) * (third / 2), third / 2,
                      dst->begin() + static_cast<std::ptrdiff_t>(y) * (w / 2) + (w - third) / 2);
        }
      const double flicker = (t % 2 ? 1.0 : -1.0) * 12.0 * strength;
      for (int y = h / 4; y < 3 * h / 4; ++y)
        for (int x = third; x < w - third; ++x) {
          auto& v = f.y[static_cast<std::size_t>(y) * w + x];
          v = static_cast<std::uint8_t>(std::clamp(static_cast<int>(std::lround(v + flicker)), 0, 255));
        }
      frames.push_back(std::move(f));
    }
    SequenceMeta m = ref;
    m.name = opt.name + "_qp" + std::to_string(qp);
    m.qp = qp;
    m.coding_structure = CodingStructure::RandomAccess;
    m.reference = opt.name;
    write_seq(m, frames);

    for (int t = 0; t < opt.frames; ++t)
      for (const char* subject : {"s1", "s2"}) {
        const double jitter = subject[1] == '1' ? 0.0 : 4.0;
        anns.push_back({m.name, t, PeaType::Blocking, third / 2.0 + jitter, h / 2.0, third * 0.55, h * 0.6, subject, false});
        anns.push_back({m.name, t, PeaType::Blurring, w - third / 2.0 - jitter, h / 2.0, third * 0.55, h * 0.6, subject, false});
      }
    for (int t = 0; t < opt.frames; ++t) {
      anns.push_back({m.name, t, PeaType::Ringing, static_cast<double>(third), h / 2.0, 24, 24, "s1", false});
      anns.push_back({m.name, t, PeaType::ColorBleeding, w - third / 2.0, h / 4.0, 24, 20, "s2", false});
    }
    for (int start = 0; start + kTemporalSpan <= opt.frames; start += kTemporalSpan) {
      anns.push_back({m.name, start, PeaType::Flickering, w / 2.0, h / 2.0, (w - 2 * third) * 0.6, h * 0.3, "s1", true});
      anns.push_back({m.name, start, PeaType::Floating, w / 2.0, h / 2.0, 50, 50, "s2", true});
    }
  }
  fx.annotations = dir / "annotations.jsonl";
  save_session(fx.annotations, anns);
  return fx;
}

}  // namespace peakit::synth
