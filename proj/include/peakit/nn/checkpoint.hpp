#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "peakit/error.hpp"
#include "peakit/nn/layers.hpp"

namespace peakit::nn {

inline constexpr std::array<char, 4> kWeightsMagic = {'P', 'E', 'A', 'W'};
inline constexpr std::uint16_t kWeightsVersion = 1;

namespace io {

inline void put_u8(std::ostream& o, std::uint8_t v) { o.put(static_cast<char>(v)); }
inline void put_u16(std::ostream& o, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) o.put(static_cast<char>(v >> (8 * i)));
}
inline void put_u32(std::ostream& o, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) o.put(static_cast<char>(v >> (8 * i)));
}
inline void put_f32(std::ostream& o, float f) { put_u32(o, std::bit_cast<std::uint32_t>(f)); }

inline std::uint8_t get_u8(std::istream& in) {
  const int c = in.get();
  if (c == std::char_traits<char>::eof()) fail(ErrorCode::CorruptRecord, "checkpoint truncated");
  return static_cast<std::uint8_t>(c);
}
inline std::uint16_t get_u16(std::istream& in) {
  std::uint16_t v = get_u8(in);
  v |= static_cast<std::uint16_t>(get_u8(in) << 8);
  return v;
}
inline std::uint32_t get_u32(std::istream& in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(get_u8(in)) << (8 * i);
  return v;
}
inline float get_f32(std::istream& in) { return std::bit_cast<float>(get_u32(in)); }

}  // namespace io

template <typename T>
std::vector<Tensor<T>*> state_tensors(Layer<T>& model) {
  std::vector<Tensor<T>*> out;
  for (auto* p : parameters_of(model)) out.push_back(&p->value);
  model.collect_buffers(out);
  return out;
}

/// Layout: "PEAW", u16 version, u32 spec count, specs (u8 kind, u8 n, i32 x n),
/// u32 tensor count, tensors (u8 rank, u32 dims, f32 values). Parameters come
/// first in declaration order, then buffers. All little-endian.
template <typename T>
void save_weights(std::ostream& out, Layer<T>& model) {
  out.write(kWeightsMagic.data(), 4);
  io::put_u16(out, kWeightsVersion);
  std::vector<LayerSpec> specs;
  model.describe(specs);
  io::put_u32(out, static_cast<std::uint32_t>(specs.size()));
  for (const auto& s : specs) {
    io::put_u8(out, static_cast<std::uint8_t>(s.kind));
    io::put_u8(out, static_cast<std::uint8_t>(s.params.size()));
    for (auto v : s.params) io::put_u32(out, static_cast<std::uint32_t>(v));
  }
  const auto tensors = state_tensors(model);
  io::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto* t : tensors) {
    io::put_u8(out, static_cast<std::uint8_t>(t->rank()));
    for (auto d : t->shape()) io::put_u32(out, static_cast<std::uint32_t>(d));
    for (T v : t->values()) io::put_f32(out, static_cast<float>(v));
  }
  if (!out) fail(ErrorCode::IoError, "failed writing weights");
}

/// Loads into an already-built model; the stored layer specs must match it.
template <typename T>
void load_weights(std::istream& in, Layer<T>& model) {
  std::array<char, 4> magic{};
  in.read(magic.data(), 4);
  if (!in || magic != kWeightsMagic) fail(ErrorCode::CorruptRecord, "not a weights container (bad magic)");
  const auto version = io::get_u16(in);
  if (version != kWeightsVersion) fail(ErrorCode::CorruptRecord, "unsupported weights version " + std::to_string(version));
  const auto n_specs = io::get_u32(in);
  std::vector<LayerSpec> stored;
  for (std::uint32_t i = 0; i < n_specs; ++i) {
    LayerSpec s{static_cast<LayerKind>(io::get_u8(in)), {}};
    const auto n = io::get_u8(in);
    for (int k = 0; k < n; ++k) s.params.push_back(static_cast<std::int32_t>(io::get_u32(in)));
    stored.push_back(std::move(s));
  }
  std::vector<LayerSpec> expected;
  model.describe(expected);
  if (stored != expected) fail(ErrorCode::ShapeMismatch, "checkpoint layer specs do not match the model architecture");
  const auto tensors = state_tensors(model);
  if (io::get_u32(in) != tensors.size()) fail(ErrorCode::CorruptRecord, "checkpoint tensor count mismatch");
  for (auto* t : tensors) {
    const auto rank = io::get_u8(in);
    Shape shape;
    for (int k = 0; k < rank; ++k) shape.push_back(io::get_u32(in));
    if (shape != t->shape())
      fail(ErrorCode::ShapeMismatch, "checkpoint tensor " + shape_string(shape) + " vs model " + shape_string(t->shape()));
    for (auto& v : t->values()) v = static_cast<T>(io::get_f32(in));
  }
}

}  // namespace peakit::nn
