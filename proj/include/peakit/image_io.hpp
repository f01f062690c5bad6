#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "peakit/error.hpp"
#include "peakit/video_io.hpp"

namespace peakit {

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}

  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const GrayImage&) const = default;
};

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved R, G, B

  bool operator==(const RgbImage&) const = default;
};

/// BT.601 full-range conversion; each chroma sample covers a 2x2 luma block.
inline RgbImage yuv_to_rgb(const FrameBuffer& f) {
  RgbImage img{f.width, f.height, std::vector<std::uint8_t>(static_cast<std::size_t>(f.width) * f.height * 3)};
  const int cw = f.width / 2;
  auto clip = [](double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); };
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const double Y = f.y[static_cast<std::size_t>(y) * f.width + x];
      const std::size_t ci = static_cast<std::size_t>(y / 2) * cw + x / 2;
      const double U = f.u[ci] - 128.0, V = f.v[ci] - 128.0;
      std::uint8_t* p = &img.pixels[(static_cast<std::size_t>(y) * f.width + x) * 3];
      p[0] = clip(Y + 1.402 * V);
      p[1] = clip(Y - 0.344136 * U - 0.714136 * V);
      p[2] = clip(Y + 1.772 * U);
    }
  return img;
}

/// Nearest-neighbour enlargement, one source pixel per factor x factor block.
inline GrayImage upscale(const GrayImage& g, int factor) {
  GrayImage out(g.width * factor, g.height * factor);
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(x, y) = g.at(x / factor, y / factor);
  return out;
}

/// Binary PGM (P5); each comment becomes a "# ..." header line.
inline void write_pgm(std::ostream& out, const GrayImage& img, const std::vector<std::string>& comments = {}) {
  out << "P5\n";
  for (const auto& c : comments) out << "# " << c << '\n';
  out << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img, const std::vector<std::string>& comments = {}) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  write_pgm(out, img, comments);
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::FileMissing, "image not found: " + path.string());
  auto token = [&]() {
    std::string t;
    while (in >> std::ws && in.peek() == '#') std::getline(in, t);
    in >> t;
    return t;
  };
  if (token() != "P5") fail(ErrorCode::UnsupportedFormat, path.string() + ": not a binary PGM");
  GrayImage img;
  try {
    img.width = std::stoi(token());
    img.height = std::stoi(token());
    if (std::stoi(token()) != 255) fail(ErrorCode::UnsupportedFormat, path.string() + ": only 8-bit PGM is supported");
  } catch (const std::logic_error&) {
    fail(ErrorCode::ParseError, path.string() + ": malformed PGM header");
  }
  in.get();
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) fail(ErrorCode::CorruptRecord, path.string() + ": truncated PGM");
  return img;
}

namespace detail {

struct PngSink {
  std::vector<std::uint8_t>* out;
};

inline void png_append(png_structp png, png_bytep data, png_size_t n) {
  auto* sink = static_cast<PngSink*>(png_get_io_ptr(png));
  sink->out->insert(sink->out->end(), data, data + n);
}

inline void png_noop_flush(png_structp) {}

// Kept free of C++ objects with destructors because libpng reports errors by longjmp.
inline bool encode_png_raw(const std::uint8_t* pixels, int width, int height, int channels, const char* comment,
                           std::vector<std::uint8_t>* out) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  PngSink sink{out};
  png_set_write_fn(png, &sink, png_append, png_noop_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_text text;
  if (comment && *comment) {
    text.compression = PNG_TEXT_COMPRESSION_NONE;
    text.key = const_cast<png_charp>("Comment");
    text.text = const_cast<png_charp>(comment);
    text.text_length = 0;
    png_set_text(png, info, &text, 1);
  }
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(pixels + static_cast<std::size_t>(y) * width * channels));
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_png(const GrayImage& img, const std::string& comment = {}) {
  std::vector<std::uint8_t> out;
  if (!detail::encode_png_raw(img.pixels.data(), img.width, img.height, 1, comment.c_str(), &out))
    fail(ErrorCode::IoError, "PNG encoding failed");
  return out;
}

inline std::vector<std::uint8_t> encode_png(const RgbImage& img, const std::string& comment = {}) {
  std::vector<std::uint8_t> out;
  if (!detail::encode_png_raw(img.pixels.data(), img.width, img.height, 3, comment.c_str(), &out))
    fail(ErrorCode::IoError, "PNG encoding failed");
  return out;
}

/// Decodes any PNG to 8-bit RGB.
inline RgbImage decode_png_rgb(const std::vector<std::uint8_t>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    fail(ErrorCode::UnsupportedFormat, std::string("PNG decode failed: ") + image.message);
  image.format = PNG_FORMAT_RGB;
  RgbImage out{static_cast<int>(image.width), static_cast<int>(image.height),
               std::vector<std::uint8_t>(PNG_IMAGE_SIZE(image))};
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorCode::UnsupportedFormat, "PNG decode failed: " + msg);
  }
  return out;
}

inline GrayImage decode_png_gray(const std::vector<std::uint8_t>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    fail(ErrorCode::UnsupportedFormat, std::string("PNG decode failed: ") + image.message);
  image.format = PNG_FORMAT_GRAY;
  GrayImage out(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    fail(ErrorCode::UnsupportedFormat, "PNG decode failed: " + msg);
  }
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
}

}  // namespace peakit
