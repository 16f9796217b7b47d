#pragma once

// 8-bit RGB and 16-bit single-channel PNG files through libpng.

#include <png.h>

#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "dqomap/errors.hpp"
#include "dqomap/frame.hpp"

namespace dqo {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_fn(png_structp png, png_const_charp msg) {
  auto* buf = static_cast<std::string*>(png_get_error_ptr(png));
  if (buf) *buf = msg;
  png_longjmp(png, 1);
}
inline void png_warning_fn(png_structp, png_const_charp) {}

// `packed` holds big-endian rows of `row_bytes` each.
inline void write_png_rows(const std::string& path, int width, int height, int color_type, int bit_depth,
                           const std::vector<std::uint8_t>& packed, std::size_t row_bytes) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open " + path + " for writing");
  std::string err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path + ": " + err);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, const_cast<png_bytep>(packed.data() + static_cast<std::size_t>(y) * row_bytes));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct PngData {
  int width = 0, height = 0, channels = 0, bit_depth = 0;
  std::vector<std::uint8_t> rows;  // raw big-endian rows
};

inline PngData read_png_rows(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw ParseError(path, "cannot open file");
  std::uint8_t sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw ParseError(path, "not a PNG file");
  std::string err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, png_error_fn, png_warning_fn);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(path, "libpng initialization failed");
  }
  PngData out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ParseError(path, err.empty() ? "corrupt PNG" : err);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  out.channels = png_get_channels(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  out.rows.resize(row_bytes * out.height);
  for (int y = 0; y < out.height; ++y) png_read_row(png, out.rows.data() + y * row_bytes, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace detail

inline void write_png_rgb8(const std::string& path, const Image<std::uint8_t>& im) {
  if (im.channels() != 3) throw InvalidArgument("RGB PNG needs a 3-channel image");
  detail::write_png_rows(path, im.width(), im.height(), PNG_COLOR_TYPE_RGB, 8, im.data(),
                         static_cast<std::size_t>(im.width()) * 3);
}

inline void write_png_gray16(const std::string& path, const Image<std::uint16_t>& im) {
  std::vector<std::uint8_t> packed(im.data().size() * 2);
  for (std::size_t i = 0; i < im.data().size(); ++i) {
    packed[2 * i] = static_cast<std::uint8_t>(im.data()[i] >> 8);
    packed[2 * i + 1] = static_cast<std::uint8_t>(im.data()[i] & 0xff);
  }
  detail::write_png_rows(path, im.width(), im.height(), PNG_COLOR_TYPE_GRAY, 16, packed,
                         static_cast<std::size_t>(im.width()) * 2);
}

inline Image<std::uint8_t> read_png_rgb8(const std::string& path) {
  const auto d = detail::read_png_rows(path);
  if (d.bit_depth != 8 || d.channels != 3) throw ParseError(path, "expected an 8-bit RGB PNG");
  Image<std::uint8_t> im(d.width, d.height, 3);
  im.data() = d.rows;
  return im;
}

inline Image<std::uint16_t> read_png_gray16(const std::string& path) {
  const auto d = detail::read_png_rows(path);
  if (d.bit_depth != 16 || d.channels != 1) throw ParseError(path, "expected a 16-bit single-channel PNG");
  Image<std::uint16_t> im(d.width, d.height, 1);
  for (std::size_t i = 0; i < im.data().size(); ++i)
    im.data()[i] = static_cast<std::uint16_t>((d.rows[2 * i] << 8) | d.rows[2 * i + 1]);
  return im;
}

}  // namespace dqo
