#pragma once

// 8-bit PNG in and out. Values are treated as linear; no color management.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "binary_io.hpp"
#include "errors.hpp"
#include "tensor.hpp"

namespace moments_nerf {

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

/// Reads any PNG as H x W x 3 in [0, 1]. Gray is expanded, alpha dropped, 16-bit reduced.
inline Tensor<double> read_png(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw LoadError("cannot open image " + path);
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw LoadError("not a PNG file: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw LoadError("libpng initialisation failed");
  }
  std::vector<png_byte> pixels;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw LoadError("corrupt PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * h);
  rows.resize(h);
  for (int i = 0; i < h; ++i) rows[i] = pixels.data() + stride * i;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor<double> img({h, w, 3});
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c) img.at(i, j, c) = rows[i][3 * j + c] / 255.0;
  return img;
}

/// Writes an H x W x 3 (or H x W gray) tensor; values are clamped to [0, 1] and rounded.
template <class T>
void write_png(const std::string& path, const Tensor<T>& img) {
  require((img.rank() == 3 && img.dim(2) == 3) || img.rank() == 2, "write_png: expected H x W x 3 or H x W, got " +
                                                                       shape_str(img.shape));
  const int h = img.dim(0);
  const int w = img.dim(1);
  const int ch = img.rank() == 3 ? 3 : 1;
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  std::vector<png_byte> row(static_cast<std::size_t>(w) * ch);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("failed writing PNG " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, ch == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int i = 0; i < h; ++i) {
    for (int k = 0; k < w * ch; ++k) {
      const double v = static_cast<double>(img.data[static_cast<std::size_t>(i) * w * ch + k]);
      row[k] = static_cast<png_byte>(std::lround(std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0) * 255.0));
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Float dump: "MIMG", u32 H, W, C, then H*W*C little-endian f32, row-major.
inline void write_raw_image(const std::string& path, const Tensor<double>& img) {
  require(img.rank() == 3, "write_raw_image: expected H x W x C");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os.write("MIMG", 4);
  for (int d = 0; d < 3; ++d) binary::put_u32(os, static_cast<std::uint32_t>(img.dim(d)));
  for (double v : img.data) binary::put_f32(os, static_cast<float>(v));
}

inline Tensor<double> read_raw_image(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open raw image " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "MIMG") throw LoadError("raw image: bad magic in " + path);
  const int h = static_cast<int>(binary::get_u32(is));
  const int w = static_cast<int>(binary::get_u32(is));
  const int c = static_cast<int>(binary::get_u32(is));
  Tensor<double> img({h, w, c});
  for (auto& v : img.data) v = binary::get_f32(is);
  if (!is) throw LoadError("raw image: truncated data in " + path);
  return img;
}

/// Rounds to the 8-bit grid that write_png/read_png round-trip exactly.
inline Tensor<double> quantize8(Tensor<double> img) {
  for (auto& v : img.data) v = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return img;
}

}  // namespace moments_nerf
