#include "g2/io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace g2::io {

std::uint8_t float_to_byte(float x) {
  long v = std::lround((double(x) + 1.0) * 127.5);
  if (v < 0) v = 0;
  if (v > 255) v = 255;
  return std::uint8_t(v);
}

float byte_to_float(std::uint8_t b) { return float(b) / 127.5f - 1.0f; }

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

}  // namespace

void save_png(const std::string& path, const ImageTensor& image) {
  require(image.res > 0, "save_png: empty image");
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("save_png: cannot open " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw std::runtime_error("save_png: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("save_png: libpng error for " + path);
  }
  png_init_io(png, fp.get());
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, image.res, image.res, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  std::vector<std::uint8_t> row(std::size_t(image.res) * 3);
  for (int y = 0; y < image.res; ++y) {
    for (int x = 0; x < image.res; ++x)
      for (int c = 0; c < 3; ++c)
        row[std::size_t(x) * 3 + c] = float_to_byte(image.at(c, y, x));
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

ImageTensor load_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("load_png: cannot open " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw std::runtime_error("load_png: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("load_png: libpng error for " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  if (w != h) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail_param("load_png: expected a square image: " + path);
  }

  // normalize any color type to 8-bit RGB
  png_byte color = png_get_color_type(png, info);
  png_byte depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  ImageTensor out(static_cast<int>(w));
  std::vector<std::uint8_t> row(std::size_t(w) * 3);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, int(y), int(x)) = byte_to_float(row[std::size_t(x) * 3 + c]);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace g2::io
