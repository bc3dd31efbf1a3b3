#include "ha2f/png_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <png.h>

#include "ha2f/errors.hpp"

namespace ha2f {

namespace {

struct FileCloser {
  FILE* f;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

}  // namespace

Image read_png(const std::string& path) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open " + path);
  FileCloser closer{f};

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("failed to decode " + path);
  }
  png_init_io(png, f);
  png_read_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("unsupported channel count in " + path);
  }

  std::vector<png_byte> row(static_cast<size_t>(w) * channels);
  Image img;
  img.h = static_cast<int>(h);
  img.w = static_cast<int>(w);
  img.c = channels;
  img.v.resize(static_cast<size_t>(channels) * h * w);
  for (png_uint_32 y = 0; y < h; ++y) {
    png_read_row(png, row.data(), nullptr);
    for (png_uint_32 x = 0; x < w; ++x)
      for (int ch = 0; ch < channels; ++ch)
        img.v[(static_cast<size_t>(ch) * h + y) * w + x] = row[x * channels + ch] / 255.0;
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::string& path, const Image& img) {
  if (img.c != 1 && img.c != 3) throw DataError("write_png: channels must be 1 or 3");
  std::vector<uint8_t> bytes(static_cast<size_t>(img.h) * img.w * img.c);
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int ch = 0; ch < img.c; ++ch) {
        const double v = std::clamp(img.at(ch, y, x), 0.0, 1.0);
        bytes[(static_cast<size_t>(y) * img.w + x) * img.c + ch] =
            static_cast<uint8_t>(std::lround(v * 255.0));
      }

  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("cannot write " + path);
  FileCloser closer{f};
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw DataError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("failed to encode " + path);
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, img.w, img.h, 8,
               img.c == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.h; ++y)
    png_write_row(png, const_cast<png_bytep>(bytes.data() + static_cast<size_t>(y) * img.w * img.c));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_png_rgb8(const std::string& path, int h, int w, const std::vector<uint8_t>& rgb) {
  if (rgb.size() != static_cast<size_t>(h) * w * 3)
    throw DataError("write_png_rgb8: buffer size mismatch");
  Image img;
  img.h = h;
  img.w = w;
  img.c = 3;
  img.v.resize(rgb.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        img.v[(static_cast<size_t>(ch) * h + y) * w + x] =
            rgb[(static_cast<size_t>(y) * w + x) * 3 + ch] / 255.0;
  write_png(path, img);
}

}  // namespace ha2f
