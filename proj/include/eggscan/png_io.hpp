#pragma once

#include <png.h>

#include <cstdio>
#include <csetjmp>
#include <string>
#include <vector>

#include "eggscan/errors.hpp"
#include "eggscan/image.hpp"

namespace eggscan {

namespace detail {
struct FileCloser {
  std::FILE* fp = nullptr;
  ~FileCloser() {
    if (fp) std::fclose(fp);
  }
};
}  // namespace detail

// Reads an 8-bit grayscale or RGB PNG. Palette images are expanded to RGB,
// 16-bit depth is reduced to 8, alpha is stripped. Any other container is
// out of scope.
inline ImageBuffer read_png(const std::string& path) {
  detail::FileCloser file{std::fopen(path.c_str(), "rb")};
  if (!file.fp) throw io_error("cannot open for reading: " + path);

  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw io_error("libpng: read struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw io_error("libpng: info struct allocation failed");
  }

  ImageBuffer img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw io_error("libpng: failed to decode " + path);
  }

  png_init_io(png, file.fp);
  png_read_info(png, info);

  const png_byte color_type = png_get_color_type(png, info);
  const png_byte bit_depth = png_get_bit_depth(png, info);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8)
    png_set_expand_gray_1_2_4_to_8(png);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
  }
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = static_cast<int>(png_get_channels(png, info));
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw io_error("unsupported PNG channel count " +
                   std::to_string(channels) + " in " + path);
  }

  img = ImageBuffer(width, height, channels);
  rows.resize(height);
  for (int y = 0; y < height; ++y)
    rows[y] = img.pixels.data() +
              static_cast<std::size_t>(y) * width * channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

// Writes img as an 8-bit grayscale (1 channel) or RGB (3 channel) PNG.
inline void write_png(const std::string& path, const ImageBuffer& img) {
  img.check_valid();
  detail::FileCloser file{std::fopen(path.c_str(), "wb")};
  if (!file.fp) throw io_error("cannot open for writing: " + path);

  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw io_error("libpng: write struct allocation failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw io_error("libpng: info struct allocation failed");
  }

  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw io_error("libpng: failed to encode " + path);
  }

  png_init_io(png, file.fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);

  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y)
    rows[y] = const_cast<png_bytep>(
        img.pixels.data() +
        static_cast<std::size_t>(y) * img.width * img.channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace eggscan
