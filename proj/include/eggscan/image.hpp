#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eggscan/errors.hpp"

namespace eggscan {

// Row-major 8-bit raster, 1 channel (grayscale) or 3 channels (RGB,
// interleaved). The unit every pipeline stage consumes and produces.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c) {
    if (w < 1 || h < 1 || (c != 1 && c != 3))
      throw invalid_input("ImageBuffer: bad dimensions " + std::to_string(w) +
                          "x" + std::to_string(h) + "x" + std::to_string(c));
    pixels.assign(static_cast<std::size_t>(w) * h * c, fill);
  }

  std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }

  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[index(x, y, c)];
  }
  std::uint8_t& at(int x, int y, int c = 0) { return pixels[index(x, y, c)]; }

  bool same_size(const ImageBuffer& o) const {
    return width == o.width && height == o.height;
  }

  void check_valid() const {
    if (width < 1 || height < 1)
      throw invalid_input("ImageBuffer: empty image");
    if (channels != 1 && channels != 3)
      throw invalid_input("ImageBuffer: channels must be 1 or 3, got " +
                          std::to_string(channels));
    if (pixels.size() != static_cast<std::size_t>(width) * height * channels)
      throw invalid_input("ImageBuffer: pixel count does not match dimensions");
  }
};

inline bool operator==(const ImageBuffer& a, const ImageBuffer& b) {
  return a.width == b.width && a.height == b.height &&
         a.channels == b.channels && a.pixels == b.pixels;
}

inline std::uint8_t clamp_u8(double v) {
  if (v <= 0.0) return 0;
  if (v >= 255.0) return 255;
  return static_cast<std::uint8_t>(v + 0.5);  // round half up; v >= 0 here
}

}  // namespace eggscan
