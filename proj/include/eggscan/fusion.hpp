#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eggscan/classes.hpp"
#include "eggscan/classifier.hpp"
#include "eggscan/errors.hpp"
#include "eggscan/image.hpp"
#include "eggscan/patching.hpp"
#include "eggscan/preprocess.hpp"

namespace eggscan {

// Patch-sized weight window. Coordinates are normalized so the patch spans
// [-1,1] on each axis; sigma=1 keeps a meaningful taper (corner weight 1/e).
struct GaussianKernel {
  int side = 0;
  double sigma = 1.0;
  std::vector<double> weights;  // side*side, row-major

  double at(int x, int y) const { return weights[static_cast<std::size_t>(y) * side + x]; }
};

inline GaussianKernel gaussian_kernel(int side, double sigma = 1.0) {
  if (side < 1) throw invalid_input("gaussian_kernel: side must be >= 1");
  if (!(sigma > 0.0)) throw invalid_input("gaussian_kernel: sigma must be > 0");
  GaussianKernel k;
  k.side = side;
  k.sigma = sigma;
  k.weights.resize(static_cast<std::size_t>(side) * side);
  const double half = (side - 1) / 2.0;
  for (int y = 0; y < side; ++y) {
    const double v = (side == 1) ? 0.0 : (y - half) / half;
    for (int x = 0; x < side; ++x) {
      const double u = (side == 1) ? 0.0 : (x - half) / half;
      k.weights[static_cast<std::size_t>(y) * side + x] =
          std::exp(-(u * u + v * v) / (2.0 * sigma * sigma));
    }
  }
  return k;
}

// Per-pixel 5-class distribution over a whole image, channel-minor layout.
struct ProbabilityMap {
  int width = 0;
  int height = 0;
  std::vector<double> data;  // width*height*kNumClasses

  double at(int x, int y, int c) const {
    return data[(static_cast<std::size_t>(y) * width + x) * kNumClasses + c];
  }
  double& at(int x, int y, int c) {
    return data[(static_cast<std::size_t>(y) * width + x) * kNumClasses + c];
  }
};

// Gaussian-weighted average of all patch distributions covering each pixel.
// Accumulation walks patches in input order, so results are bit-stable.
inline ProbabilityMap fuse(std::span<const Position> positions,
                           std::span<const ClassProbabilities> probs,
                           const GaussianKernel& kernel, int width,
                           int height) {
  if (positions.size() != probs.size())
    throw invalid_input("fuse: positions and probabilities differ in length");
  if (positions.empty()) throw invalid_input("fuse: no patches");

  ProbabilityMap map;
  map.width = width;
  map.height = height;
  map.data.assign(static_cast<std::size_t>(width) * height * kNumClasses, 0.0);
  std::vector<double> weight_sum(static_cast<std::size_t>(width) * height, 0.0);

  const int side = kernel.side;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const Position& pos = positions[i];
    if (pos.x < 0 || pos.y < 0 || pos.x + side > width || pos.y + side > height)
      throw invalid_input("fuse: patch outside the image");
    const std::array<double, kNumClasses>& p = probs[i].p;
    for (int v = 0; v < side; ++v) {
      const std::size_t row = static_cast<std::size_t>(pos.y + v) * width + pos.x;
      const double* krow = kernel.weights.data() + static_cast<std::size_t>(v) * side;
      for (int u = 0; u < side; ++u) {
        const double w = krow[u];
        weight_sum[row + u] += w;
        double* cell = map.data.data() + (row + u) * kNumClasses;
        for (int c = 0; c < kNumClasses; ++c) cell[c] += w * p[c];
      }
    }
  }

  for (std::size_t q = 0; q < weight_sum.size(); ++q) {
    if (weight_sum[q] <= 0.0)
      throw invalid_input("fuse: a pixel is covered by no patch");
    const double inv = 1.0 / weight_sum[q];
    double* cell = map.data.data() + q * kNumClasses;
    for (int c = 0; c < kNumClasses; ++c) cell[c] *= inv;
  }
  return map;
}

// Image-level prediction with peak location.
struct Detection {
  std::optional<EggClass> label;  // one of the 4 egg classes; nullopt = NONE
  int x = 0;
  int y = 0;
  double confidence = 0.0;
};

// Per egg class, find the map's peak value; the winning class is the argmax
// over those peaks (ties broken by class order). BG never competes: it
// dominates nearly every pixel, so a confidence threshold supplies the NONE
// case instead.
inline Detection predict_image(const ProbabilityMap& map,
                               double threshold = 0.5) {
  std::array<double, kEggClassCount> peak{};
  std::array<int, kEggClassCount> px{};
  std::array<int, kEggClassCount> py{};
  peak.fill(-1.0);
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      for (int c = 0; c < kEggClassCount; ++c) {
        const double v = map.at(x, y, c);
        if (v > peak[c]) {  // strict: first pixel attaining the max wins
          peak[c] = v;
          px[c] = x;
          py[c] = y;
        }
      }
    }
  }
  int winner = 0;
  for (int c = 1; c < kEggClassCount; ++c)
    if (peak[c] > peak[winner]) winner = c;

  Detection det;
  det.confidence = peak[winner];
  if (peak[winner] >= threshold) {
    det.label = static_cast<EggClass>(winner);
    det.x = px[winner];
    det.y = py[winner];
  }
  return det;
}

namespace detail {

// 5x7 bitmap glyphs for the overlay legend (classes, digits, separators).
inline const std::array<std::uint8_t, 7>* legend_glyph(char ch) {
  using G = std::array<std::uint8_t, 7>;
  static const G A{0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11};
  static const G B{0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E};
  static const G D{0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E};
  static const G E{0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F};
  static const G F{0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10};
  static const G H{0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11};
  static const G L{0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F};
  static const G N{0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11};
  static const G O{0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E};
  static const G T{0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04};
  static const G n{0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11};
  static const G d0{0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E};
  static const G d1{0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E};
  static const G d2{0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F};
  static const G d3{0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E};
  static const G d4{0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02};
  static const G d5{0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E};
  static const G d6{0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E};
  static const G d7{0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08};
  static const G d8{0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E};
  static const G d9{0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C};
  static const G dot{0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C};
  switch (ch) {
    case 'A': return &A;
    case 'B': return &B;
    case 'D': return &D;
    case 'E': return &E;
    case 'F': return &F;
    case 'H': return &H;
    case 'L': return &L;
    case 'N': return &N;
    case 'O': return &O;
    case 'T': return &T;
    case 'n': return &n;
    case '0': return &d0;
    case '1': return &d1;
    case '2': return &d2;
    case '3': return &d3;
    case '4': return &d4;
    case '5': return &d5;
    case '6': return &d6;
    case '7': return &d7;
    case '8': return &d8;
    case '9': return &d9;
    case '.': return &dot;
    default: return nullptr;  // space and anything unknown
  }
}

inline void draw_legend_text(ImageBuffer& rgb, const std::string& text, int x0,
                             int y0, int scale) {
  int cx = x0;
  for (char ch : text) {
    const auto* glyph = legend_glyph(ch);
    if (glyph) {
      for (int gy = 0; gy < 7; ++gy)
        for (int gx = 0; gx < 5; ++gx)
          if ((*glyph)[gy] >> (4 - gx) & 1)
            for (int sy = 0; sy < scale; ++sy)
              for (int sx = 0; sx < scale; ++sx) {
                const int x = cx + gx * scale + sx;
                const int y = y0 + gy * scale + sy;
                if (x >= 0 && x < rgb.width && y >= 0 && y < rgb.height)
                  for (int c = 0; c < 3; ++c) rgb.at(x, y, c) = 255;
              }
    }
    cx += 6 * scale;
  }
}

}  // namespace detail

// Renders the winning-class channel as a red tint over the grayscale image,
// marks the detection peak, and stamps "<class> <confidence>" top-left.
// A NONE detection passes the grayscale through untouched.
inline ImageBuffer render_overlay(const ImageBuffer& image,
                                  const ProbabilityMap& map,
                                  const Detection& detection) {
  const ImageBuffer gray = to_grayscale(image);
  if (gray.width != map.width || gray.height != map.height)
    throw invalid_input("render_overlay: map size does not match image");

  ImageBuffer rgb(gray.width, gray.height, 3);
  for (int y = 0; y < gray.height; ++y)
    for (int x = 0; x < gray.width; ++x) {
      const std::uint8_t g = gray.at(x, y);
      rgb.at(x, y, 0) = g;
      rgb.at(x, y, 1) = g;
      rgb.at(x, y, 2) = g;
    }
  if (!detection.label) return rgb;

  const int channel = static_cast<int>(*detection.label);
  for (int y = 0; y < gray.height; ++y)
    for (int x = 0; x < gray.width; ++x) {
      const double v = map.at(x, y, channel);
      const double g = gray.at(x, y);
      rgb.at(x, y, 0) = clamp_u8(g + (255.0 - g) * v);
      rgb.at(x, y, 1) = clamp_u8(g * (1.0 - 0.8 * v));
      rgb.at(x, y, 2) = clamp_u8(g * (1.0 - 0.8 * v));
    }

  // crosshair at the peak
  for (int d = -8; d <= 8; ++d) {
    const int x = detection.x + d;
    const int y = detection.y + d;
    if (x >= 0 && x < rgb.width) {
      rgb.at(x, detection.y, 0) = 0;
      rgb.at(x, detection.y, 1) = 255;
      rgb.at(x, detection.y, 2) = 0;
    }
    if (y >= 0 && y < rgb.height) {
      rgb.at(detection.x, y, 0) = 0;
      rgb.at(detection.x, y, 1) = 255;
      rgb.at(detection.x, y, 2) = 0;
    }
  }

  char legend[32];
  std::snprintf(legend, sizeof(legend), "%s %.2f",
                std::string(class_name(*detection.label)).c_str(),
                detection.confidence);
  detail::draw_legend_text(rgb, legend, 4, 4, 2);
  return rgb;
}

// ---- Probability map dump ------------------------------------------------
// <path>: flat little-endian float32, pixel-major, channel-minor.
// <path>.json sidecar: width, height, channel order.

inline void save_probability_map(const std::string& path,
                                 const ProbabilityMap& map) {
  std::ofstream bin(path, std::ios::binary);
  if (!bin) throw io_error("cannot write map: " + path);
  std::vector<float> flat(map.data.size());
  for (std::size_t i = 0; i < flat.size(); ++i)
    flat[i] = static_cast<float>(map.data[i]);
  bin.write(reinterpret_cast<const char*>(flat.data()),
            static_cast<std::streamsize>(flat.size() * sizeof(float)));
  if (!bin) throw io_error("short write on map: " + path);
  bin.close();

  std::ofstream side(path + ".json");
  if (!side) throw io_error("cannot write sidecar: " + path + ".json");
  side << "{\n  \"width\": " << map.width << ",\n  \"height\": " << map.height
       << ",\n  \"channels\": [\"AL\", \"HD\", \"FB\", \"Tn\", \"BG\"]\n}\n";
}

inline ProbabilityMap load_probability_map(const std::string& path, int width,
                                           int height) {
  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw io_error("cannot read map: " + path);
  ProbabilityMap map;
  map.width = width;
  map.height = height;
  std::vector<float> flat(static_cast<std::size_t>(width) * height *
                          kNumClasses);
  bin.read(reinterpret_cast<char*>(flat.data()),
           static_cast<std::streamsize>(flat.size() * sizeof(float)));
  if (bin.gcount() !=
      static_cast<std::streamsize>(flat.size() * sizeof(float)))
    throw io_error("map file truncated: " + path);
  map.data.assign(flat.begin(), flat.end());
  return map;
}

}  // namespace eggscan
