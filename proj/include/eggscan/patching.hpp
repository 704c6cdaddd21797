#pragma once

#include <string>
#include <utility>
#include <vector>

#include "eggscan/classes.hpp"
#include "eggscan/errors.hpp"
#include "eggscan/image.hpp"

namespace eggscan {

struct GridConfig {
  int patch_size = 100;
  int stride = 20;  // patch_size/5 realizes the 4/5 overlap

  void check_valid() const {
    if (stride < 1 || stride > patch_size)
      throw config_error("grid: need 1 <= stride <= patch_size");
  }
};

struct Position {
  int x = 0;
  int y = 0;
  friend bool operator==(const Position&, const Position&) = default;
};

struct PatchGrid {
  std::vector<Position> positions;  // row-major: y outer, x inner
  GridConfig config;
  int image_width = 0;
  int image_height = 0;
};

struct BoundingBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;

  void check_valid() const {
    if (w < 1 || h < 1) throw invalid_input("bbox: w and h must be >= 1");
    if (x < 0 || y < 0) throw invalid_input("bbox: negative origin");
  }
  int center_x() const { return x + w / 2; }
  int center_y() const { return y + h / 2; }
};

struct Annotation {
  EggClass class_label = EggClass::AL;  // one of the 4 egg classes
  BoundingBox bbox;

  friend bool operator==(const Annotation&, const Annotation&) = default;

  void check_valid() const {
    if (!is_egg_class(class_label))
      throw invalid_input("annotation class must be an egg class, not BG");
    bbox.check_valid();
  }
};

// A patch crop with its training label and source location.
struct LabeledPatch {
  ImageBuffer patch;
  EggClass label = EggClass::BG;
  Position source;
};

namespace detail {
// Stride lattice along one axis, with the final window clamped to the image
// edge when (extent - patch) is not a multiple of the stride.
inline std::vector<int> axis_positions(int extent, int patch, int stride) {
  std::vector<int> out;
  const int last = extent - patch;
  for (int p = 0; p <= last; p += stride) out.push_back(p);
  if (out.back() != last) out.push_back(last);
  return out;
}
}  // namespace detail

// Deterministic overlapping-window geometry covering every pixel.
inline PatchGrid patch_positions(int width, int height,
                                 const GridConfig& config = {}) {
  config.check_valid();
  if (config.patch_size > width || config.patch_size > height)
    throw invalid_input("patch size " + std::to_string(config.patch_size) +
                        " exceeds image " + std::to_string(width) + "x" +
                        std::to_string(height));

  const std::vector<int> xs =
      detail::axis_positions(width, config.patch_size, config.stride);
  const std::vector<int> ys =
      detail::axis_positions(height, config.patch_size, config.stride);

  PatchGrid grid;
  grid.config = config;
  grid.image_width = width;
  grid.image_height = height;
  grid.positions.reserve(xs.size() * ys.size());
  for (int y : ys)
    for (int x : xs) grid.positions.push_back({x, y});
  return grid;
}

// Crops one patch_size x patch_size window at (x, y). Bounds were validated
// when the grid was built.
inline ImageBuffer crop_patch(const ImageBuffer& image, int x, int y,
                              int patch_size) {
  ImageBuffer out(patch_size, patch_size, image.channels);
  const int row_bytes = patch_size * image.channels;
  for (int v = 0; v < patch_size; ++v) {
    const std::uint8_t* src = image.pixels.data() + image.index(x, y + v);
    std::copy(src, src + row_bytes,
              out.pixels.begin() + static_cast<std::size_t>(v) * row_bytes);
  }
  return out;
}

inline std::vector<std::pair<Position, ImageBuffer>> extract_patches(
    const ImageBuffer& image, const PatchGrid& grid) {
  image.check_valid();
  if (image.width != grid.image_width || image.height != grid.image_height)
    throw invalid_input("extract_patches: grid was built for " +
                        std::to_string(grid.image_width) + "x" +
                        std::to_string(grid.image_height) + ", image is " +
                        std::to_string(image.width) + "x" +
                        std::to_string(image.height));

  std::vector<std::pair<Position, ImageBuffer>> out;
  out.reserve(grid.positions.size());
  for (const Position& p : grid.positions)
    out.emplace_back(p, crop_patch(image, p.x, p.y, grid.config.patch_size));
  return out;
}

namespace detail {
inline bool contains(int px, int py, int patch, const BoundingBox& b) {
  return b.x >= px && b.y >= py && b.x + b.w <= px + patch &&
         b.y + b.h <= py + patch;
}
inline bool intersects(int px, int py, int patch, const BoundingBox& b) {
  return b.x < px + patch && b.x + b.w > px && b.y < py + patch &&
         b.y + b.h > py;
}
}  // namespace detail

// Assigns a training label to every grid position:
//   egg class  — some bbox of that class is fully contained in the patch
//   BG         — the patch touches no bbox at all
//   Excluded   — partial overlap only, or contained boxes of two classes
inline std::vector<std::pair<Position, PatchLabel>> label_patches(
    const PatchGrid& grid, const std::vector<Annotation>& annotations) {
  for (const Annotation& a : annotations) {
    a.check_valid();
    if (a.bbox.w > grid.config.patch_size || a.bbox.h > grid.config.patch_size)
      throw invalid_input("annotation bbox " + std::to_string(a.bbox.w) + "x" +
                          std::to_string(a.bbox.h) + " exceeds patch size " +
                          std::to_string(grid.config.patch_size));
  }

  std::vector<std::pair<Position, PatchLabel>> out;
  out.reserve(grid.positions.size());
  const int patch = grid.config.patch_size;
  for (const Position& p : grid.positions) {
    bool any_intersection = false;
    bool multi_class = false;
    int contained_class = -1;
    for (const Annotation& a : annotations) {
      if (detail::contains(p.x, p.y, patch, a.bbox)) {
        const int c = static_cast<int>(a.class_label);
        if (contained_class >= 0 && contained_class != c) multi_class = true;
        contained_class = c;
        any_intersection = true;
      } else if (detail::intersects(p.x, p.y, patch, a.bbox)) {
        any_intersection = true;
      }
    }
    PatchLabel label;
    if (multi_class)
      label = PatchLabel::Excluded;
    else if (contained_class >= 0)
      label = static_cast<PatchLabel>(contained_class);
    else if (any_intersection)
      label = PatchLabel::Excluded;
    else
      label = PatchLabel::BG;
    out.emplace_back(p, label);
  }
  return out;
}

}  // namespace eggscan
