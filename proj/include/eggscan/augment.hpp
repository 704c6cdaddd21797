#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eggscan/classes.hpp"
#include "eggscan/errors.hpp"
#include "eggscan/image.hpp"
#include "eggscan/patching.hpp"
#include "eggscan/rng.hpp"

namespace eggscan {

struct AugmentSpec {
  double flip_h_prob = 0.5;
  double flip_v_prob = 0.5;
  double rotation_min_deg = 0.0;
  double rotation_max_deg = 160.0;
  int shift_grid = 50;
  int target_per_class = 10000;
  std::uint64_t seed = 0;

  void check_valid() const {
    if (!(rotation_min_deg >= 0.0 && rotation_max_deg < 360.0 &&
          rotation_min_deg <= rotation_max_deg))
      throw config_error("augment.rotation range must lie within [0,360)");
    if (target_per_class < 1)
      throw config_error("augment.target_per_class must be >= 1");
    if (shift_grid < 1) throw config_error("augment.shift_grid must be >= 1");
  }
};

// One sampled transform. The order of application is fixed:
// crop -> rotate -> flip.
struct AugmentDraw {
  bool flip_h = false;
  bool flip_v = false;
  double angle_deg = 0.0;
  int dx = 0;  // window shift on the shift_grid lattice
  int dy = 0;
};

inline AugmentDraw identity_draw() { return {}; }

// Fixed consumption order (flip_h, flip_v, angle, dx, dy) so a draw sequence
// is reproducible from the seed alone.
inline AugmentDraw sample_draw(Rng& rng, const AugmentSpec& spec) {
  AugmentDraw d;
  d.flip_h = rng.bernoulli(spec.flip_h_prob);
  d.flip_v = rng.bernoulli(spec.flip_v_prob);
  d.angle_deg = rng.uniform(spec.rotation_min_deg, spec.rotation_max_deg);
  d.dx = spec.shift_grid * rng.uniform_int(-1, 1);
  d.dy = spec.shift_grid * rng.uniform_int(-1, 1);
  return d;
}

namespace detail {

inline std::uint8_t median_intensity(const ImageBuffer& patch) {
  std::vector<std::uint8_t> sorted = patch.pixels;
  std::sort(sorted.begin(), sorted.end());
  return sorted[(sorted.size() - 1) / 2];
}

// Rotate about the patch center with bilinear interpolation; pixels sampled
// outside the patch take the patch's median intensity.
inline ImageBuffer rotate_patch(const ImageBuffer& patch, double angle_deg) {
  if (angle_deg == 0.0) return patch;
  const int side = patch.width;
  const double center = (side - 1) / 2.0;
  const double rad = angle_deg * 3.14159265358979323846 / 180.0;
  const double c = std::cos(rad);
  const double s = std::sin(rad);
  const std::uint8_t fill = median_intensity(patch);

  ImageBuffer out(side, side, 1);
  for (int y = 0; y < side; ++y) {
    const double ry = y - center;
    for (int x = 0; x < side; ++x) {
      const double rx = x - center;
      // inverse rotation: where did this output pixel come from
      const double sx = c * rx + s * ry + center;
      const double sy = -s * rx + c * ry + center;
      if (sx < 0.0 || sy < 0.0 || sx > side - 1 || sy > side - 1) {
        out.at(x, y) = fill;
        continue;
      }
      const int x0 = static_cast<int>(sx);
      const int y0 = static_cast<int>(sy);
      const int x1 = std::min(x0 + 1, side - 1);
      const int y1 = std::min(y0 + 1, side - 1);
      const double fx = sx - x0;
      const double fy = sy - y0;
      const double top =
          (1.0 - fx) * patch.at(x0, y0) + fx * patch.at(x1, y0);
      const double bot =
          (1.0 - fx) * patch.at(x0, y1) + fx * patch.at(x1, y1);
      out.at(x, y) = clamp_u8((1.0 - fy) * top + fy * bot);
    }
  }
  return out;
}

inline void flip_horizontal(ImageBuffer& img) {
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width / 2; ++x)
      std::swap(img.at(x, y), img.at(img.width - 1 - x, y));
}

inline void flip_vertical(ImageBuffer& img) {
  for (int y = 0; y < img.height / 2; ++y)
    for (int x = 0; x < img.width; ++x)
      std::swap(img.at(x, y), img.at(x, img.height - 1 - y));
}

}  // namespace detail

// Applies one draw to an egg annotation: crop a patch window centered on the
// shifted egg center (clamped to image bounds), rotate, then flip. Returns
// nullopt when the shift pushes the egg's bbox center out of the clamped
// window; the caller retries with another draw.
inline std::optional<ImageBuffer> transform_sample(
    const ImageBuffer& image, const Annotation& annotation,
    const AugmentDraw& draw, int patch_size = 100,
    Position* window_out = nullptr) {
  image.check_valid();
  if (image.channels != 1)
    throw invalid_input("transform_sample expects a grayscale image");
  annotation.check_valid();
  if (patch_size > image.width || patch_size > image.height)
    throw invalid_input("transform_sample: patch larger than image");

  const int cx = annotation.bbox.center_x();
  const int cy = annotation.bbox.center_y();
  const int tx = std::clamp(cx + draw.dx - patch_size / 2, 0,
                            image.width - patch_size);
  const int ty = std::clamp(cy + draw.dy - patch_size / 2, 0,
                            image.height - patch_size);
  if (cx < tx || cx > tx + patch_size - 1 || cy < ty ||
      cy > ty + patch_size - 1)
    return std::nullopt;

  ImageBuffer patch = crop_patch(image, tx, ty, patch_size);
  patch = detail::rotate_patch(patch, draw.angle_deg);
  if (draw.flip_h) detail::flip_horizontal(patch);
  if (draw.flip_v) detail::flip_vertical(patch);
  if (window_out) *window_out = {tx, ty};
  return patch;
}

// One labelled source image, preprocessed, with its BG patch positions
// (computed by label_patches) available for background sampling.
struct TrainingSource {
  ImageBuffer image;  // grayscale, preprocessed
  std::vector<Annotation> annotations;
  std::vector<Position> bg_positions;
};

namespace detail {
struct AnnotationRef {
  std::size_t source = 0;
  std::size_t annotation = 0;
};
}  // namespace detail

// Streaming balanced-set builder: emits exactly target_per_class patches for
// each egg class (originals first, then augmented samples cycling over the
// class's annotations), then target_per_class BG patches (without
// replacement when the pool suffices, with replacement otherwise). Emission
// order and content are deterministic given spec.seed; each sample draws
// from its own index-derived random stream.
inline void build_balanced_set_stream(
    std::span<const TrainingSource> sources, const AugmentSpec& spec,
    const std::function<void(const LabeledPatch&)>& sink, int patch_size = 100) {
  spec.check_valid();

  std::array<std::vector<detail::AnnotationRef>, kEggClassCount> refs;
  std::size_t bg_pool = 0;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    for (std::size_t a = 0; a < sources[s].annotations.size(); ++a) {
      const Annotation& ann = sources[s].annotations[a];
      ann.check_valid();
      refs[static_cast<int>(ann.class_label)].push_back({s, a});
    }
    bg_pool += sources[s].bg_positions.size();
  }
  for (int k = 0; k < kEggClassCount; ++k)
    if (refs[k].empty())
      throw config_error(
          "augment: no annotations for class " +
          std::string(class_name(static_cast<EggClass>(k))));
  if (bg_pool == 0) throw config_error("augment: empty background pool");

  const int target = spec.target_per_class;
  for (int k = 0; k < kEggClassCount; ++k) {
    const auto& class_refs = refs[k];
    const std::uint64_t class_seed = mix_seed(spec.seed, 100 + k);
    for (int i = 0; i < target; ++i) {
      const bool original = i < static_cast<int>(class_refs.size());
      const std::size_t ref_idx =
          original ? static_cast<std::size_t>(i)
                   : (static_cast<std::size_t>(i) - class_refs.size()) %
                         class_refs.size();
      const detail::AnnotationRef ref = class_refs[ref_idx];
      const TrainingSource& src = sources[ref.source];
      const Annotation& ann = src.annotations[ref.annotation];

      std::optional<ImageBuffer> patch;
      Position window;
      if (original) {
        patch = transform_sample(src.image, ann, identity_draw(), patch_size,
                                 &window);
      } else {
        Rng rng(mix_seed(class_seed, static_cast<std::uint64_t>(i)));
        for (int attempt = 0; attempt < 64 && !patch; ++attempt)
          patch = transform_sample(src.image, ann, sample_draw(rng, spec),
                                   patch_size, &window);
        if (!patch) {
          // center the window; only the shift can invalidate a draw
          AugmentDraw d = sample_draw(rng, spec);
          d.dx = 0;
          d.dy = 0;
          patch = transform_sample(src.image, ann, d, patch_size, &window);
        }
      }
      LabeledPatch lp;
      lp.patch = std::move(*patch);
      lp.label = static_cast<EggClass>(k);
      lp.source = window;
      sink(lp);
    }
  }

  // Background block.
  std::vector<std::pair<std::size_t, Position>> pool;
  pool.reserve(bg_pool);
  for (std::size_t s = 0; s < sources.size(); ++s)
    for (const Position& p : sources[s].bg_positions) pool.emplace_back(s, p);

  Rng bg_rng(mix_seed(spec.seed, 7));
  const auto emit_bg = [&](std::size_t pool_idx) {
    const auto& [s, pos] = pool[pool_idx];
    LabeledPatch lp;
    lp.patch = crop_patch(sources[s].image, pos.x, pos.y, patch_size);
    lp.label = EggClass::BG;
    lp.source = pos;
    sink(lp);
  };
  if (pool.size() >= static_cast<std::size_t>(target)) {
    for (std::size_t idx :
         bg_rng.sample_without_replacement(pool.size(), target))
      emit_bg(idx);
  } else {
    for (int i = 0; i < target; ++i)
      emit_bg(static_cast<std::size_t>(bg_rng.uniform_index(pool.size())));
  }
}

inline std::vector<LabeledPatch> build_balanced_set(
    std::span<const TrainingSource> sources, const AugmentSpec& spec,
    int patch_size = 100) {
  std::vector<LabeledPatch> out;
  out.reserve(static_cast<std::size_t>(spec.target_per_class) * kNumClasses);
  build_balanced_set_stream(
      sources, spec, [&](const LabeledPatch& lp) { out.push_back(lp); },
      patch_size);
  return out;
}

}  // namespace eggscan
