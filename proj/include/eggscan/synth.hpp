#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "eggscan/classes.hpp"
#include "eggscan/errors.hpp"
#include "eggscan/image.hpp"
#include "eggscan/manifest.hpp"
#include "eggscan/patching.hpp"
#include "eggscan/png_io.hpp"
#include "eggscan/rng.hpp"

namespace eggscan {

struct SynthSpec {
  int width = 640;
  int height = 480;
  int eggs_min = 1;
  int eggs_max = 3;
  // image counts per class in the source data, used as the class mix
  std::array<double, kEggClassCount> class_mix = {67.0 / 162.0, 27.0 / 162.0,
                                                  32.0 / 162.0, 36.0 / 162.0};
  int debris_min = 3;
  int debris_max = 8;
  double noise_sigma = 5.0;
  std::uint64_t seed = 0;

  void check_valid() const {
    if (width < 120 || height < 120)
      throw config_error("synth.image_size too small");
    if (!(eggs_min >= 1 && eggs_min <= eggs_max && eggs_max <= 3))
      throw config_error("synth.eggs_per_image must lie within [1,3]");
    double sum = 0.0;
    for (double w : class_mix) {
      if (w < 0.0) throw config_error("synth.class_mix weights must be >= 0");
      sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-6)
      throw config_error("synth.class_mix must sum to 1");
    if (!(debris_min >= 0 && debris_min <= debris_max))
      throw config_error("synth.debris_count range is invalid");
    if (noise_sigma < 0.0) throw config_error("synth.noise_sigma must be >= 0");
  }
};

// Caricatured appearance of one egg class: ellipse geometry, rim ring and
// interior statistics. Axes are full lengths in pixels.
struct ClassAppearance {
  double major_min = 40.0;
  double major_max = 60.0;
  double ratio_min = 0.7;  // minor/major
  double ratio_max = 0.9;
  double rim_lo = 40.0;  // rim ring darkness (intensity delta)
  double rim_hi = 60.0;
  double rim_width = 3.0;       // ring thickness in px
  double texture_amp = 8.0;     // interior texture amplitude
  double mean_offset = -15.0;   // interior intensity vs background
  bool radial_texture = false;  // striated rim texture instead of mottle
};

// Defaults keep the four classes pairwise separable in at least one of
// (area, eccentricity, rim contrast), and legible after a 3x downscale.
// Every class is a filled blob whose interior level sits in its own rung
// of a uniform ladder (Tn -48, AL -24, FB +24, HD +48 against the local
// background): a filled region reads the same wherever the egg sits in a
// window, unlike a thin ring, which a downscaled classifier only
// recognises at the exact positions it was trained on. The rungs sit
// inside the +/-60 shading band, so the preprocessing stretch rescales
// them consistently instead of clipping them.
inline std::array<ClassAppearance, kEggClassCount> default_appearances() {
  std::array<ClassAppearance, kEggClassCount> a;
  // AL: elongated oval, clear dark rim, mottled medium-dark interior
  a[0] = {72.0, 80.0, 0.56, 0.64, 25.0, 35.0, 3.0, 8.0, -24.0, false};
  // HD: near-circular, strongly bright disc with a crisp outlined edge
  a[1] = {58.0, 66.0, 0.92, 1.00, 20.0, 30.0, 3.0, 4.0, 48.0, false};
  // FB: largest, mildly bright filled oval, faint rim
  a[2] = {86.0, 94.0, 0.66, 0.78, 6.0, 14.0, 4.0, 4.0, 24.0, false};
  // Tn: smallest, very dark round disc, thick dark rim
  a[3] = {42.0, 48.0, 0.92, 1.00, 50.0, 60.0, 5.0, 5.0, -48.0, false};
  return a;
}

// One sampled egg instance.
struct EggParams {
  EggClass cls = EggClass::AL;
  double cx = 0.0, cy = 0.0;
  double semi_major = 0.0, semi_minor = 0.0;
  double angle = 0.0;  // radians
  double rim_contrast = 0.0;
  double texture_amp = 0.0;
  double mean_offset = 0.0;
  double rim_width = 3.0;
  double tex_fx = 0.0, tex_fy = 0.0, tex_px = 0.0, tex_py = 0.0;
  double stripe_count = 0.0, stripe_phase = 0.0;
  bool radial_texture = false;

  double area() const { return 3.14159265358979323846 * semi_major * semi_minor; }
  double eccentricity() const {
    const double q = semi_minor / semi_major;
    return std::sqrt(std::max(0.0, 1.0 - q * q));
  }
  // Tight axis-aligned extent half-widths of the rotated ellipse.
  double half_extent_x() const {
    const double c = std::cos(angle), s = std::sin(angle);
    return std::sqrt(semi_major * semi_major * c * c +
                     semi_minor * semi_minor * s * s);
  }
  double half_extent_y() const {
    const double c = std::cos(angle), s = std::sin(angle);
    return std::sqrt(semi_major * semi_major * s * s +
                     semi_minor * semi_minor * c * c);
  }
  BoundingBox bbox() const {
    const int x0 = static_cast<int>(std::floor(cx - half_extent_x() - 1.0));
    const int y0 = static_cast<int>(std::floor(cy - half_extent_y() - 1.0));
    const int x1 = static_cast<int>(std::ceil(cx + half_extent_x() + 1.0));
    const int y1 = static_cast<int>(std::ceil(cy + half_extent_y() + 1.0));
    return {x0, y0, x1 - x0, y1 - y0};
  }
};

// Geometry and intensity draws for one egg; placement is sampled separately.
inline EggParams sample_egg_params(EggClass cls, const ClassAppearance& app,
                                   Rng& rng) {
  EggParams e;
  e.cls = cls;
  e.semi_major = rng.uniform(app.major_min, app.major_max) / 2.0;
  e.semi_minor = e.semi_major * rng.uniform(app.ratio_min, app.ratio_max);
  e.angle = rng.uniform(0.0, 3.14159265358979323846);
  e.rim_contrast = rng.uniform(app.rim_lo, app.rim_hi);
  e.texture_amp = app.texture_amp;
  e.mean_offset = app.mean_offset;
  e.rim_width = app.rim_width;
  e.radial_texture = app.radial_texture;
  e.tex_fx = rng.uniform(0.45, 0.8);
  e.tex_fy = rng.uniform(0.45, 0.8);
  e.tex_px = rng.uniform(0.0, 6.28);
  e.tex_py = rng.uniform(0.0, 6.28);
  e.stripe_count = std::floor(rng.uniform(10.0, 16.0));
  e.stripe_phase = rng.uniform(0.0, 6.28);
  return e;
}

namespace detail {

inline bool boxes_intersect(const BoundingBox& a, const BoundingBox& b) {
  return a.x < b.x + b.w && a.x + a.w > b.x && a.y < b.y + b.h &&
         a.y + a.h > b.y;
}

// Paints one egg into the working raster. Signed distance to the rim is
// approximated via the gradient of the normalized ellipse radius, good to a
// fraction of a pixel near the boundary.
inline void paint_egg(std::vector<double>& raster, int width, int height,
                      const EggParams& e) {
  // The ring band reaches up to 3 rim widths past the ellipse edge; paint
  // over a correspondingly larger rect than the (tight) annotation box so
  // wide rims fade out instead of being sliced off at the box edge.
  const BoundingBox box = e.bbox();
  const int pad = static_cast<int>(std::ceil(3.0 * e.rim_width));
  const int x0 = std::max(0, box.x - pad);
  const int y0 = std::max(0, box.y - pad);
  const int x1 = std::min(width, box.x + box.w + pad);
  const int y1 = std::min(height, box.y + box.h + pad);
  const double c = std::cos(e.angle), s = std::sin(e.angle);
  const double a2 = e.semi_major * e.semi_major;
  const double b2 = e.semi_minor * e.semi_minor;

  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      const double dx = x - e.cx;
      const double dy = y - e.cy;
      const double lx = c * dx + s * dy;
      const double ly = -s * dx + c * dy;
      const double r2 = lx * lx / a2 + ly * ly / b2;
      const double r = std::sqrt(r2);
      double dist;  // px, positive outside the rim
      if (r < 1e-9) {
        dist = -std::min(e.semi_major, e.semi_minor);
      } else {
        const double grad =
            std::sqrt(lx * lx / (a2 * a2) + ly * ly / (b2 * b2)) / r;
        dist = (r - 1.0) / std::max(grad, 1e-9);
      }
      if (dist > 3.0 * e.rim_width) continue;

      double delta = 0.0;
      const double coverage = std::clamp(0.5 - dist, 0.0, 1.0);  // AA edge
      if (coverage > 0.0) {
        double tex;
        if (e.radial_texture) {
          const double theta = std::atan2(ly, lx);
          tex = e.texture_amp *
                std::sin(e.stripe_count * theta + e.stripe_phase);
        } else {
          tex = e.texture_amp * std::sin(e.tex_fx * lx + e.tex_px) *
                std::sin(e.tex_fy * ly + e.tex_py);
        }
        delta += coverage * (e.mean_offset + tex);
      }
      const double half = e.rim_width / 2.0;
      delta -= e.rim_contrast * std::exp(-dist * dist / (2.0 * half * half));
      raster[static_cast<std::size_t>(y) * width + x] += delta;
    }
  }
}

// Dark irregular blobs (clusters of small soft ellipses) with no rim ring:
// debris that populates the background class but never gets an annotation.
inline void paint_debris(std::vector<double>& raster, int width, int height,
                         double cx, double cy, Rng& rng) {
  const int blobs = rng.uniform_int(2, 4);
  for (int i = 0; i < blobs; ++i) {
    const double bx = cx + rng.uniform(-9.0, 9.0);
    const double by = cy + rng.uniform(-9.0, 9.0);
    const double ra = rng.uniform(3.0, 9.0);
    const double rb = ra * rng.uniform(0.5, 1.0);
    const double ang = rng.uniform(0.0, 3.14159265358979323846);
    const double dark = rng.uniform(25.0, 60.0);
    const double c = std::cos(ang), s = std::sin(ang);
    const int x0 = std::max(0, static_cast<int>(bx - ra - 2));
    const int y0 = std::max(0, static_cast<int>(by - ra - 2));
    const int x1 = std::min(width, static_cast<int>(bx + ra + 3));
    const int y1 = std::min(height, static_cast<int>(by + ra + 3));
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) {
        const double dx = x - bx, dy = y - by;
        const double lx = c * dx + s * dy;
        const double ly = -s * dx + c * dy;
        const double r = std::sqrt(lx * lx / (ra * ra) + ly * ly / (rb * rb));
        const double fall = std::clamp(1.2 - r, 0.0, 1.0);
        raster[static_cast<std::size_t>(y) * width + x] -= dark * fall;
      }
  }
}

}  // namespace detail

// Generates one microscope-like frame: shaded background, 1-3 same-class
// anti-aliased eggs at non-overlapping positions, debris blobs, additive
// Gaussian noise. Deterministic given draw_seed.
inline std::pair<ImageBuffer, std::vector<Annotation>> generate_image(
    const SynthSpec& spec, std::uint64_t draw_seed) {
  spec.check_valid();
  Rng rng(draw_seed);
  const auto appearances = default_appearances();

  // class draw from the mix
  const double pick = rng.uniform();
  int cls = kEggClassCount - 1;
  double acc = 0.0;
  for (int k = 0; k < kEggClassCount; ++k) {
    acc += spec.class_mix[k];
    if (pick < acc) {
      cls = k;
      break;
    }
  }

  int egg_target = rng.uniform_int(spec.eggs_min, spec.eggs_max);

  // Background with low-frequency shading: a tilted ramp plus two broad
  // waves, normalized so every image spans the same +/-60 band around the
  // base level. The contrast stretch in preprocessing anchors its 1%/99%
  // percentiles inside this band; because the band is identical across
  // images the per-image gain is nearly constant, and the class intensity
  // ladder painted on top survives preprocessing instead of saturating.
  const double base = 128.0 + rng.uniform(-4.0, 4.0);
  constexpr double kShadingAmp = 60.0;
  struct Wave {
    double amp, kx, ky, phase;
  };
  std::array<Wave, 2> waves;
  // Wavelengths stay well above the window size: the shading has to vary
  // enough across the image to pin the stretch percentiles, yet drift only
  // a few units within any one window, or it would blur the gaps between
  // the class intensity rungs as seen by the classifier.
  for (Wave& w : waves) {
    const double amp = rng.uniform(0.25, 0.40);
    const double theta = rng.uniform(0.0, 6.28);
    const double wavelength = rng.uniform(900.0, 1600.0);
    const double k = 2.0 * 3.14159265358979323846 / wavelength;
    w = {amp, k * std::cos(theta), k * std::sin(theta), rng.uniform(0.0, 6.28)};
  }
  const double tilt = rng.uniform(0.0, 6.28);
  const double tx = std::cos(tilt) / spec.width;
  const double ty = std::sin(tilt) / spec.height;
  std::vector<double> raster(static_cast<std::size_t>(spec.width) *
                             spec.height);
  double field_min = 1e30, field_max = -1e30;
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      double v = tx * (x - 0.5 * spec.width) + ty * (y - 0.5 * spec.height);
      for (const Wave& w : waves)
        v += w.amp * std::cos(w.kx * x + w.ky * y + w.phase);
      raster[static_cast<std::size_t>(y) * spec.width + x] = v;
      field_min = std::min(field_min, v);
      field_max = std::max(field_max, v);
    }
  const double span = std::max(field_max - field_min, 1e-9);
  for (double& v : raster)
    v = base + kShadingAmp * (2.0 * (v - field_min) / span - 1.0);

  // eggs: rejection-place with zero bbox overlap
  std::vector<EggParams> eggs;
  std::vector<Annotation> annotations;
  while (static_cast<int>(eggs.size()) < egg_target) {
    EggParams e = sample_egg_params(static_cast<EggClass>(cls),
                                    appearances[cls], rng);
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      // Keep egg centers out of the border bands where few patches overlap:
      // a pixel near the frame edge is covered by one or two windows only,
      // so a confident egg vote there would never be averaged down and the
      // fused peak could stick to the frame edge instead of the egg.
      const double margin_x = std::max(e.half_extent_x() + 4.0,
                                       std::min(130.0, spec.width / 4.0));
      const double margin_y = std::max(e.half_extent_y() + 4.0,
                                       std::min(130.0, spec.height / 4.0));
      e.cx = rng.uniform(margin_x, spec.width - margin_x);
      e.cy = rng.uniform(margin_y, spec.height - margin_y);
      const BoundingBox candidate = e.bbox();
      bool clash = false;
      for (const EggParams& other : eggs)
        if (detail::boxes_intersect(candidate, other.bbox())) clash = true;
      if (!clash) placed = true;
    }
    if (!placed) {
      // image too crowded; settle for fewer eggs
      if (--egg_target < 1 && eggs.empty())
        throw error("synth: could not place a single egg");
      continue;
    }
    eggs.push_back(e);
  }
  if (eggs.empty()) throw error("synth: zero eggs generated");

  for (const EggParams& e : eggs) {
    detail::paint_egg(raster, spec.width, spec.height, e);
    annotations.push_back({e.cls, e.bbox()});
  }

  // debris, kept clear of egg bboxes so patch labels stay exact
  const int debris_target = rng.uniform_int(spec.debris_min, spec.debris_max);
  for (int i = 0; i < debris_target; ++i) {
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double cx = rng.uniform(14.0, spec.width - 14.0);
      const double cy = rng.uniform(14.0, spec.height - 14.0);
      const BoundingBox probe{static_cast<int>(cx) - 14,
                              static_cast<int>(cy) - 14, 28, 28};
      bool clash = false;
      for (const EggParams& e : eggs)
        if (detail::boxes_intersect(probe, e.bbox())) clash = true;
      if (clash) continue;
      detail::paint_debris(raster, spec.width, spec.height, cx, cy, rng);
      break;
    }
  }

  ImageBuffer img(spec.width, spec.height, 1);
  for (std::size_t i = 0; i < raster.size(); ++i) {
    const double noisy = raster[i] + spec.noise_sigma * rng.normal();
    img.pixels[i] = clamp_u8(noisy);
  }
  return {std::move(img), std::move(annotations)};
}

// Largest-remainder apportionment of n images over the class mix.
inline std::array<int, kEggClassCount> apportion_classes(
    const std::array<double, kEggClassCount>& mix, int n) {
  std::array<int, kEggClassCount> counts{};
  std::array<double, kEggClassCount> remainder{};
  int assigned = 0;
  for (int k = 0; k < kEggClassCount; ++k) {
    const double ideal = mix[k] * n;
    counts[k] = static_cast<int>(std::floor(ideal + 1e-9));
    remainder[k] = ideal - counts[k];
    assigned += counts[k];
  }
  for (int left = n - assigned; left > 0; --left) {
    int best = 0;
    for (int k = 1; k < kEggClassCount; ++k)
      if (remainder[k] > remainder[best]) best = k;
    ++counts[best];
    remainder[best] = -1.0;
  }
  return counts;
}

// Writes n PNGs plus a manifest under out_dir. Per-image class assignment
// follows the apportioned counts in class order; image i draws from the
// stream seeded by mix_seed(spec.seed, i).
inline DatasetManifest generate_dataset(const SynthSpec& spec, int n,
                                        const std::string& out_dir) {
  spec.check_valid();
  if (n < 1) throw invalid_input("generate_dataset: n must be >= 1");

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) throw io_error("cannot create output directory: " + out_dir);

  const std::array<int, kEggClassCount> counts =
      apportion_classes(spec.class_mix, n);

  DatasetManifest manifest;
  int image_index = 0;
  for (int k = 0; k < kEggClassCount; ++k) {
    SynthSpec forced = spec;
    forced.class_mix = {};
    forced.class_mix[k] = 1.0;
    for (int i = 0; i < counts[k]; ++i, ++image_index) {
      auto [img, annotations] =
          generate_image(forced, mix_seed(spec.seed, image_index));
      char name[32];
      std::snprintf(name, sizeof(name), "images/img_%04d.png", image_index);
      write_png((fs::path(out_dir) / name).string(), img);
      manifest.push_back({name, std::move(annotations)});
    }
  }
  save_manifest((fs::path(out_dir) / "manifest.jsonl").string(), manifest);
  return manifest;
}

}  // namespace eggscan
