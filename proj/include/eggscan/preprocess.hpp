#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "eggscan/errors.hpp"
#include "eggscan/image.hpp"

namespace eggscan {

// RGB -> grayscale with BT.601 luma weights. A 1-channel input is returned
// unchanged, so the function is idempotent.
inline ImageBuffer to_grayscale(const ImageBuffer& image) {
  image.check_valid();
  if (image.channels == 1) return image;

  ImageBuffer out(image.width, image.height, 1);
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = image.pixels[i * 3 + 0];
    const double g = image.pixels[i * 3 + 1];
    const double b = image.pixels[i * 3 + 2];
    out.pixels[i] = clamp_u8(0.299 * r + 0.587 * g + 0.114 * b);
  }
  return out;
}

namespace detail {
// Nearest-rank quantile on the sorted pixel multiset: the smallest value
// whose cumulative count reaches q*N.
inline std::uint8_t nearest_rank_quantile(
    const std::vector<std::uint8_t>& sorted, double q) {
  const std::size_t n = sorted.size();
  if (q <= 0.0) return sorted.front();
  std::size_t rank = static_cast<std::size_t>(
      std::ceil(q * static_cast<double>(n)));
  if (rank < 1) rank = 1;
  if (rank > n) rank = n;
  return sorted[rank - 1];
}
}  // namespace detail

// Linear percentile stretch: map [low_pct quantile, high_pct quantile] onto
// [0, 255], clamping outliers. Near-constant images (equal quantiles) pass
// through unchanged.
inline ImageBuffer enhance_contrast(const ImageBuffer& image,
                                    double low_pct = 0.01,
                                    double high_pct = 0.99) {
  image.check_valid();
  if (image.channels != 1)
    throw invalid_input("enhance_contrast expects a 1-channel image");
  if (!(low_pct >= 0.0 && low_pct < high_pct && high_pct <= 1.0))
    throw invalid_input("enhance_contrast: need 0 <= low_pct < high_pct <= 1");

  std::vector<std::uint8_t> sorted = image.pixels;
  std::sort(sorted.begin(), sorted.end());
  const double a = detail::nearest_rank_quantile(sorted, low_pct);
  const double b = detail::nearest_rank_quantile(sorted, high_pct);
  if (a == b) return image;  // degenerate: nothing to stretch

  ImageBuffer out(image.width, image.height, 1);
  // 256-entry lookup; also guarantees monotonicity by construction.
  std::uint8_t lut[256];
  for (int v = 0; v < 256; ++v) {
    const double t = std::clamp((v - a) / (b - a), 0.0, 1.0);
    lut[v] = clamp_u8(255.0 * t);
  }
  for (std::size_t i = 0; i < image.pixels.size(); ++i)
    out.pixels[i] = lut[image.pixels[i]];
  return out;
}

// Canonical preparation applied before patching, at both training and test
// time: grayscale conversion followed by the percentile stretch.
inline ImageBuffer preprocess_image(const ImageBuffer& image) {
  return enhance_contrast(to_grayscale(image));
}

}  // namespace eggscan
