#pragma once

#include <array>

#include "setdet/data.hpp"
#include "setdet/rng.hpp"

namespace setdet {

/// Enabled transforms with their probabilities and parameter ranges.
/// A probability of 0 disables the transform.
struct AugmentPolicy {
  double brightness_prob = 0.5;
  double brightness_min = 0.7;
  double brightness_max = 1.3;

  double jitter_prob = 0.5;
  double jitter_min = 0.9;
  double jitter_max = 1.1;

  double blur_prob = 0.2;
  double blur_sigma_min = 0.5;
  double blur_sigma_max = 2.0;

  double sharpen_prob = 0.2;
  double sharpen_amount_min = 0.5;
  double sharpen_amount_max = 1.5;

  double flip_prob = 0.5;

  double crop_prob = 0.3;
  double crop_area_min = 0.5;
  double crop_area_max = 1.0;
  /// Boxes keeping less than this fraction of their area after a crop are dropped.
  double crop_keep_fraction = 0.25;

  static AugmentPolicy none();
  void validate() const;
};

struct CropRect {
  std::size_t x = 0, y = 0, width = 0, height = 0;
};

// Photometric transforms: boxes untouched, pixels clamped to [0, 1].
Sample adjust_brightness(const Sample& s, double factor);
Sample color_jitter(const Sample& s, const std::array<double, 3>& factors);
/// Separable Gaussian, kernel truncated at 3 sigma, edge pixels replicated.
Image gaussian_blur(const Image& image, double sigma);
Sample blur(const Sample& s, double sigma);
/// Unsharp mask: x + amount * (x - blur(x, 1.0)).
Sample sharpen(const Sample& s, double amount);

// Geometric transforms.
/// x1' = W - x2, x2' = W - x1.
Sample horizontal_flip(const Sample& s);
/// Cuts `rect` out; boxes are clipped to it and shifted into its frame.
Sample crop(const Sample& s, const CropRect& rect, double keep_fraction);
/// Random sub-rectangle covering [area_min, area_max] of the image, resized
/// back to the original extents.
Sample random_resized_crop(const Sample& s, const AugmentPolicy& policy, Rng& rng);

/// Applies brightness, jitter, blur, sharpen, flip and crop in that order,
/// each with its own probability. Consumes a fixed sequence of draws from `rng`.
Sample augment(const Sample& s, const AugmentPolicy& policy, Rng& rng);

}  // namespace setdet
