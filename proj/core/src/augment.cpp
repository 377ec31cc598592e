#include "setdet/augment.hpp"

#include <algorithm>
#include <cmath>

#include "setdet/errors.hpp"

namespace setdet {

AugmentPolicy AugmentPolicy::none() {
  AugmentPolicy p;
  p.brightness_prob = p.jitter_prob = p.blur_prob = p.sharpen_prob = p.flip_prob = p.crop_prob = 0.0;
  return p;
}

void AugmentPolicy::validate() const {
  for (double prob : {brightness_prob, jitter_prob, blur_prob, sharpen_prob, flip_prob, crop_prob})
    if (!(prob >= 0.0 && prob <= 1.0)) throw ConfigError("augment: probabilities must lie in [0, 1]");
  if (!(brightness_min > 0.0 && brightness_min <= brightness_max)) throw ConfigError("augment: bad brightness range");
  if (!(jitter_min > 0.0 && jitter_min <= jitter_max)) throw ConfigError("augment: bad jitter range");
  if (!(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max)) throw ConfigError("augment: bad blur range");
  if (!(sharpen_amount_min >= 0.0 && sharpen_amount_min <= sharpen_amount_max))
    throw ConfigError("augment: bad sharpen range");
  if (!(crop_area_min > 0.0 && crop_area_min <= crop_area_max && crop_area_max <= 1.0))
    throw ConfigError("augment: crop area fractions must satisfy 0 < min <= max <= 1");
  if (!(crop_keep_fraction >= 0.0 && crop_keep_fraction <= 1.0)) throw ConfigError("augment: bad crop keep fraction");
}

namespace {

Sample map_pixels(const Sample& s, const std::array<double, 3>& factors) {
  Sample out = s;
  const std::size_t plane = s.image.width() * s.image.height();
  auto& data = out.image.data();
  for (std::size_t c = 0; c < Image::kChannels; ++c)
    for (std::size_t i = 0; i < plane; ++i) data[c * plane + i] = std::clamp(data[c * plane + i] * factors[c], 0.0, 1.0);
  return out;
}

std::vector<double> gaussian_kernel(double sigma) {
  const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

}  // namespace

Sample adjust_brightness(const Sample& s, double factor) { return map_pixels(s, {factor, factor, factor}); }

Sample color_jitter(const Sample& s, const std::array<double, 3>& factors) { return map_pixels(s, factors); }

Image gaussian_blur(const Image& image, double sigma) {
  if (!(sigma > 0.0)) throw ContractError("gaussian_blur: sigma must be positive");
  const auto kernel = gaussian_kernel(sigma);
  const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
  const auto w = static_cast<std::ptrdiff_t>(image.width());
  const auto h = static_cast<std::ptrdiff_t>(image.height());
  Image tmp(image.width(), image.height());
  Image out(image.width(), image.height());
  for (std::size_t c = 0; c < Image::kChannels; ++c) {
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          const auto xx = std::clamp<std::ptrdiff_t>(x + k, 0, w - 1);
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 image.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(xx));
        }
        tmp.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = acc;
      }
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
          const auto yy = std::clamp<std::ptrdiff_t>(y + k, 0, h - 1);
          acc += kernel[static_cast<std::size_t>(k + radius)] *
                 tmp.at(c, static_cast<std::size_t>(yy), static_cast<std::size_t>(x));
        }
        out.at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = std::clamp(acc, 0.0, 1.0);
      }
  }
  return out;
}

Sample blur(const Sample& s, double sigma) {
  Sample out = s;
  out.image = gaussian_blur(s.image, sigma);
  return out;
}

Sample sharpen(const Sample& s, double amount) {
  Sample out = s;
  const Image soft = gaussian_blur(s.image, 1.0);
  auto& data = out.image.data();
  for (std::size_t i = 0; i < data.size(); ++i)
    data[i] = std::clamp(data[i] + amount * (data[i] - soft.data()[i]), 0.0, 1.0);
  return out;
}

Sample horizontal_flip(const Sample& s) {
  Sample out = s;
  const std::size_t w = s.image.width();
  for (std::size_t c = 0; c < Image::kChannels; ++c)
    for (std::size_t y = 0; y < s.image.height(); ++y)
      for (std::size_t x = 0; x < w; ++x) out.image.at(c, y, x) = s.image.at(c, y, w - 1 - x);
  const auto wd = static_cast<double>(w);
  for (auto& a : out.annotations) a.box = Box::corner_abs(wd - a.box.c, a.box.b, wd - a.box.a, a.box.d);
  return out;
}

Sample crop(const Sample& s, const CropRect& rect, double keep_fraction) {
  if (rect.width == 0 || rect.height == 0 || rect.x + rect.width > s.image.width() ||
      rect.y + rect.height > s.image.height())
    throw ContractError("crop: rectangle outside image");
  Sample out;
  out.id = s.id;
  out.image = Image(rect.width, rect.height);
  for (std::size_t c = 0; c < Image::kChannels; ++c)
    for (std::size_t y = 0; y < rect.height; ++y)
      for (std::size_t x = 0; x < rect.width; ++x) out.image.at(c, y, x) = s.image.at(c, rect.y + y, rect.x + x);
  const auto rx = static_cast<double>(rect.x), ry = static_cast<double>(rect.y);
  const auto rw = static_cast<double>(rect.width), rh = static_cast<double>(rect.height);
  for (const auto& a : s.annotations) {
    const double x1 = std::clamp(a.box.a - rx, 0.0, rw), x2 = std::clamp(a.box.c - rx, 0.0, rw);
    const double y1 = std::clamp(a.box.b - ry, 0.0, rh), y2 = std::clamp(a.box.d - ry, 0.0, rh);
    const double clipped = std::max(0.0, x2 - x1) * std::max(0.0, y2 - y1);
    if (clipped <= 0.0 || clipped < keep_fraction * a.box.area()) continue;
    out.annotations.push_back({a.class_id, Box::corner_abs(x1, y1, x2, y2)});
  }
  return out;
}

Sample random_resized_crop(const Sample& s, const AugmentPolicy& policy, Rng& rng) {
  const auto w = static_cast<double>(s.image.width()), h = static_cast<double>(s.image.height());
  const double area = uniform(rng, policy.crop_area_min, policy.crop_area_max) * w * h;
  const double aspect = std::exp(uniform(rng, std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
  const auto cw = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(std::sqrt(area * aspect))), 1,
                                          s.image.width());
  const auto ch = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(std::sqrt(area / aspect))), 1,
                                          s.image.height());
  CropRect rect{uniform_index(rng, s.image.width() - cw + 1), uniform_index(rng, s.image.height() - ch + 1), cw, ch};
  Sample cut = crop(s, rect, policy.crop_keep_fraction);
  Sample out;
  out.id = s.id;
  out.image = resize_bilinear(cut.image, s.image.width(), s.image.height());
  out.annotations = scale_annotations(cut.annotations, w / static_cast<double>(cw), h / static_cast<double>(ch), w, h);
  return out;
}

Sample augment(const Sample& s, const AugmentPolicy& policy, Rng& rng) {
  // Every draw happens whether or not the transform fires, so the stream
  // position after augment() is independent of the outcome.
  const bool do_brightness = bernoulli(rng, policy.brightness_prob);
  const double brightness = uniform(rng, policy.brightness_min, policy.brightness_max);
  const bool do_jitter = bernoulli(rng, policy.jitter_prob);
  std::array<double, 3> jitter{};
  for (auto& f : jitter) f = uniform(rng, policy.jitter_min, policy.jitter_max);
  const bool do_blur = bernoulli(rng, policy.blur_prob);
  const double sigma = uniform(rng, policy.blur_sigma_min, policy.blur_sigma_max);
  const bool do_sharpen = bernoulli(rng, policy.sharpen_prob);
  const double amount = uniform(rng, policy.sharpen_amount_min, policy.sharpen_amount_max);
  const bool do_flip = bernoulli(rng, policy.flip_prob);
  const bool do_crop = bernoulli(rng, policy.crop_prob);
  Rng crop_rng(rng());

  Sample out = s;
  if (do_brightness) out = adjust_brightness(out, brightness);
  if (do_jitter) out = color_jitter(out, jitter);
  if (do_blur) out = blur(out, sigma);
  if (do_sharpen) out = sharpen(out, amount);
  if (do_flip) out = horizontal_flip(out);
  if (do_crop) out = random_resized_crop(out, policy, crop_rng);
  return out;
}

}  // namespace setdet
