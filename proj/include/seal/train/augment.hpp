#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "seal/core/errors.hpp"
#include "seal/core/rng.hpp"
#include "seal/image/image.hpp"

namespace seal::train {

// Stage II training augmentations. The color transforms form a one-of group:
// at most one member applies per sample, chosen proportionally to the member
// probabilities (always exactly one when they sum to >= 1).
struct AugmentConfig {
  double p_resized_crop = 1.0;
  double crop_scale_min = 0.8;
  double crop_scale_max = 1.0;
  double p_hflip = 0.5;
  double p_vflip = 0.25;
  // one-of group members
  double p_brightness_contrast = 1.0;
  double brightness = 0.1;
  double contrast = 0.1;
  double p_grayscale = 1.0;
  double p_channel_shuffle = 0.5;
  // blur
  double p_gauss_blur = 0.1;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;
  int blur_kernel = 9;

  void validate() const {
    for (double p : {p_resized_crop, p_hflip, p_vflip, p_brightness_contrast,
                     p_grayscale, p_channel_shuffle, p_gauss_blur})
      if (p < 0.0 || p > 1.0)
        throw DataError("AugmentConfig: probabilities must lie in [0, 1]");
    if (crop_scale_min <= 0.0 || crop_scale_min > crop_scale_max ||
        crop_scale_max > 1.0)
      throw DataError("AugmentConfig: crop scale range invalid");
    if (blur_sigma_min <= 0.0 || blur_sigma_min > blur_sigma_max)
      throw DataError("AugmentConfig: blur sigma range invalid");
  }

  static AugmentConfig identity() {
    AugmentConfig cfg;
    cfg.p_resized_crop = 0.0;
    cfg.p_hflip = 0.0;
    cfg.p_vflip = 0.0;
    cfg.p_brightness_contrast = 0.0;
    cfg.p_grayscale = 0.0;
    cfg.p_channel_shuffle = 0.0;
    cfg.p_gauss_blur = 0.0;
    return cfg;
  }
};

// Applies the pipeline in fixed order: resized crop, horizontal flip,
// vertical flip, one-of color group, Gaussian blur.
inline img::Image augment(const img::Image& image, const AugmentConfig& cfg,
                          Rng& rng) {
  cfg.validate();
  img::Image out = image;

  if (cfg.p_resized_crop > 0.0 && rng.uniform() < cfg.p_resized_crop) {
    const double scale = rng.uniform(cfg.crop_scale_min, cfg.crop_scale_max);
    const int h = out.height();
    const int w = out.width();
    const int crop_h = std::max(
        1, static_cast<int>(std::lround(h * std::sqrt(scale))));
    const int crop_w = std::max(
        1, static_cast<int>(std::lround(w * std::sqrt(scale))));
    const int y0 = crop_h < h
                       ? static_cast<int>(rng.below(
                             static_cast<std::uint64_t>(h - crop_h + 1)))
                       : 0;
    const int x0 = crop_w < w
                       ? static_cast<int>(rng.below(
                             static_cast<std::uint64_t>(w - crop_w + 1)))
                       : 0;
    out = img::crop_resize(out, y0, x0, crop_h, crop_w);
  }

  if (cfg.p_hflip > 0.0 && rng.uniform() < cfg.p_hflip) out = img::hflip(out);
  if (cfg.p_vflip > 0.0 && rng.uniform() < cfg.p_vflip) out = img::vflip(out);

  const double group_sum =
      cfg.p_brightness_contrast + cfg.p_grayscale + cfg.p_channel_shuffle;
  if (group_sum > 0.0) {
    const double denom = std::max(group_sum, 1.0);
    const double u = rng.uniform();
    if (u < cfg.p_brightness_contrast / denom) {
      const double fb = rng.uniform(-cfg.brightness, cfg.brightness);
      const double fc = rng.uniform(-cfg.contrast, cfg.contrast);
      out = img::brightness_contrast(out, fb, fc);
    } else if (u < (cfg.p_brightness_contrast + cfg.p_grayscale) / denom) {
      out = img::to_grayscale(out);
    } else if (u < group_sum / denom) {
      static constexpr std::array<std::array<int, 3>, 6> perms = {
          {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}}};
      out = img::shuffle_channels(out, perms[rng.below(perms.size())]);
    }
  }

  if (cfg.p_gauss_blur > 0.0 && rng.uniform() < cfg.p_gauss_blur) {
    const double sigma = rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max);
    out = img::gaussian_blur(out, sigma, cfg.blur_kernel);
  }
  return out;
}

}  // namespace seal::train
