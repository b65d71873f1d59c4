#pragma once

#include <cmath>
#include <stdexcept>

#include "mcssl/image.hpp"
#include "mcssl/rng.hpp"

namespace mcssl {

struct AugmentPolicy {
  double crop_lo = 0.4, crop_hi = 1.0;  // area scale range of the random crop
  double hflip_prob = 0.5;
  double jitter_strength = 0.4;
  double grayscale_prob = 0.2;
  double blur_prob = 0.1;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(hflip_prob) || !prob(grayscale_prob) || !prob(blur_prob))
      throw std::invalid_argument("augment probabilities must be in [0, 1]");
    if (!(crop_lo > 0.0) || crop_lo > crop_hi || crop_hi > 1.0)
      throw std::invalid_argument("crop scale range must satisfy 0 < lo <= hi <= 1");
    if (jitter_strength < 0) throw std::invalid_argument("jitter_strength must be >= 0");
  }

  static AugmentPolicy identity() { return {1.0, 1.0, 0.0, 0.0, 0.0, 0.0}; }
};

// Random resized crop: sample a target area fraction and aspect ratio, fall
// back to a maximal center crop when ten attempts fail.
inline Image random_resized_crop(const Image& img, double lo, double hi, int64_t out_size,
                                 Rng& rng) {
  double area = static_cast<double>(img.h) * img.w;
  for (int attempt = 0; attempt < 10; ++attempt) {
    double target = area * rng.uniform(lo, hi);
    double aspect = std::exp(rng.uniform(std::log(3.0 / 4.0), std::log(4.0 / 3.0)));
    int64_t cw = static_cast<int64_t>(std::lround(std::sqrt(target * aspect)));
    int64_t ch = static_cast<int64_t>(std::lround(std::sqrt(target / aspect)));
    if (cw < 1 || ch < 1 || cw > img.w || ch > img.h) continue;
    int64_t y0 = rng.uniform_int(img.h - ch + 1);
    int64_t x0 = rng.uniform_int(img.w - cw + 1);
    return resize_bilinear(crop(img, y0, x0, ch, cw), out_size, out_size);
  }
  int64_t side = std::min(img.h, img.w);
  int64_t y0 = (img.h - side) / 2, x0 = (img.w - side) / 2;
  return resize_bilinear(crop(img, y0, x0, side, side), out_size, out_size);
}

// The standard augmentation chain: crop -> flip -> color jitter -> grayscale
// -> blur. The output stays in [0, 1]; normalization happens at batch time.
inline Image apply_augment(const Image& img, const AugmentPolicy& policy, int64_t out_size,
                           Rng& rng) {
  Image out = random_resized_crop(img, policy.crop_lo, policy.crop_hi, out_size, rng);
  if (rng.bernoulli(policy.hflip_prob)) hflip_inplace(out);
  if (policy.jitter_strength > 0) {
    double s = 0.8 * policy.jitter_strength;
    float b = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - s), 1.0 + s));
    float c = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - s), 1.0 + s));
    float sat = static_cast<float>(rng.uniform(std::max(0.0, 1.0 - s), 1.0 + s));
    brightness_inplace(out, b);
    contrast_inplace(out, c);
    saturation_inplace(out, sat);
  }
  if (rng.bernoulli(policy.grayscale_prob)) grayscale_inplace(out);
  if (rng.bernoulli(policy.blur_prob)) gaussian_blur_inplace(out, rng.uniform(0.1, 2.0));
  return out;
}

}  // namespace mcssl
