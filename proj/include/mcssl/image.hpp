#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace mcssl {

// HWC float image with values nominally in [0, 1].
struct Image {
  int64_t h = 0, w = 0, c = 0;
  std::vector<float> px;

  Image() = default;
  Image(int64_t h_, int64_t w_, int64_t c_) : h(h_), w(w_), c(c_) {
    px.assign(static_cast<size_t>(h * w * c), 0.f);
  }
  float& at(int64_t y, int64_t x, int64_t ch) {
    return px[static_cast<size_t>((y * w + x) * c + ch)];
  }
  const float& at(int64_t y, int64_t x, int64_t ch) const {
    return px[static_cast<size_t>((y * w + x) * c + ch)];
  }
};

inline Image crop(const Image& img, int64_t y0, int64_t x0, int64_t ch, int64_t cw) {
  if (y0 < 0 || x0 < 0 || y0 + ch > img.h || x0 + cw > img.w)
    throw std::invalid_argument("crop out of bounds");
  Image out(ch, cw, img.c);
  for (int64_t y = 0; y < ch; ++y)
    for (int64_t x = 0; x < cw; ++x)
      for (int64_t k = 0; k < img.c; ++k) out.at(y, x, k) = img.at(y0 + y, x0 + x, k);
  return out;
}

// Bilinear resize with half-pixel centers.
inline Image resize_bilinear(const Image& img, int64_t oh, int64_t ow) {
  if (oh == img.h && ow == img.w) return img;
  Image out(oh, ow, img.c);
  double sy = static_cast<double>(img.h) / oh, sx = static_cast<double>(img.w) / ow;
  for (int64_t y = 0; y < oh; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    int64_t y0 = static_cast<int64_t>(std::floor(fy));
    double wy = fy - y0;
    int64_t y0c = std::clamp<int64_t>(y0, 0, img.h - 1);
    int64_t y1c = std::clamp<int64_t>(y0 + 1, 0, img.h - 1);
    for (int64_t x = 0; x < ow; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      int64_t x0 = static_cast<int64_t>(std::floor(fx));
      double wx = fx - x0;
      int64_t x0c = std::clamp<int64_t>(x0, 0, img.w - 1);
      int64_t x1c = std::clamp<int64_t>(x0 + 1, 0, img.w - 1);
      for (int64_t k = 0; k < img.c; ++k) {
        double top = img.at(y0c, x0c, k) * (1 - wx) + img.at(y0c, x1c, k) * wx;
        double bot = img.at(y1c, x0c, k) * (1 - wx) + img.at(y1c, x1c, k) * wx;
        out.at(y, x, k) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

inline void hflip_inplace(Image& img) {
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w / 2; ++x)
      for (int64_t k = 0; k < img.c; ++k) std::swap(img.at(y, x, k), img.at(y, img.w - 1 - x, k));
}

inline void grayscale_inplace(Image& img) {
  if (img.c != 3) return;
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      float g = 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
      img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = g;
    }
}

// Separable Gaussian with reflect padding; radius covers 3 sigma.
inline void gaussian_blur_inplace(Image& img, double sigma) {
  if (sigma <= 0) return;
  int64_t radius = std::max<int64_t>(1, static_cast<int64_t>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
  double sum = 0;
  for (int64_t i = -radius; i <= radius; ++i) {
    double v = std::exp(-0.5 * (i * i) / (sigma * sigma));
    kernel[static_cast<size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : kernel) v /= sum;
  auto reflect = [](int64_t i, int64_t n) {
    if (n == 1) return int64_t(0);
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  Image tmp = img;
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      for (int64_t k = 0; k < img.c; ++k) {
        double acc = 0;
        for (int64_t i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<size_t>(i + radius)] * img.at(y, reflect(x + i, img.w), k);
        tmp.at(y, x, k) = static_cast<float>(acc);
      }
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x)
      for (int64_t k = 0; k < img.c; ++k) {
        double acc = 0;
        for (int64_t i = -radius; i <= radius; ++i)
          acc += kernel[static_cast<size_t>(i + radius)] * tmp.at(reflect(y + i, img.h), x, k);
        img.at(y, x, k) = static_cast<float>(acc);
      }
}

inline void clamp01_inplace(Image& img) {
  for (float& v : img.px) v = std::clamp(v, 0.f, 1.f);
}

inline void brightness_inplace(Image& img, float factor) {
  for (float& v : img.px) v *= factor;
  clamp01_inplace(img);
}

inline void contrast_inplace(Image& img, float factor) {
  double mean = 0;
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      float g = img.c == 3 ? 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) +
                                 0.114f * img.at(y, x, 2)
                           : img.at(y, x, 0);
      mean += g;
    }
  mean /= static_cast<double>(img.h * img.w);
  for (float& v : img.px) v = static_cast<float>((v - mean) * factor + mean);
  clamp01_inplace(img);
}

inline void saturation_inplace(Image& img, float factor) {
  if (img.c != 3) return;
  for (int64_t y = 0; y < img.h; ++y)
    for (int64_t x = 0; x < img.w; ++x) {
      float g = 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) + 0.114f * img.at(y, x, 2);
      for (int64_t k = 0; k < 3; ++k)
        img.at(y, x, k) = (img.at(y, x, k) - g) * factor + g;
    }
  clamp01_inplace(img);
}

}  // namespace mcssl
