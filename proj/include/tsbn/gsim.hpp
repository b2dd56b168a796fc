#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "tsbn/errors.hpp"

namespace tsbn {

// Single-channel image, row-major, 64-bit pixels. Normalized images hold
// values in [0, 1]; gsim targets may exit that range.
struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(int h, int w, double fill = 0.0)
      : height(h), width(w),
        pixels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w),
               fill) {
    if (h < 1 || w < 1) throw InvalidInput("image dimensions must be >= 1");
  }

  double& at(int r, int c) {
    return pixels[static_cast<std::size_t>(r) * width + c];
  }
  double at(int r, int c) const {
    return pixels[static_cast<std::size_t>(r) * width + c];
  }
  long size() const { return static_cast<long>(pixels.size()); }
};

// Binary class: 0 = benign/negative, 1 = malignant/positive.
struct ClassLabel {
  int a = 0;
  ClassLabel() = default;
  explicit ClassLabel(int value) : a(value) {
    if (a != 0 && a != 1) throw InvalidInput("class label must be 0 or 1");
  }
};

// Pseudo-label image for the pretext task: the source shifted by d/2
// toward one of two candidate targets, selected by the class label.
struct GsimTarget {
  int height = 0;
  int width = 0;
  double shift_distance = 0.0;
  std::vector<double> pixels;
};

// Per-image min-max normalization into [0, 1]. A constant image maps to
// all zeros.
inline GrayImage normalize_image(const GrayImage& raw) {
  if (raw.pixels.empty()) throw InvalidInput("normalize_image: empty image");
  double lo = raw.pixels[0], hi = raw.pixels[0];
  for (double v : raw.pixels) {
    if (!std::isfinite(v))
      throw InvalidInput("normalize_image: non-finite pixel");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  GrayImage out(raw.height, raw.width);
  if (hi > lo) {
    const double inv = 1.0 / (hi - lo);
    for (long i = 0; i < raw.size(); ++i) out.pixels[i] = (raw.pixels[i] - lo) * inv;
  }
  return out;
}

// Gray-scale image mapping: every pixel t becomes t - (-1)^a * d / 2.
// Label 0 shifts down by d/2, label 1 up by d/2. Targets are not clamped
// to [0, 1]; the distance between the two candidate targets is exactly d.
inline GsimTarget gsim_target(const GrayImage& image, ClassLabel label,
                              double d) {
  if (d < 0.0 || !std::isfinite(d))
    throw InvalidInput("gsim_target: shift distance must be >= 0");
  if (image.pixels.empty()) throw InvalidInput("gsim_target: empty image");
  GsimTarget out;
  out.height = image.height;
  out.width = image.width;
  out.shift_distance = d;
  const double shift = (label.a == 1 ? 1.0 : -1.0) * d / 2.0;
  out.pixels.resize(image.pixels.size());
  for (std::size_t i = 0; i < image.pixels.size(); ++i)
    out.pixels[i] = image.pixels[i] + shift;
  return out;
}

}  // namespace tsbn
