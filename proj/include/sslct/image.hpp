#pragma once

// Plain raster helpers shared by preprocessing and augmentation. These work
// on flat row-major buffers, outside the autodiff graph.

#include <cmath>
#include <vector>

#include "sslct/common.hpp"

namespace sslct {

// Bilinear resampling with half-pixel sample centers (corner alignment
// disabled); taps clamp at the border, so output values never leave the
// input's range.
template <typename T>
std::vector<T> resize_bilinear(const std::vector<T>& src, int sh, int sw, int th, int tw) {
  check_cfg(sh >= 1 && sw >= 1 && (int)src.size() == sh * sw, "resize: bad source geometry");
  check_cfg(th >= 1 && tw >= 1, "resize: bad target geometry");
  std::vector<T> out((size_t)th * tw);
  const double sy = (double)sh / th, sx = (double)sw / tw;
  for (int i = 0; i < th; ++i) {
    const double fy = (i + 0.5) * sy - 0.5;
    int y0 = (int)std::floor(fy);
    const double wy = fy - y0;
    const int y1 = std::min(std::max(y0 + 1, 0), sh - 1);
    y0 = std::min(std::max(y0, 0), sh - 1);
    for (int j = 0; j < tw; ++j) {
      const double fx = (j + 0.5) * sx - 0.5;
      int x0 = (int)std::floor(fx);
      const double wx = fx - x0;
      const int x1 = std::min(std::max(x0 + 1, 0), sw - 1);
      x0 = std::min(std::max(x0, 0), sw - 1);
      const double top = (1.0 - wx) * src[(size_t)y0 * sw + x0] + wx * src[(size_t)y0 * sw + x1];
      const double bot = (1.0 - wx) * src[(size_t)y1 * sw + x0] + wx * src[(size_t)y1 * sw + x1];
      out[(size_t)i * tw + j] = (T)((1.0 - wy) * top + wy * bot);
    }
  }
  return out;
}

template <typename T>
void flip_horizontal(std::vector<T>& img, int h, int w) {
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w / 2; ++j)
      std::swap(img[(size_t)i * w + j], img[(size_t)i * w + (w - 1 - j)]);
}

// Separable Gaussian blur with replicated borders; the normalized positive
// kernel keeps outputs inside the input's value range.
template <typename T>
void gaussian_blur(std::vector<T>& img, int h, int w, int kernel, double sigma) {
  check_cfg(kernel >= 1 && kernel % 2 == 1, "blur: kernel size must be odd and positive");
  check_cfg(sigma > 0.0, "blur: sigma must be > 0");
  const int r = kernel / 2;
  std::vector<double> k(kernel);
  double ksum = 0;
  for (int i = 0; i < kernel; ++i) {
    k[i] = std::exp(-0.5 * (double)(i - r) * (i - r) / (sigma * sigma));
    ksum += k[i];
  }
  for (auto& v : k) v /= ksum;

  std::vector<T> tmp((size_t)h * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double s = 0;
      for (int t = -r; t <= r; ++t) {
        const int jj = std::min(std::max(j + t, 0), w - 1);
        s += k[t + r] * img[(size_t)i * w + jj];
      }
      tmp[(size_t)i * w + j] = (T)s;
    }
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double s = 0;
      for (int t = -r; t <= r; ++t) {
        const int ii = std::min(std::max(i + t, 0), h - 1);
        s += k[t + r] * tmp[(size_t)ii * w + j];
      }
      img[(size_t)i * w + j] = (T)s;
    }
}

}  // namespace sslct
