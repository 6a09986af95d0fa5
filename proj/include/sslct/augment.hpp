#pragma once

// Stochastic view generation for pre-training: random resized crop,
// horizontal flip, and Gaussian blur, plus the multi-crop arrangement with
// per-group crop scales.

#include <random>

#include "sslct/image.hpp"
#include "sslct/rng.hpp"
#include "sslct/tensor.hpp"

namespace sslct {

struct CropGroup {
  int size = 224;
  int count = 2;
  double min_scale = 0.2;
  double max_scale = 1.0;
};

struct AugmentConfig {
  std::vector<CropGroup> groups{CropGroup{}};
  double flip_prob = 0.5;
  double blur_prob = 0.5;
  int blur_kernel = 23;
  double blur_sigma_min = 0.1;
  double blur_sigma_max = 2.0;

  void validate() const {
    check_cfg(!groups.empty(), "augment: need at least one crop group");
    for (const auto& g : groups) {
      check_cfg(g.size >= 1, "augment: crop size must be >= 1");
      check_cfg(g.count >= 1, "augment: crop count must be >= 1");
      check_cfg(g.min_scale > 0.0 && g.min_scale <= g.max_scale && g.max_scale <= 1.0,
                "augment: need 0 < min scale <= max scale <= 1");
    }
    check_cfg(flip_prob >= 0.0 && flip_prob <= 1.0, "augment: flip probability out of range");
    check_cfg(blur_prob >= 0.0 && blur_prob <= 1.0, "augment: blur probability out of range");
    check_cfg(blur_kernel >= 1 && blur_kernel % 2 == 1, "augment: blur kernel must be odd");
    check_cfg(blur_sigma_min > 0.0 && blur_sigma_min <= blur_sigma_max,
              "augment: bad blur sigma range");
  }

  int total_views() const {
    int n = 0;
    for (const auto& g : groups) n += g.count;
    return n;
  }
};

// Two equally sized crops; the default for the two-view methods.
inline AugmentConfig two_view_config(int size = 224, double min_scale = 0.2,
                                     double max_scale = 1.0) {
  AugmentConfig c;
  c.groups = {CropGroup{size, 2, min_scale, max_scale}};
  return c;
}

// Multi-crop: two large crops plus six small ones.
inline AugmentConfig multicrop_config() {
  AugmentConfig c;
  c.groups = {CropGroup{224, 2, 0.90, 1.0}, CropGroup{96, 6, 0.10, 0.33}};
  return c;
}

// All views of one image, in group order. Draw order per view is fixed
// (scale, top, left, flip, blur, sigma) so results depend only on the stream
// state.
template <typename T>
std::vector<Ptr<T>> make_views(const Ptr<T>& image, const AugmentConfig& cfg,
                               std::mt19937_64& rng) {
  cfg.validate();
  check_cfg(image->shape.size() == 3 && image->shape[0] == 1,
            "make_views: expected [1,H,W] image, got " + shape_str(image->shape));
  const int H = image->shape[1], W = image->shape[2];
  for (const auto& g : cfg.groups)
    check_cfg(g.size <= H && g.size <= W, "make_views: crop size " + std::to_string(g.size) +
                                              " exceeds image extent " + std::to_string(H) + "x" +
                                              std::to_string(W));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Ptr<T>> views;
  for (const auto& g : cfg.groups) {
    std::uniform_real_distribution<double> scale(g.min_scale, g.max_scale);
    for (int v = 0; v < g.count; ++v) {
      // Area fraction -> side fractions of the source extents.
      const double side = std::sqrt(scale(rng));
      const int ch = std::max(1, (int)std::lround(side * H));
      const int cw = std::max(1, (int)std::lround(side * W));
      const int top = std::uniform_int_distribution<int>(0, H - ch)(rng);
      const int left = std::uniform_int_distribution<int>(0, W - cw)(rng);
      std::vector<T> patch((size_t)ch * cw);
      for (int i = 0; i < ch; ++i)
        for (int j = 0; j < cw; ++j)
          patch[(size_t)i * cw + j] = image->value[(size_t)(top + i) * W + (left + j)];
      auto resized = resize_bilinear(patch, ch, cw, g.size, g.size);
      if (unit(rng) < cfg.flip_prob) flip_horizontal(resized, g.size, g.size);
      if (unit(rng) < cfg.blur_prob) {
        std::uniform_real_distribution<double> sig(cfg.blur_sigma_min, cfg.blur_sigma_max);
        gaussian_blur(resized, g.size, g.size, cfg.blur_kernel, sig(rng));
      }
      views.push_back(make_node<T>({1, g.size, g.size}, std::move(resized)));
    }
  }
  return views;
}

// Batch convenience: stacks one view per image into [N,1,size,size] nodes,
// one stack per view slot. All images must share the view geometry.
template <typename T>
std::vector<Ptr<T>> stack_views(const std::vector<std::vector<Ptr<T>>>& per_image) {
  check_cfg(!per_image.empty(), "stack_views: empty batch");
  const size_t V = per_image[0].size();
  const int N = (int)per_image.size();
  std::vector<Ptr<T>> out;
  for (size_t v = 0; v < V; ++v) {
    const Shape& s = per_image[0][v]->shape;
    auto b = make_node<T>({N, 1, s[1], s[2]});
    for (int n = 0; n < N; ++n) {
      check_shape(per_image[n][v]->shape == s, "stack_views", per_image[n][v]->shape, s);
      std::copy(per_image[n][v]->value.begin(), per_image[n][v]->value.end(),
                b->value.begin() + (std::int64_t)n * numel(s));
    }
    out.push_back(b);
  }
  return out;
}

}  // namespace sslct
