#pragma once

// Patch-level masking: generation, and replication/center sampling of a patch
// mask onto the feature grids of the encoder pyramid.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "sslct/common.hpp"
#include "sslct/rng.hpp"

namespace sslct {

// Boolean grid over non-overlapping square patches; true = kept (active).
struct PatchMask {
  int grid_h = 0, grid_w = 0;
  int patch = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint8_t> kept;  // grid_h * grid_w

  bool at(int i, int j) const { return kept[(size_t)i * grid_w + j] != 0; }
  int kept_count() const {
    int c = 0;
    for (auto v : kept) c += v ? 1 : 0;
    return c;
  }
  int masked_count() const { return grid_h * grid_w - kept_count(); }
};

inline PatchMask all_kept_mask(int H, int W, int patch) {
  check_cfg(patch > 0 && H % patch == 0 && W % patch == 0,
            "patch mask: patch size " + std::to_string(patch) + " does not divide " +
                std::to_string(H) + "x" + std::to_string(W));
  PatchMask m;
  m.grid_h = H / patch;
  m.grid_w = W / patch;
  m.patch = patch;
  m.kept.assign((size_t)m.grid_h * m.grid_w, 1);
  return m;
}

// Each patch is masked independently with probability mask_ratio.
// When exact_count is set, exactly round(ratio * patches) patches are masked
// instead (uniform choice without replacement).
inline PatchMask generate_patch_mask(int H, int W, int patch, double mask_ratio,
                                     std::uint64_t seed, bool exact_count = false) {
  check_cfg(mask_ratio >= 0.0 && mask_ratio <= 1.0, "patch mask: ratio must be in [0,1]");
  PatchMask m = all_kept_mask(H, W, patch);
  m.seed = seed;
  auto rng = make_rng(seed, "patch_mask");
  const size_t n = m.kept.size();
  if (!exact_count) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (size_t i = 0; i < n; ++i) m.kept[i] = u(rng) < mask_ratio ? 0 : 1;
  } else {
    const int to_mask = (int)std::llround(mask_ratio * (double)n);
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int i = 0; i < to_mask; ++i) m.kept[idx[i]] = 0;
  }
  return m;
}

// Per-sample boolean grid at one feature resolution.
struct MaskGrid {
  int n = 0, h = 0, w = 0;
  std::vector<std::uint8_t> a;  // n*h*w, 1 = active

  bool at(int s, int i, int j) const { return a[((size_t)s * h + i) * w + j] != 0; }
  std::int64_t active_count() const {
    std::int64_t c = 0;
    for (auto v : a) c += v ? 1 : 0;
    return c;
  }
};

inline MaskGrid all_active_grid(int n, int h, int w) {
  MaskGrid g;
  g.n = n;
  g.h = h;
  g.w = w;
  g.a.assign((size_t)n * h * w, 1);
  return g;
}

// Project one patch mask onto an h x w feature grid with overall stride
// `stride` relative to the input image. When the patch grid is at least as
// coarse as the feature grid this is nearest-neighbor replication (active
// fraction preserved exactly); when the feature grid is coarser, the cell
// inherits the flag of its center-mapped patch.
inline void project_mask(const PatchMask& pm, int stride, int h, int w, int sample,
                         MaskGrid& out) {
  const int p = pm.patch;
  if (stride <= p) {
    check_cfg(p % stride == 0, "mask projection: stride " + std::to_string(stride) +
                                   " does not divide patch size " + std::to_string(p));
  } else {
    check_cfg(stride % p == 0, "mask projection: patch size " + std::to_string(p) +
                                   " does not divide stride " + std::to_string(stride));
  }
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const int pi = std::min((std::int64_t)i * stride / p, (std::int64_t)pm.grid_h - 1);
      const int pj = std::min((std::int64_t)j * stride / p, (std::int64_t)pm.grid_w - 1);
      out.a[((size_t)sample * h + i) * w + j] = pm.at((int)pi, (int)pj) ? 1 : 0;
    }
}

// Stage grids for a batch of patch masks. `stride` is the cumulative
// downsampling factor of the stage relative to the input image.
inline MaskGrid downsample_masks(const std::vector<PatchMask>& pms, int stride, int h, int w) {
  MaskGrid g;
  g.n = (int)pms.size();
  g.h = h;
  g.w = w;
  g.a.assign((size_t)g.n * h * w, 0);
  for (int s = 0; s < g.n; ++s) project_mask(pms[s], stride, h, w, s, g);
  return g;
}

// Single-mask convenience used by the spec-level downsample operation:
// stage 1..4 correspond to strides 4/8/16/32.
inline MaskGrid downsample_mask(const PatchMask& pm, int stage, int input_h, int input_w) {
  check_cfg(stage >= 1 && stage <= 4, "downsample_mask: stage must be in 1..4");
  const int stride = 4 << (stage - 1);
  check_cfg(input_h % stride == 0 && input_w % stride == 0,
            "downsample_mask: input extent not divisible by stage stride");
  return downsample_masks({pm}, stride, input_h / stride, input_w / stride);
}

}  // namespace sslct
