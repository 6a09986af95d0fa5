#pragma once

// Ingestion and preprocessing: raw CT slices in Hounsfield units to 8-bit
// grayscale (interval mapping or windowing), resizing, dataset statistics,
// and manifest loading with subject-level split enforcement.

#include <cstdint>
#include <string>
#include <vector>

#include "sslct/image.hpp"

namespace sslct {

constexpr int kHuMin = -1024;
constexpr int kHuMax = 3071;

// Raw slice in Hounsfield units.
struct HuSlice {
  int h = 0, w = 0;
  std::vector<std::int16_t> hu;
  std::string subject_id;
};

struct GrayImage {
  int h = 0, w = 0;
  std::vector<std::uint8_t> pix;
};

inline int round_half_up(double x) { return (int)std::floor(x + 0.5); }

inline std::int16_t clamp_hu(int hu) {
  return (std::int16_t)std::min(std::max(hu, kHuMin), kHuMax);
}

// Full-range interval mapping: [-1024, 3071] -> [0, 255].
inline std::uint8_t hu_interval_map_value(int hu) {
  const int c = clamp_hu(hu);
  const int g = round_half_up((double)(c + 1024) * 255.0 / 4095.0);
  return (std::uint8_t)std::min(std::max(g, 0), 255);
}

inline GrayImage hu_interval_map(const HuSlice& s) {
  GrayImage out{s.h, s.w, {}};
  out.pix.reserve(s.hu.size());
  for (std::int16_t v : s.hu) out.pix.push_back(hu_interval_map_value(v));
  return out;
}

// Windowing: clamp to [level - width/2, level + width/2], then map linearly
// to [0, 255].
inline std::uint8_t apply_window_value(int hu, double level, double width) {
  check_cfg(width > 0.0, "window: width must be > 0");
  const double lo = level - width / 2.0;
  const double hi = level + width / 2.0;
  const double c = std::min(std::max((double)clamp_hu(hu), lo), hi);
  const int g = round_half_up((c - lo) * 255.0 / width);
  return (std::uint8_t)std::min(std::max(g, 0), 255);
}

inline GrayImage apply_window(const HuSlice& s, double level, double width) {
  GrayImage out{s.h, s.w, {}};
  out.pix.reserve(s.hu.size());
  for (std::int16_t v : s.hu) out.pix.push_back(apply_window_value(v, level, width));
  return out;
}

inline GrayImage resize_gray(const GrayImage& img, int th, int tw) {
  std::vector<double> src(img.pix.begin(), img.pix.end());
  auto dst = resize_bilinear(src, img.h, img.w, th, tw);
  GrayImage out{th, tw, {}};
  out.pix.reserve(dst.size());
  for (double v : dst)
    out.pix.push_back((std::uint8_t)std::min(std::max(round_half_up(v), 0), 255));
  return out;
}

// ---------------------------------------------------------------------------
// dataset statistics and normalization
// ---------------------------------------------------------------------------

struct DatasetStats {
  double mean = 0.0;
  double stddev = 1.0;
};

// Two-pass mean/std over the [0,1]-scaled pixels of the given images.
DatasetStats compute_stats(const std::vector<GrayImage>& images);

// (x/255 - mean) / std
template <typename T>
std::vector<T> normalize(const GrayImage& img, const DatasetStats& stats) {
  check_cfg(stats.stddev > 0.0, "normalize: std must be > 0");
  std::vector<T> out;
  out.reserve(img.pix.size());
  for (std::uint8_t p : img.pix)
    out.push_back((T)(((double)p / 255.0 - stats.mean) / stats.stddev));
  return out;
}

void save_stats(const std::string& path, const DatasetStats& stats);
DatasetStats load_stats(const std::string& path);

// ---------------------------------------------------------------------------
// manifests
// ---------------------------------------------------------------------------

struct ManifestRecord {
  std::string image_path;
  int label = 0;
  std::string subject_id;
  std::string split;  // train | val | test
};

struct Manifest {
  std::vector<ManifestRecord> records;

  std::vector<ManifestRecord> split(const std::string& name) const {
    std::vector<ManifestRecord> out;
    for (const auto& r : records)
      if (r.split == name) out.push_back(r);
    return out;
  }
  int num_classes() const {
    int mx = -1;
    for (const auto& r : records) mx = std::max(mx, r.label);
    return mx + 1;
  }
};

// CSV with header image_path,label,subject_id,split; rejects unknown split
// tags, malformed labels, and subjects spanning more than one split.
Manifest load_manifest(const std::string& path);

// ---------------------------------------------------------------------------
// file formats
// ---------------------------------------------------------------------------

// 16-bit binary PGM (P5, maxval 65535, big-endian samples) holding hu+1024;
// the subject id travels in a "<path>.meta" text sidecar.
void write_pgm16(const std::string& path, const HuSlice& slice);
HuSlice read_pgm16(const std::string& path);

// 8-bit grayscale PNG.
void write_png8(const std::string& path, const GrayImage& img);
GrayImage read_png8(const std::string& path);

}  // namespace sslct
