#include "sslct/explain.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>

namespace sslct {

double heatmap_correlation(const Heatmap& a, const Heatmap& b) {
  check_cfg(a.h == b.h && a.w == b.w, "heatmap correlation: shape mismatch");
  const size_t n = a.map.size();
  check_cfg(n >= 2, "heatmap correlation: need at least 2 pixels");
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) {
    ma += a.map[i];
    mb += b.map[i];
  }
  ma /= (double)n;
  mb /= (double)n;
  double va = 0, vb = 0, cov = 0;
  for (size_t i = 0; i < n; ++i) {
    const double da = a.map[i] - ma, db = b.map[i] - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  if (va <= 0.0 || vb <= 0.0)
    throw ValidationError("heatmap correlation: undefined for a zero-variance map");
  return cov / std::sqrt(va * vb);
}

namespace {

// Coarse viridis anchors, linearly interpolated.
void viridis(double t, std::uint8_t rgb[3]) {
  static const double anchors[][3] = {
      {68, 1, 84},   {72, 40, 120},  {62, 74, 137},  {49, 104, 142}, {38, 130, 142},
      {31, 158, 137}, {53, 183, 121}, {109, 205, 89}, {180, 222, 44}, {253, 231, 37},
  };
  t = std::min(std::max(t, 0.0), 1.0) * 8.999;
  const int i = (int)t;
  const double f = t - i;
  for (int c = 0; c < 3; ++c)
    rgb[c] = (std::uint8_t)std::lround(anchors[i][c] * (1 - f) + anchors[i + 1][c] * f);
}

void write_png_rgb(const std::string& path, int h, int w, const std::vector<std::uint8_t>& rgb) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw IoError("cannot write PNG: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    std::fclose(f);
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed for " + path);
  }
  if (setjmp(png_jmpbuf(png))) {
    std::fclose(f);
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG write failed: " + path);
  }
  png_init_io(png, f);
  png_set_IHDR(png, info, (png_uint_32)w, (png_uint_32)h, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int i = 0; i < h; ++i) png_write_row(png, (png_const_bytep)&rgb[(size_t)i * w * 3]);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(f);
}

}  // namespace

void save_heatmap(const std::string& path, const Heatmap& hm) {
  check_cfg(hm.h >= 1 && hm.w >= 1 && (int)hm.map.size() == hm.h * hm.w,
            "save_heatmap: bad geometry");
  std::vector<std::uint8_t> rgb((size_t)hm.h * hm.w * 3);
  for (size_t i = 0; i < hm.map.size(); ++i) viridis(hm.map[i], &rgb[i * 3]);
  write_png_rgb(path, hm.h, hm.w, rgb);

  std::ofstream raw(path + ".raw", std::ios::binary);
  if (!raw) throw IoError("cannot write heatmap sidecar: " + path + ".raw");
  const std::int32_t h = hm.h, w = hm.w;
  raw.write((const char*)&h, sizeof h);
  raw.write((const char*)&w, sizeof w);
  raw.write((const char*)hm.map.data(), (std::streamsize)(hm.map.size() * sizeof(float)));
  if (!raw) throw IoError("short write: " + path + ".raw");
}

Heatmap load_heatmap_raw(const std::string& raw_path) {
  std::ifstream raw(raw_path, std::ios::binary);
  if (!raw) throw IoError("cannot read heatmap sidecar: " + raw_path);
  std::int32_t h = 0, w = 0;
  raw.read((char*)&h, sizeof h);
  raw.read((char*)&w, sizeof w);
  if (!raw || h < 1 || w < 1) throw IoError("malformed heatmap sidecar: " + raw_path);
  Heatmap hm;
  hm.h = h;
  hm.w = w;
  hm.map.resize((size_t)h * w);
  raw.read((char*)hm.map.data(), (std::streamsize)(hm.map.size() * sizeof(float)));
  if (!raw) throw IoError("truncated heatmap sidecar: " + raw_path);
  return hm;
}

void write_correlation_csv(const std::string& path, const std::vector<std::string>& methods,
                           const std::vector<double>& matrix) {
  const size_t M = methods.size();
  check_cfg(matrix.size() == M * M, "correlation csv: matrix size mismatch");
  std::ofstream f(path);
  if (!f) throw IoError("cannot write correlation matrix: " + path);
  f << "method";
  for (const auto& m : methods) f << "," << m;
  f << "\n";
  f.precision(6);
  f << std::fixed;
  for (size_t i = 0; i < M; ++i) {
    f << methods[i];
    for (size_t j = 0; j < M; ++j) f << "," << matrix[i * M + j];
    f << "\n";
  }
}

}  // namespace sslct
