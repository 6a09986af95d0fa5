#pragma once

// Grad-CAM attention heatmaps over the coarsest convolutional stage, plus
// Pearson correlation between heatmaps from different pre-training methods.

#include "sslct/downstream.hpp"

namespace sslct {

struct Heatmap {
  int h = 0, w = 0;
  std::vector<float> map;  // >= 0, max-normalized to 1 unless all-zero
  std::string image_id;
  int class_index = 0;
  std::string method;
};

namespace detail {

// Scalar view of one logit; gradient flows back into that entry only.
template <typename T>
Ptr<T> select_scalar(const Ptr<T>& logits, int row, int col) {
  check_cfg(logits->shape.size() == 2 && row < logits->shape[0] && col < logits->shape[1],
            "select_scalar: index out of range");
  const int K = logits->shape[1];
  auto out = make_node<T>({1});
  out->value[0] = logits->value[(size_t)row * K + col];
  out->requires_grad = logits->requires_grad;
  if (out->requires_grad) {
    out->parents = {logits};
    Node<T>* o = out.get();
    out->backward_fn = [o, logits, row, col, K]() {
      logits->grad[(size_t)row * K + col] += o->grad[0];
    };
  }
  return out;
}

}  // namespace detail

// Channel weights are the spatial means of d(score)/d(activation) at the
// coarsest stage; the weighted activation sum passes through relu, is
// bilinearly upsampled to the input extent, and max-normalized.
template <typename T>
Heatmap gradcam(Classifier<T>& model, const Ptr<T>& image, int class_index) {
  check_cfg(image->shape.size() == 4 && image->shape[0] == 1 && image->shape[1] == 1,
            "gradcam: expected a single [1,1,H,W] image");
  check_cfg(class_index >= 0 && class_index < model.head.w->shape[0],
            "gradcam: class index out of range");
  const int H = image->shape[2], W = image->shape[3];

  auto pyramid = model.encoder.encode(image, false);
  auto activation = pyramid[3];  // [1,C,h,w]
  auto logits = model.head.forward(global_avgpool(activation));
  auto score = detail::select_scalar(logits, 0, class_index);

  model.all_params.zero_grad();
  activation->ensure_grad();
  activation->zero_grad();
  backward(score);

  const int C = activation->shape[1], h = activation->shape[2], w = activation->shape[3];
  const int hw = h * w;
  std::vector<double> cam((size_t)hw, 0.0);
  for (int c = 0; c < C; ++c) {
    double wk = 0;
    for (int i = 0; i < hw; ++i) wk += (double)activation->grad[(size_t)c * hw + i] / hw;
    for (int i = 0; i < hw; ++i) cam[i] += wk * (double)activation->value[(size_t)c * hw + i];
  }
  for (auto& v : cam) v = std::max(v, 0.0);

  auto up = resize_bilinear(cam, h, w, H, W);
  double mx = 0;
  for (double v : up) mx = std::max(mx, v);
  Heatmap out;
  out.h = H;
  out.w = W;
  out.class_index = class_index;
  out.map.reserve(up.size());
  if (mx <= 0.0) {
    std::cerr << "[sslct] warning: gradcam produced an all-zero heatmap\n";
    out.map.assign(up.size(), 0.0f);
  } else {
    for (double v : up) out.map.push_back((float)(v / mx));
  }
  return out;
}

// Pearson correlation over the flattened grids.
double heatmap_correlation(const Heatmap& a, const Heatmap& b);

// 8-bit PNG with a viridis-style palette, plus "<path>.raw" holding the
// float32 grid (little-endian, prefixed by h and w as int32).
void save_heatmap(const std::string& path, const Heatmap& hm);
Heatmap load_heatmap_raw(const std::string& raw_path);

// Symmetric pairwise correlation matrix as CSV (methods as header row/col).
void write_correlation_csv(const std::string& path, const std::vector<std::string>& methods,
                           const std::vector<double>& matrix);

}  // namespace sslct
