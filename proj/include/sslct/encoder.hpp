#pragma once

// Residual bottleneck encoder (ResNet50 layout by default) emitting a 4-level
// feature pyramid at strides /4, /8, /16, /32. Every block runs either dense
// or in submanifold-sparse mode; the sparse mode propagates active sets via
// center-position masking so the masking ratio stays consistent across
// stages.

#include "sslct/layers.hpp"

namespace sslct {

struct EncoderConfig {
  std::vector<int> blocks{3, 4, 6, 3};
  std::vector<int> widths{256, 512, 1024, 2048};
  int in_channels = 1;

  void validate() const {
    check_cfg(blocks.size() == 4 && widths.size() == 4, "encoder: expected 4 stages");
    for (int b : blocks) check_cfg(b >= 1, "encoder: block counts must be >= 1");
    for (size_t i = 1; i < widths.size(); ++i)
      check_cfg(widths[i] > widths[i - 1], "encoder: stage widths must be strictly increasing");
    check_cfg(widths[0] % 4 == 0, "encoder: stage widths must be divisible by 4");
    check_cfg(in_channels >= 1, "encoder: in_channels must be >= 1");
  }
  // Stem output channels; ResNet convention is a quarter of stage-1 width.
  int stem_width() const { return widths[0] / 4; }
};

template <typename T>
struct Bottleneck {
  Conv2dLayer<T> c1, c2, c3;
  BatchNormLayer<T> b1, b2, b3;
  bool has_shortcut = false;
  Conv2dLayer<T> sc;
  BatchNormLayer<T> sb;
  int stride = 1;

  Bottleneck() = default;
  Bottleneck(int in_ch, int out_ch, int stride_, std::mt19937_64& rng) : stride(stride_) {
    const int mid = out_ch / 4;
    c1 = Conv2dLayer<T>(in_ch, mid, 1, 1, 0, false, rng);
    b1 = BatchNormLayer<T>(mid);
    c2 = Conv2dLayer<T>(mid, mid, 3, stride_, 1, false, rng);
    b2 = BatchNormLayer<T>(mid);
    c3 = Conv2dLayer<T>(mid, out_ch, 1, 1, 0, false, rng);
    b3 = BatchNormLayer<T>(out_ch);
    if (stride_ != 1 || in_ch != out_ch) {
      has_shortcut = true;
      sc = Conv2dLayer<T>(in_ch, out_ch, 1, stride_, 0, false, rng);
      sb = BatchNormLayer<T>(out_ch);
    }
  }

  void register_params(ParamSet<T>& ps, const std::string& prefix) {
    c1.register_params(ps, prefix + ".conv1");
    b1.register_params(ps, prefix + ".bn1");
    c2.register_params(ps, prefix + ".conv2");
    b2.register_params(ps, prefix + ".bn2");
    c3.register_params(ps, prefix + ".conv3");
    b3.register_params(ps, prefix + ".bn3");
    if (has_shortcut) {
      sc.register_params(ps, prefix + ".downsample.conv");
      sb.register_params(ps, prefix + ".downsample.bn");
    }
  }

  void collect_buffers(std::vector<std::pair<std::string, std::vector<T>*>>& out,
                       const std::string& prefix) {
    out.push_back({prefix + ".bn1.mean", &b1.run_mean});
    out.push_back({prefix + ".bn1.var", &b1.run_var});
    out.push_back({prefix + ".bn2.mean", &b2.run_mean});
    out.push_back({prefix + ".bn2.var", &b2.run_var});
    out.push_back({prefix + ".bn3.mean", &b3.run_mean});
    out.push_back({prefix + ".bn3.var", &b3.run_var});
    if (has_shortcut) {
      out.push_back({prefix + ".downsample.bn.mean", &sb.run_mean});
      out.push_back({prefix + ".downsample.bn.var", &sb.run_var});
    }
  }

  Ptr<T> forward(const Ptr<T>& x, bool training) {
    auto h = relu(b1.forward(c1.forward(x), training));
    h = relu(b2.forward(c2.forward(h), training));
    h = b3.forward(c3.forward(h), training);
    auto s = has_shortcut ? sb.forward(sc.forward(x), training) : x;
    return relu(add(h, s));
  }

  SparseFeatureMap<T> forward(const SparseFeatureMap<T>& x, bool training) {
    auto h = sparse_relu(b1.forward(c1.forward(x), training));
    h = sparse_relu(b2.forward(c2.forward(h), training));
    h = b3.forward(c3.forward(h), training);
    SparseFeatureMap<T> s = has_shortcut ? sb.forward(sc.forward(x), training) : x;
    return sparse_relu(SparseFeatureMap<T>{add(h.values, s.values), h.active});
  }
};

template <typename T>
struct Encoder {
  EncoderConfig cfg;
  Conv2dLayer<T> stem_conv;
  BatchNormLayer<T> stem_bn;
  std::vector<std::vector<Bottleneck<T>>> stages;
  ParamSet<T> params;

  Encoder() = default;
  Encoder(const EncoderConfig& config, std::uint64_t seed) : cfg(config) {
    cfg.validate();
    auto rng = make_rng(seed, "encoder_init");
    stem_conv = Conv2dLayer<T>(cfg.in_channels, cfg.stem_width(), 7, 2, 3, false, rng);
    stem_bn = BatchNormLayer<T>(cfg.stem_width());
    int in_ch = cfg.stem_width();
    for (int s = 0; s < 4; ++s) {
      std::vector<Bottleneck<T>> stage;
      for (int bi = 0; bi < cfg.blocks[s]; ++bi) {
        const int stride = (s > 0 && bi == 0) ? 2 : 1;
        stage.emplace_back(in_ch, cfg.widths[s], stride, rng);
        in_ch = cfg.widths[s];
      }
      stages.push_back(std::move(stage));
    }
    stem_conv.register_params(params, "stem.conv");
    stem_bn.register_params(params, "stem.bn");
    for (int s = 0; s < 4; ++s)
      for (int bi = 0; bi < (int)stages[s].size(); ++bi)
        stages[s][bi].register_params(params,
                                      "stage" + std::to_string(s + 1) + ".block" +
                                          std::to_string(bi));
  }

  std::int64_t parameter_count() const { return params.count(); }

  void collect_buffers(std::vector<std::pair<std::string, std::vector<T>*>>& out,
                       const std::string& prefix = "") {
    out.push_back({prefix + "stem.bn.mean", &stem_bn.run_mean});
    out.push_back({prefix + "stem.bn.var", &stem_bn.run_var});
    for (int s = 0; s < 4; ++s)
      for (int bi = 0; bi < (int)stages[s].size(); ++bi)
        stages[s][bi].collect_buffers(out, prefix + "stage" + std::to_string(s + 1) + ".block" +
                                               std::to_string(bi));
  }

  void validate_input(const Shape& shape) const {
    check_cfg(shape.size() == 4, "encode: expected [N,C,H,W] input, got " + shape_str(shape));
    check_cfg(shape[1] == cfg.in_channels, "encode: expected " +
                                               std::to_string(cfg.in_channels) +
                                               " channels, got " + std::to_string(shape[1]));
    check_cfg(shape[2] % 4 == 0 && shape[3] % 4 == 0,
              "encode: spatial extents must be divisible by 4, got " + shape_str(shape));
  }

  // Dense 4-level pyramid at strides /4, /8, /16, /32 (degenerate extents
  // saturate at 1x1 for small inputs).
  std::vector<Ptr<T>> encode(const Ptr<T>& x, bool training) {
    validate_input(x->shape);
    auto h = relu(stem_bn.forward(stem_conv.forward(x), training));
    h = maxpool2d(h, 3, 2, 1);
    std::vector<Ptr<T>> pyramid;
    for (int s = 0; s < 4; ++s) {
      for (auto& blk : stages[s]) h = blk.forward(h, training);
      pyramid.push_back(h);
    }
    return pyramid;
  }

  // Sparse pyramid. The input active set is the patch mask replicated to
  // pixel resolution; strided ops use center-position masking.
  std::vector<SparseFeatureMap<T>> encode_sparse(const Ptr<T>& x,
                                                 const std::vector<PatchMask>& masks,
                                                 bool training) {
    validate_input(x->shape);
    check_cfg((int)masks.size() == x->shape[0], "encode_sparse: one patch mask per sample");
    const int H = x->shape[2], W = x->shape[3];
    for (const auto& m : masks)
      check_cfg(m.grid_h * m.patch == H && m.grid_w * m.patch == W,
                "encode_sparse: patch mask geometry mismatch");
    SparseFeatureMap<T> sm{x, downsample_masks(masks, 1, H, W)};
    sm = sparse_relu(stem_bn.forward(stem_conv.forward(sm), training));
    // Stem pool: pool over active positions, then gate with the
    // center-mapped mask so the stage-1 active fraction matches the patch
    // mask exactly.
    auto pooled = sparse_maxpool2d(sm, 3, 2, 1);
    MaskGrid gate = stride_mask(sm.active, 2, pooled.values->shape[2], pooled.values->shape[3]);
    sm = {mul_mask(pooled.values, gate), std::move(gate)};
    std::vector<SparseFeatureMap<T>> pyramid;
    for (int s = 0; s < 4; ++s) {
      for (auto& blk : stages[s]) sm = blk.forward(sm, training);
      pyramid.push_back(sm);
    }
    return pyramid;
  }
};

// Independent per-layer parameter counting (closed-form shape products); used
// as an oracle against ParamSet totals.
inline std::int64_t encoder_param_count_formula(const EncoderConfig& cfg) {
  cfg.validate();
  auto conv = [](std::int64_t cin, std::int64_t cout, std::int64_t k) { return cin * cout * k * k; };
  auto bn = [](std::int64_t c) { return 2 * c; };
  const std::int64_t stem_w = cfg.stem_width();
  std::int64_t total = conv(cfg.in_channels, stem_w, 7) + bn(stem_w);
  std::int64_t in_ch = stem_w;
  for (int s = 0; s < 4; ++s) {
    const std::int64_t out_ch = cfg.widths[s];
    const std::int64_t mid = out_ch / 4;
    for (int bi = 0; bi < cfg.blocks[s]; ++bi) {
      total += conv(in_ch, mid, 1) + bn(mid) + conv(mid, mid, 3) + bn(mid) +
               conv(mid, out_ch, 1) + bn(out_ch);
      if (bi == 0 && (s > 0 || in_ch != out_ch)) total += conv(in_ch, out_ch, 1) + bn(out_ch);
      in_ch = out_ch;
    }
  }
  return total;
}

}  // namespace sslct
