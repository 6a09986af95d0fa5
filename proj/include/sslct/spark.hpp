#pragma once

// Masked-autoencoder objective with a sparse encoder: patch masking, sparse
// gathering, densification with learnable per-level mask embeddings, a
// hierarchical decoder fusing all four pyramid levels, and a reconstruction
// loss restricted to masked positions.

#include "sslct/encoder.hpp"

namespace sslct {

// Copy kept patches of an image into a sparse map; masked positions hold 0
// and are inactive.
template <typename T>
SparseFeatureMap<T> sparse_gather(const Ptr<T>& image, const PatchMask& mask) {
  check_cfg(image->shape.size() == 3 && image->shape[0] == 1,
            "sparse_gather: expected [1,H,W] image, got " + shape_str(image->shape));
  const int H = image->shape[1], W = image->shape[2];
  check_cfg(mask.grid_h * mask.patch == H && mask.grid_w * mask.patch == W,
            "sparse_gather: mask geometry mismatch");
  MaskGrid g = downsample_masks({mask}, 1, H, W);
  auto values = make_node<T>({1, 1, H, W});
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j)
      values->value[(size_t)i * W + j] =
          g.at(0, i, j) ? image->value[(size_t)i * W + j] : T(0);
  return {values, std::move(g)};
}

// One learnable vector per pyramid level, length = level channel width.
template <typename T>
struct MaskEmbeddings {
  std::vector<Ptr<T>> levels;  // 4 vectors

  MaskEmbeddings() = default;
  MaskEmbeddings(const std::vector<int>& widths, std::uint64_t seed) {
    auto rng = make_rng(seed, "mask_embed");
    std::normal_distribution<double> dist(0.0, 0.02);
    for (int w : widths) {
      auto e = make_node<T>({w});
      for (auto& v : e->value) v = (T)dist(rng);
      levels.push_back(e);
    }
  }
  void register_params(ParamSet<T>& ps, const std::string& prefix) {
    for (size_t i = 0; i < levels.size(); ++i)
      ps.add(prefix + ".level" + std::to_string(i), levels[i]);
  }
};

// Fill inactive positions with the level's embedding vector, broadcast over
// space; active positions keep the encoder values.
template <typename T>
Ptr<T> densify(const SparseFeatureMap<T>& fm, const Ptr<T>& embedding) {
  const Ptr<T>& x = fm.values;
  check_cfg(x->shape.size() == 4, "densify: expected 4-d feature map");
  const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  check_cfg(embedding->shape == Shape{C},
            "densify: embedding length " + shape_str(embedding->shape) +
                " does not match channel width " + std::to_string(C));
  auto out = make_node<T>(x->shape);
  auto m = std::make_shared<std::vector<std::uint8_t>>(fm.active.a);
  const int HW = H * W;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const size_t xb = (size_t)(n * C + c) * HW, mb = (size_t)n * HW;
      for (int i = 0; i < HW; ++i)
        out->value[xb + i] = (*m)[mb + i] ? x->value[xb + i] : embedding->value[c];
    }
  out->requires_grad = x->requires_grad || embedding->requires_grad;
  if (out->requires_grad) {
    out->parents = {x, embedding};
    Node<T>* o = out.get();
    out->backward_fn = [o, x, embedding, m, N, C, HW]() {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const size_t xb = (size_t)(n * C + c) * HW, mb = (size_t)n * HW;
          for (int i = 0; i < HW; ++i) {
            if ((*m)[mb + i]) {
              if (x->requires_grad) x->grad[xb + i] += o->grad[xb + i];
            } else if (embedding->requires_grad) {
              embedding->grad[c] += o->grad[xb + i];
            }
          }
        }
    };
  }
  return out;
}

// Mean squared pixel error over masked-patch pixels only.
template <typename T>
Ptr<T> masked_l2_loss(const Ptr<T>& pred, const Ptr<T>& target,
                      const std::vector<PatchMask>& masks) {
  check_shape(pred->shape == target->shape, "masked_l2_loss", pred->shape, target->shape);
  check_cfg(pred->shape.size() == 4 && pred->shape[1] == 1,
            "masked_l2_loss: expected [N,1,H,W]");
  const int N = pred->shape[0], H = pred->shape[2], W = pred->shape[3];
  check_cfg((int)masks.size() == N, "masked_l2_loss: one mask per sample");
  MaskGrid kept = downsample_masks(masks, 1, H, W);
  std::int64_t masked_count = (std::int64_t)N * H * W - kept.active_count();
  if (masked_count == 0)
    throw ValidationError("masked_l2_loss: mask has zero masked patches, loss undefined");
  auto out = make_node<T>({1});
  auto m = std::make_shared<std::vector<std::uint8_t>>(std::move(kept.a));
  T acc = 0;
  for (size_t i = 0; i < pred->value.size(); ++i) {
    if ((*m)[i]) continue;
    const T d = pred->value[i] - target->value[i];
    acc += d * d;
  }
  out->value[0] = acc / T(masked_count);
  out->requires_grad = pred->requires_grad || target->requires_grad;
  if (out->requires_grad) {
    out->parents = {pred, target};
    Node<T>* o = out.get();
    out->backward_fn = [o, pred, target, m, masked_count]() {
      const T s = T(2) * o->grad[0] / T(masked_count);
      for (size_t i = 0; i < pred->value.size(); ++i) {
        if ((*m)[i]) continue;
        const T d = pred->value[i] - target->value[i];
        if (pred->requires_grad) pred->grad[i] += s * d;
        if (target->requires_grad) target->grad[i] -= s * d;
      }
    };
  }
  return out;
}

struct DecoderConfig {
  // Widths after the coarsest projection and after each of the 3 upsampling
  // blocks; skip projections adapt encoder widths to these.
  std::vector<int> widths{320, 160, 80, 40};
  int head_width = 20;

  void validate() const {
    check_cfg(widths.size() == 4, "decoder: expected 4 level widths");
    for (int w : widths) check_cfg(w >= 1, "decoder: widths must be >= 1");
    check_cfg(head_width >= 1, "decoder: head width must be >= 1");
  }
};

// U-Net style decoder head over a densified pyramid: three upsampling blocks,
// each fusing the projected skip feature of the matching level, then two more
// upsampling layers back to input resolution.
template <typename T>
struct SparkDecoder {
  DecoderConfig cfg;
  std::vector<Conv2dLayer<T>> proj;  // per level, coarsest first (1x1)
  struct UpBlock {
    Conv2dLayer<T> conv1, conv2;
    BatchNormLayer<T> bn1, bn2;
  };
  std::vector<UpBlock> blocks;  // 3
  Conv2dLayer<T> head_conv1, head_conv2;
  BatchNormLayer<T> head_bn;

  SparkDecoder() = default;
  SparkDecoder(const DecoderConfig& config, const std::vector<int>& encoder_widths,
               std::uint64_t seed)
      : cfg(config) {
    cfg.validate();
    check_cfg(encoder_widths.size() == 4, "decoder: expected 4 encoder widths");
    auto rng = make_rng(seed, "decoder_init");
    // Level 0 projects the coarsest encoder map; levels 1..3 project skips.
    for (int i = 0; i < 4; ++i)
      proj.emplace_back(encoder_widths[3 - i], cfg.widths[i], 1, 1, 0, true, rng);
    for (int i = 0; i < 3; ++i) {
      UpBlock b;
      b.conv1 = Conv2dLayer<T>(cfg.widths[i], cfg.widths[i + 1], 3, 1, 1, false, rng);
      b.bn1 = BatchNormLayer<T>(cfg.widths[i + 1]);
      b.conv2 = Conv2dLayer<T>(cfg.widths[i + 1], cfg.widths[i + 1], 3, 1, 1, false, rng);
      b.bn2 = BatchNormLayer<T>(cfg.widths[i + 1]);
      blocks.push_back(std::move(b));
    }
    head_conv1 = Conv2dLayer<T>(cfg.widths[3], cfg.head_width, 3, 1, 1, false, rng);
    head_bn = BatchNormLayer<T>(cfg.head_width);
    head_conv2 = Conv2dLayer<T>(cfg.head_width, 1, 3, 1, 1, true, rng);
  }

  void register_params(ParamSet<T>& ps, const std::string& prefix) {
    for (int i = 0; i < 4; ++i)
      proj[i].register_params(ps, prefix + ".proj" + std::to_string(i));
    for (int i = 0; i < 3; ++i) {
      const std::string bp = prefix + ".block" + std::to_string(i);
      blocks[i].conv1.register_params(ps, bp + ".conv1");
      blocks[i].bn1.register_params(ps, bp + ".bn1");
      blocks[i].conv2.register_params(ps, bp + ".conv2");
      blocks[i].bn2.register_params(ps, bp + ".bn2");
    }
    head_conv1.register_params(ps, prefix + ".head.conv1");
    head_bn.register_params(ps, prefix + ".head.bn");
    head_conv2.register_params(ps, prefix + ".head.conv2");
  }

  void collect_buffers(std::vector<std::pair<std::string, std::vector<T>*>>& out,
                       const std::string& prefix) {
    for (int i = 0; i < 3; ++i) {
      const std::string bp = prefix + "block" + std::to_string(i);
      out.push_back({bp + ".bn1.mean", &blocks[i].bn1.run_mean});
      out.push_back({bp + ".bn1.var", &blocks[i].bn1.run_var});
      out.push_back({bp + ".bn2.mean", &blocks[i].bn2.run_mean});
      out.push_back({bp + ".bn2.var", &blocks[i].bn2.run_var});
    }
    out.push_back({prefix + "head.bn.mean", &head_bn.run_mean});
    out.push_back({prefix + "head.bn.var", &head_bn.run_var});
  }

  // `densified` is coarsest-first; target_h/w is the input image extent.
  Ptr<T> decode(const std::vector<Ptr<T>>& densified, int target_h, int target_w,
                bool training) {
    check_cfg(densified.size() == 4, "decode: expected 4 pyramid levels");
    auto d = proj[0].forward(densified[0]);
    for (int i = 0; i < 3; ++i) {
      const Ptr<T>& skip = densified[i + 1];
      const int factor = skip->shape[2] / d->shape[2];
      check_cfg(factor >= 1 && d->shape[2] * factor == skip->shape[2],
                "decode: pyramid extents do not nest");
      d = upsample_nearest(d, factor);
      d = relu(blocks[i].bn1.forward(blocks[i].conv1.forward(d), training));
      d = relu(blocks[i].bn2.forward(blocks[i].conv2.forward(d), training));
      d = add(d, proj[i + 1].forward(skip));
    }
    // Two final upsampling layers bring /4 back to input resolution.
    check_cfg(d->shape[2] * 4 == target_h && d->shape[3] * 4 == target_w,
              "decode: output extent would not match input extent");
    d = upsample_nearest(d, 2);
    d = relu(head_bn.forward(head_conv1.forward(d), training));
    d = upsample_nearest(d, 2);
    return head_conv2.forward(d);
  }
};

inline std::int64_t decoder_param_count_formula(const DecoderConfig& cfg,
                                                const std::vector<int>& enc_widths) {
  std::int64_t total = 0;
  for (int i = 0; i < 4; ++i)
    total += (std::int64_t)enc_widths[3 - i] * cfg.widths[i] + cfg.widths[i];
  for (int i = 0; i < 3; ++i)
    total += 9LL * cfg.widths[i] * cfg.widths[i + 1] + 2 * cfg.widths[i + 1] +
             9LL * cfg.widths[i + 1] * cfg.widths[i + 1] + 2 * cfg.widths[i + 1];
  total += 9LL * cfg.widths[3] * cfg.head_width + 2 * cfg.head_width;
  total += 9LL * cfg.head_width * 1 + 1;
  return total;
}

// Full SparK model: sparse encoder + mask embeddings + decoder.
template <typename T>
struct SparkModel {
  Encoder<T> encoder;
  MaskEmbeddings<T> embeddings;
  SparkDecoder<T> decoder;
  ParamSet<T> params;

  SparkModel() = default;
  SparkModel(const EncoderConfig& ec, const DecoderConfig& dc, std::uint64_t seed)
      : encoder(ec, derive_seed(seed, "spark_encoder")),
        embeddings(ec.widths, derive_seed(seed, "spark_embed")),
        decoder(dc, ec.widths, derive_seed(seed, "spark_decoder")) {
    params.extend(encoder.params, "encoder.");
    embeddings.register_params(params, "embed");
    decoder.register_params(params, "decoder");
  }

  void collect_buffers(std::vector<std::pair<std::string, std::vector<T>*>>& out) {
    encoder.collect_buffers(out, "encoder.");
    decoder.collect_buffers(out, "decoder.");
  }

  // Reconstruction of a masked batch.
  Ptr<T> reconstruct(const Ptr<T>& images, const std::vector<PatchMask>& masks, bool training) {
    auto pyramid = encoder.encode_sparse(images, masks, training);
    std::vector<Ptr<T>> densified;
    for (int i = 3; i >= 0; --i) densified.push_back(densify(pyramid[i], embeddings.levels[i]));
    return decoder.decode(densified, images->shape[2], images->shape[3], training);
  }
};

// One optimizer step over encoder + decoder + embeddings + projections;
// returns the pre-step loss.
template <typename T>
T spark_pretrain_step(SparkModel<T>& model, const Ptr<T>& images,
                      const std::vector<PatchMask>& masks, const OptimizerConfig& opt,
                      OptimizerState<T>& state, std::int64_t step_index) {
  model.params.zero_grad();
  auto pred = model.reconstruct(images, masks, true);
  auto loss = masked_l2_loss(pred, images, masks);
  backward(loss);
  optimizer_step(model.params, state, opt, step_index);
  return loss->value[0];
}

}  // namespace sslct
