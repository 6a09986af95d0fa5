#pragma once

// Submanifold-sparse building blocks. A sparse feature map is dense storage
// plus an active-position grid; every op here multiplies its input by the
// active grid before computing, so values stashed at inactive positions can
// never leak into active outputs, and zeroes its output outside the active
// set, so the mask pattern survives arbitrary stacks of these ops.

#include "sslct/mask.hpp"
#include "sslct/ops.hpp"

namespace sslct {

template <typename T>
struct SparseFeatureMap {
  Ptr<T> values;   // [N,C,h,w], exactly 0 at inactive positions
  MaskGrid active;  // [N,h,w]
};

// x[N,C,H,W] * mask[N,H,W] broadcast over channels.
template <typename T>
Ptr<T> mul_mask(const Ptr<T>& x, const MaskGrid& mask) {
  check_cfg(x->shape.size() == 4 && x->shape[0] == mask.n && x->shape[2] == mask.h &&
                x->shape[3] == mask.w,
            "mul_mask: input " + shape_str(x->shape) + " vs mask [" + std::to_string(mask.n) +
                "," + std::to_string(mask.h) + "," + std::to_string(mask.w) + "]");
  const int N = x->shape[0], C = x->shape[1], HW = mask.h * mask.w;
  auto out = make_node<T>(x->shape);
  auto m = std::make_shared<std::vector<std::uint8_t>>(mask.a);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const size_t xb = (size_t)(n * C + c) * HW, mb = (size_t)n * HW;
      for (int i = 0; i < HW; ++i)
        out->value[xb + i] = (*m)[mb + i] ? x->value[xb + i] : T(0);
    }
  out->requires_grad = x->requires_grad;
  if (out->requires_grad) {
    out->parents = {x};
    Node<T>* o = out.get();
    out->backward_fn = [o, x, m, N, C, HW]() {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const size_t xb = (size_t)(n * C + c) * HW, mb = (size_t)n * HW;
          for (int i = 0; i < HW; ++i)
            if ((*m)[mb + i]) x->grad[xb + i] += o->grad[xb + i];
        }
    };
  }
  return out;
}

// Output active set of a strided sparse op: output position active iff its
// center-mapped input position (i*stride, j*stride) is active.
inline MaskGrid stride_mask(const MaskGrid& in, int stride, int out_h, int out_w) {
  MaskGrid g;
  g.n = in.n;
  g.h = out_h;
  g.w = out_w;
  g.a.assign((size_t)g.n * out_h * out_w, 0);
  for (int s = 0; s < g.n; ++s)
    for (int i = 0; i < out_h; ++i)
      for (int j = 0; j < out_w; ++j) {
        const int ii = std::min(i * stride, in.h - 1);
        const int jj = std::min(j * stride, in.w - 1);
        g.a[((size_t)s * out_h + i) * out_w + j] = in.at(s, ii, jj) ? 1 : 0;
      }
  return g;
}

// Submanifold sparse convolution: compute only where the kernel center lands
// on an active input position. Stride 1 preserves the active set exactly.
template <typename T>
SparseFeatureMap<T> submanifold_conv2d(const SparseFeatureMap<T>& in, const Ptr<T>& w,
                                       const Ptr<T>& b, int stride, int padding) {
  auto gated = mul_mask(in.values, in.active);
  auto dense = conv2d(gated, w, b, stride, padding);
  MaskGrid out_active = stride == 1
                            ? in.active
                            : stride_mask(in.active, stride, dense->shape[2], dense->shape[3]);
  SparseFeatureMap<T> out;
  out.values = mul_mask(dense, out_active);
  out.active = std::move(out_active);
  return out;
}

template <typename T>
SparseFeatureMap<T> sparse_relu(const SparseFeatureMap<T>& in) {
  return {relu(in.values), in.active};
}

// Max pooling over active positions only; a window with no active inputs
// yields an inactive, zero-valued output.
template <typename T>
SparseFeatureMap<T> sparse_maxpool2d(const SparseFeatureMap<T>& in, int kernel, int stride,
                                     int padding) {
  const Ptr<T>& x = in.values;
  const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  const int Ho = conv_out_extent(H, kernel, stride, padding);
  const int Wo = conv_out_extent(W, kernel, stride, padding);
  auto out = make_node<T>({N, C, Ho, Wo});
  MaskGrid oa;
  oa.n = N;
  oa.h = Ho;
  oa.w = Wo;
  oa.a.assign((size_t)N * Ho * Wo, 0);
  auto argmax = std::make_shared<std::vector<std::int64_t>>(out->value.size(), -1);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          for (int u = 0; u < kernel; ++u) {
            const int hi = i * stride - padding + u;
            if (hi < 0 || hi >= H) continue;
            for (int v = 0; v < kernel; ++v) {
              const int wi = j * stride - padding + v;
              if (wi < 0 || wi >= W) continue;
              if (!in.active.at(n, hi, wi)) continue;
              const std::int64_t xi = ((std::int64_t)(n * C + c) * H + hi) * W + wi;
              if (x->value[xi] > best) {
                best = x->value[xi];
                best_idx = xi;
              }
            }
          }
          const std::int64_t oi = ((std::int64_t)(n * C + c) * Ho + i) * Wo + j;
          out->value[oi] = best_idx >= 0 ? best : T(0);
          (*argmax)[oi] = best_idx;
          if (best_idx >= 0) oa.a[((size_t)n * Ho + i) * Wo + j] = 1;
        }
  out->requires_grad = x->requires_grad;
  if (out->requires_grad) {
    out->parents = {x};
    Node<T>* o = out.get();
    out->backward_fn = [o, x, argmax]() {
      for (size_t i = 0; i < o->grad.size(); ++i)
        if ((*argmax)[i] >= 0) x->grad[(*argmax)[i]] += o->grad[i];
    };
  }
  return {out, std::move(oa)};
}

// Batch normalization whose statistics run over active positions only.
// `mask` may be null for the dense case. Training mode updates running stats
// in place; eval mode uses them.
template <typename T>
Ptr<T> batchnorm_masked(const Ptr<T>& x, const Ptr<T>& gamma, const Ptr<T>& beta,
                        const MaskGrid* mask, bool training, std::vector<T>& run_mean,
                        std::vector<T>& run_var, T momentum = T(0.1), T eps = T(1e-5)) {
  check_cfg(x->shape.size() == 4, "batchnorm: expected 4-d input, got " + shape_str(x->shape));
  const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  const int HW = H * W;
  check_cfg(gamma->shape == Shape{C} && beta->shape == Shape{C}, "batchnorm: bad affine shapes");
  check_cfg((int)run_mean.size() == C && (int)run_var.size() == C,
            "batchnorm: bad running-stat sizes");
  check_cfg(!mask || (mask->n == N && mask->h == H && mask->w == W),
            "batchnorm: mask geometry mismatch");

  auto out = make_node<T>(x->shape);
  auto mu = std::make_shared<std::vector<T>>(C, T(0));
  auto inv_std = std::make_shared<std::vector<T>>(C, T(0));
  auto msk = std::make_shared<std::vector<std::uint8_t>>();
  if (mask) *msk = mask->a;
  std::int64_t count = mask ? mask->active_count() : (std::int64_t)N * HW;
  if (training && count == 0)
    throw ValidationError("batchnorm: zero active positions in training batch");

  auto active = [&](int n, std::int64_t i) -> bool {
    return msk->empty() || (*msk)[(size_t)n * HW + i];
  };

  if (training) {
    for (int c = 0; c < C; ++c) {
      T s = 0;
      for (int n = 0; n < N; ++n) {
        const size_t base = (size_t)(n * C + c) * HW;
        for (int i = 0; i < HW; ++i)
          if (active(n, i)) s += x->value[base + i];
      }
      const T m = s / T(count);
      T v = 0;
      for (int n = 0; n < N; ++n) {
        const size_t base = (size_t)(n * C + c) * HW;
        for (int i = 0; i < HW; ++i)
          if (active(n, i)) {
            const T d = x->value[base + i] - m;
            v += d * d;
          }
      }
      v /= T(count);
      (*mu)[c] = m;
      (*inv_std)[c] = T(1) / std::sqrt(v + eps);
      run_mean[c] = (T(1) - momentum) * run_mean[c] + momentum * m;
      run_var[c] = (T(1) - momentum) * run_var[c] + momentum * v;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      (*mu)[c] = run_mean[c];
      (*inv_std)[c] = T(1) / std::sqrt(run_var[c] + eps);
    }
  }

  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const size_t base = (size_t)(n * C + c) * HW;
      for (int i = 0; i < HW; ++i)
        out->value[base + i] =
            active(n, i)
                ? gamma->value[c] * (x->value[base + i] - (*mu)[c]) * (*inv_std)[c] +
                      beta->value[c]
                : T(0);
    }

  out->requires_grad = x->requires_grad || gamma->requires_grad || beta->requires_grad;
  if (out->requires_grad) {
    out->parents = {x, gamma, beta};
    Node<T>* o = out.get();
    const T cnt = T(count);
    out->backward_fn = [o, x, gamma, beta, mu, inv_std, msk, training, cnt, N, C, HW]() {
      auto active = [&](int n, std::int64_t i) -> bool {
        return msk->empty() || (*msk)[(size_t)n * HW + i];
      };
      for (int c = 0; c < C; ++c) {
        // Reductions over active positions: sum(dy), sum(dy * xhat).
        T sum_dy = 0, sum_dy_xhat = 0;
        for (int n = 0; n < N; ++n) {
          const size_t base = (size_t)(n * C + c) * HW;
          for (int i = 0; i < HW; ++i)
            if (active(n, i)) {
              const T xhat = (x->value[base + i] - (*mu)[c]) * (*inv_std)[c];
              sum_dy += o->grad[base + i];
              sum_dy_xhat += o->grad[base + i] * xhat;
            }
        }
        if (gamma->requires_grad) gamma->grad[c] += sum_dy_xhat;
        if (beta->requires_grad) beta->grad[c] += sum_dy;
        if (x->requires_grad) {
          const T g = gamma->value[c] * (*inv_std)[c];
          for (int n = 0; n < N; ++n) {
            const size_t base = (size_t)(n * C + c) * HW;
            for (int i = 0; i < HW; ++i)
              if (active(n, i)) {
                if (training) {
                  const T xhat = (x->value[base + i] - (*mu)[c]) * (*inv_std)[c];
                  x->grad[base + i] +=
                      g * (o->grad[base + i] - sum_dy / cnt - xhat * sum_dy_xhat / cnt);
                } else {
                  x->grad[base + i] += g * o->grad[base + i];
                }
              }
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
SparseFeatureMap<T> sparse_batchnorm(const SparseFeatureMap<T>& in, const Ptr<T>& gamma,
                                     const Ptr<T>& beta, bool training, std::vector<T>& run_mean,
                                     std::vector<T>& run_var, T momentum = T(0.1),
                                     T eps = T(1e-5)) {
  return {batchnorm_masked(in.values, gamma, beta, &in.active, training, run_mean, run_var,
                           momentum, eps),
          in.active};
}

}  // namespace sslct
