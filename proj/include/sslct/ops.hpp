#pragma once

// Differentiable primitive inventory: elementwise arithmetic, matmul/linear,
// conv2d, relu, max/avg pooling, nearest and bilinear upsampling,
// (masked) batch normalization, softmax cross-entropy, l2 losses, and the
// row-vector helpers used by the contrastive heads.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "sslct/tensor.hpp"

namespace sslct {

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename T>
Ptr<T> add(const Ptr<T>& a, const Ptr<T>& b) {
  check_shape(a->shape == b->shape, "add", a->shape, b->shape);
  auto out = make_node<T>(a->shape);
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = a->value[i] + b->value[i];
  out->requires_grad = a->requires_grad || b->requires_grad;
  if (out->requires_grad) {
    out->parents = {a, b};
    Node<T>* o = out.get();
    out->backward_fn = [o, a, b]() {
      if (a->requires_grad)
        for (size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i];
      if (b->requires_grad)
        for (size_t i = 0; i < o->grad.size(); ++i) b->grad[i] += o->grad[i];
    };
  }
  return out;
}

template <typename T>
Ptr<T> sub(const Ptr<T>& a, const Ptr<T>& b) {
  check_shape(a->shape == b->shape, "sub", a->shape, b->shape);
  auto out = make_node<T>(a->shape);
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = a->value[i] - b->value[i];
  out->requires_grad = a->requires_grad || b->requires_grad;
  if (out->requires_grad) {
    out->parents = {a, b};
    Node<T>* o = out.get();
    out->backward_fn = [o, a, b]() {
      if (a->requires_grad)
        for (size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i];
      if (b->requires_grad)
        for (size_t i = 0; i < o->grad.size(); ++i) b->grad[i] -= o->grad[i];
    };
  }
  return out;
}

template <typename T>
Ptr<T> mul(const Ptr<T>& a, const Ptr<T>& b) {
  check_shape(a->shape == b->shape, "mul", a->shape, b->shape);
  auto out = make_node<T>(a->shape);
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = a->value[i] * b->value[i];
  out->requires_grad = a->requires_grad || b->requires_grad;
  if (out->requires_grad) {
    out->parents = {a, b};
    Node<T>* o = out.get();
    out->backward_fn = [o, a, b]() {
      if (a->requires_grad)
        for (size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i] * b->value[i];
      if (b->requires_grad)
        for (size_t i = 0; i < o->grad.size(); ++i) b->grad[i] += o->grad[i] * a->value[i];
    };
  }
  return out;
}

template <typename T>
Ptr<T> scale(const Ptr<T>& a, T s) {
  auto out = make_node<T>(a->shape);
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = a->value[i] * s;
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    out->parents = {a};
    Node<T>* o = out.get();
    out->backward_fn = [o, a, s]() {
      for (size_t i = 0; i < o->grad.size(); ++i) a->grad[i] += o->grad[i] * s;
    };
  }
  return out;
}

template <typename T>
Ptr<T> relu(const Ptr<T>& a) {
  auto out = make_node<T>(a->shape);
  for (size_t i = 0; i < out->value.size(); ++i) out->value[i] = a->value[i] > T(0) ? a->value[i] : T(0);
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    out->parents = {a};
    Node<T>* o = out.get();
    out->backward_fn = [o, a]() {
      for (size_t i = 0; i < o->grad.size(); ++i)
        if (a->value[i] > T(0)) a->grad[i] += o->grad[i];
    };
  }
  return out;
}

template <typename T>
Ptr<T> sum(const Ptr<T>& a) {
  auto out = make_node<T>({1});
  T acc = 0;
  for (T v : a->value) acc += v;
  out->value[0] = acc;
  out->requires_grad = a->requires_grad;
  if (out->requires_grad) {
    out->parents = {a};
    Node<T>* o = out.get();
    out->backward_fn = [o, a]() {
      T g = o->grad[0];
      for (size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
    };
  }
  return out;
}

template <typename T>
Ptr<T> mean(const Ptr<T>& a) {
  return scale(sum(a), T(1) / T(a->size()));
}

// ---------------------------------------------------------------------------
// matmul / linear
// ---------------------------------------------------------------------------

// A[m,k] * B[k,n] -> [m,n]
template <typename T>
Ptr<T> matmul(const Ptr<T>& A, const Ptr<T>& B) {
  check_cfg(A->shape.size() == 2 && B->shape.size() == 2 && A->shape[1] == B->shape[0],
            "matmul: incompatible shapes " + shape_str(A->shape) + " x " + shape_str(B->shape));
  const int m = A->shape[0], k = A->shape[1], n = B->shape[1];
  auto out = make_node<T>({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int t = 0; t < k; ++t) acc += A->value[i * k + t] * B->value[t * n + j];
      out->value[i * n + j] = acc;
    }
  out->requires_grad = A->requires_grad || B->requires_grad;
  if (out->requires_grad) {
    out->parents = {A, B};
    Node<T>* o = out.get();
    out->backward_fn = [o, A, B, m, k, n]() {
      if (A->requires_grad)
        for (int i = 0; i < m; ++i)
          for (int t = 0; t < k; ++t) {
            T acc = 0;
            for (int j = 0; j < n; ++j) acc += o->grad[i * n + j] * B->value[t * n + j];
            A->grad[i * k + t] += acc;
          }
      if (B->requires_grad)
        for (int t = 0; t < k; ++t)
          for (int j = 0; j < n; ++j) {
            T acc = 0;
            for (int i = 0; i < m; ++i) acc += A->value[i * k + t] * o->grad[i * n + j];
            B->grad[t * n + j] += acc;
          }
    };
  }
  return out;
}

// A[m,d] * B[n,d]^T -> [m,n]; used for similarity matrices against queues and
// prototypes.
template <typename T>
Ptr<T> matmul_nt(const Ptr<T>& A, const Ptr<T>& B) {
  check_cfg(A->shape.size() == 2 && B->shape.size() == 2 && A->shape[1] == B->shape[1],
            "matmul_nt: incompatible shapes " + shape_str(A->shape) + " x " + shape_str(B->shape));
  const int m = A->shape[0], d = A->shape[1], n = B->shape[0];
  auto out = make_node<T>({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T acc = 0;
      for (int t = 0; t < d; ++t) acc += A->value[i * d + t] * B->value[j * d + t];
      out->value[i * n + j] = acc;
    }
  out->requires_grad = A->requires_grad || B->requires_grad;
  if (out->requires_grad) {
    out->parents = {A, B};
    Node<T>* o = out.get();
    out->backward_fn = [o, A, B, m, d, n]() {
      if (A->requires_grad)
        for (int i = 0; i < m; ++i)
          for (int t = 0; t < d; ++t) {
            T acc = 0;
            for (int j = 0; j < n; ++j) acc += o->grad[i * n + j] * B->value[j * d + t];
            A->grad[i * d + t] += acc;
          }
      if (B->requires_grad)
        for (int j = 0; j < n; ++j)
          for (int t = 0; t < d; ++t) {
            T acc = 0;
            for (int i = 0; i < m; ++i) acc += o->grad[i * n + j] * A->value[i * d + t];
            B->grad[j * d + t] += acc;
          }
    };
  }
  return out;
}

// x[N,D] * W[K,D]^T + b[K] -> [N,K]
template <typename T>
Ptr<T> linear(const Ptr<T>& x, const Ptr<T>& W, const Ptr<T>& b) {
  check_cfg(x->shape.size() == 2 && W->shape.size() == 2 && x->shape[1] == W->shape[1],
            "linear: incompatible shapes " + shape_str(x->shape) + " and weight " + shape_str(W->shape));
  check_cfg(b == nullptr || (b->shape.size() == 1 && b->shape[0] == W->shape[0]),
            "linear: bias shape mismatch");
  const int N = x->shape[0], D = x->shape[1], K = W->shape[0];
  auto out = make_node<T>({N, K});
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k) {
      T acc = b ? b->value[k] : T(0);
      for (int d = 0; d < D; ++d) acc += x->value[n * D + d] * W->value[k * D + d];
      out->value[n * K + k] = acc;
    }
  out->requires_grad = x->requires_grad || W->requires_grad || (b && b->requires_grad);
  if (out->requires_grad) {
    out->parents = {x, W};
    if (b) out->parents.push_back(b);
    Node<T>* o = out.get();
    out->backward_fn = [o, x, W, b, N, D, K]() {
      if (x->requires_grad)
        for (int n = 0; n < N; ++n)
          for (int d = 0; d < D; ++d) {
            T acc = 0;
            for (int k = 0; k < K; ++k) acc += o->grad[n * K + k] * W->value[k * D + d];
            x->grad[n * D + d] += acc;
          }
      if (W->requires_grad)
        for (int k = 0; k < K; ++k)
          for (int d = 0; d < D; ++d) {
            T acc = 0;
            for (int n = 0; n < N; ++n) acc += o->grad[n * K + k] * x->value[n * D + d];
            W->grad[k * D + d] += acc;
          }
      if (b && b->requires_grad)
        for (int k = 0; k < K; ++k) {
          T acc = 0;
          for (int n = 0; n < N; ++n) acc += o->grad[n * K + k];
          b->grad[k] += acc;
        }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

inline int conv_out_extent(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

// x[N,C,H,W] * w[K,C,kh,kw] (+ b[K]) -> [N,K,H',W']
template <typename T>
Ptr<T> conv2d(const Ptr<T>& x, const Ptr<T>& w, const Ptr<T>& b, int stride, int padding) {
  check_cfg(x->shape.size() == 4 && w->shape.size() == 4,
            "conv2d: expected 4-d input/weights, got " + shape_str(x->shape) + " and " +
                shape_str(w->shape));
  check_cfg(x->shape[1] == w->shape[1], "conv2d: channel mismatch, input " + shape_str(x->shape) +
                                            " vs weights " + shape_str(w->shape));
  const int kh = w->shape[2], kw = w->shape[3];
  check_cfg(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel extents must be odd, got " +
                                            std::to_string(kh) + "x" + std::to_string(kw));
  check_cfg(stride >= 1 && padding >= 0, "conv2d: invalid stride/padding");
  const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  check_cfg(H + 2 * padding >= kh && W + 2 * padding >= kw,
            "conv2d: input " + shape_str(x->shape) + " too small for kernel " +
                std::to_string(kh) + "x" + std::to_string(kw) + " with padding " +
                std::to_string(padding));
  const int K = w->shape[0];
  const int Ho = conv_out_extent(H, kh, stride, padding);
  const int Wo = conv_out_extent(W, kw, stride, padding);
  auto out = make_node<T>({N, K, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          T acc = b ? b->value[k] : T(0);
          const int hi0 = i * stride - padding, wi0 = j * stride - padding;
          for (int c = 0; c < C; ++c)
            for (int u = 0; u < kh; ++u) {
              const int hi = hi0 + u;
              if (hi < 0 || hi >= H) continue;
              for (int v = 0; v < kw; ++v) {
                const int wi = wi0 + v;
                if (wi < 0 || wi >= W) continue;
                acc += x->value[((n * C + c) * H + hi) * W + wi] *
                       w->value[((k * C + c) * kh + u) * kw + v];
              }
            }
          out->value[((n * K + k) * Ho + i) * Wo + j] = acc;
        }
  out->requires_grad = x->requires_grad || w->requires_grad || (b && b->requires_grad);
  if (out->requires_grad) {
    out->parents = {x, w};
    if (b) out->parents.push_back(b);
    Node<T>* o = out.get();
    out->backward_fn = [o, x, w, b, stride, padding, N, C, H, W, K, kh, kw, Ho, Wo]() {
      for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k)
          for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
              const T g = o->grad[((n * K + k) * Ho + i) * Wo + j];
              if (g == T(0)) continue;
              const int hi0 = i * stride - padding, wi0 = j * stride - padding;
              for (int c = 0; c < C; ++c)
                for (int u = 0; u < kh; ++u) {
                  const int hi = hi0 + u;
                  if (hi < 0 || hi >= H) continue;
                  for (int v = 0; v < kw; ++v) {
                    const int wi = wi0 + v;
                    if (wi < 0 || wi >= W) continue;
                    const size_t xi = ((size_t)(n * C + c) * H + hi) * W + wi;
                    const size_t wi_ = ((size_t)(k * C + c) * kh + u) * kw + v;
                    if (x->requires_grad) x->grad[xi] += g * w->value[wi_];
                    if (w->requires_grad) w->grad[wi_] += g * x->value[xi];
                  }
                }
              if (b && b->requires_grad) b->grad[k] += g;
            }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

template <typename T>
Ptr<T> maxpool2d(const Ptr<T>& x, int kernel, int stride, int padding) {
  check_cfg(x->shape.size() == 4, "maxpool2d: expected 4-d input, got " + shape_str(x->shape));
  const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  const int Ho = conv_out_extent(H, kernel, stride, padding);
  const int Wo = conv_out_extent(W, kernel, stride, padding);
  auto out = make_node<T>({N, C, Ho, Wo});
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
  return out;
}

// Average over the full spatial extent: [N,C,H,W] -> [N,C]
template <typename T>
Ptr<T> global_avgpool(const Ptr<T>& x) {
  check_cfg(x->shape.size() == 4, "global_avgpool: expected 4-d input, got " + shape_str(x->shape));
  const int N = x->shape[0], C = x->shape[1], HW = x->shape[2] * x->shape[3];
  auto out = make_node<T>({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      T acc = 0;
      const size_t base = (size_t)(n * C + c) * HW;
      for (int i = 0; i < HW; ++i) acc += x->value[base + i];
      out->value[n * C + c] = acc / T(HW);
    }
  out->requires_grad = x->requires_grad;
  if (out->requires_grad) {
    out->parents = {x};
    Node<T>* o = out.get();
    out->backward_fn = [o, x, N, C, HW]() {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T g = o->grad[n * C + c] / T(HW);
          const size_t base = (size_t)(n * C + c) * HW;
          for (int i = 0; i < HW; ++i) x->grad[base + i] += g;
        }
    };
  }
  return out;
}

// Windowed average pooling; windows falling outside the input average over
// the in-bounds cells only.
template <typename T>
Ptr<T> avgpool2d(const Ptr<T>& x, int kernel, int stride) {
  check_cfg(x->shape.size() == 4, "avgpool2d: expected 4-d input, got " + shape_str(x->shape));
  const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  const int Ho = conv_out_extent(H, kernel, stride, 0);
  const int Wo = conv_out_extent(W, kernel, stride, 0);
  auto out = make_node<T>({N, C, Ho, Wo});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j) {
          T acc = 0;
          for (int u = 0; u < kernel; ++u)
            for (int v = 0; v < kernel; ++v)
              acc += x->value[((size_t)(n * C + c) * H + i * stride + u) * W + j * stride + v];
          out->value[((size_t)(n * C + c) * Ho + i) * Wo + j] = acc / T(kernel * kernel);
        }
  out->requires_grad = x->requires_grad;
  if (out->requires_grad) {
    out->parents = {x};
    Node<T>* o = out.get();
    out->backward_fn = [o, x, N, C, H, W, Ho, Wo, kernel, stride]() {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j) {
              const T g =
                  o->grad[((size_t)(n * C + c) * Ho + i) * Wo + j] / T(kernel * kernel);
              for (int u = 0; u < kernel; ++u)
                for (int v = 0; v < kernel; ++v)
                  x->grad[((size_t)(n * C + c) * H + i * stride + u) * W + j * stride + v] += g;
            }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// upsampling
// ---------------------------------------------------------------------------

template <typename T>
Ptr<T> upsample_nearest(const Ptr<T>& x, int factor) {
  check_cfg(x->shape.size() == 4 && factor >= 1, "upsample_nearest: bad input");
  if (factor == 1) return x;
  const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  const int Ho = H * factor, Wo = W * factor;
  auto out = make_node<T>({N, C, Ho, Wo});
  for (int nc = 0; nc < N * C; ++nc)
    for (int i = 0; i < Ho; ++i)
      for (int j = 0; j < Wo; ++j)
        out->value[((size_t)nc * Ho + i) * Wo + j] =
            x->value[((size_t)nc * H + i / factor) * W + j / factor];
  out->requires_grad = x->requires_grad;
  if (out->requires_grad) {
    out->parents = {x};
    Node<T>* o = out.get();
    out->backward_fn = [o, x, N, C, H, W, Ho, Wo, factor]() {
      for (int nc = 0; nc < N * C; ++nc)
        for (int i = 0; i < Ho; ++i)
          for (int j = 0; j < Wo; ++j)
            x->grad[((size_t)nc * H + i / factor) * W + j / factor] +=
                o->grad[((size_t)nc * Ho + i) * Wo + j];
    };
  }
  return out;
}

// Bilinear resize with half-pixel centers (corner alignment disabled).
template <typename T>
Ptr<T> upsample_bilinear(const Ptr<T>& x, int out_h, int out_w) {
  check_cfg(x->shape.size() == 4 && out_h >= 1 && out_w >= 1, "upsample_bilinear: bad input");
  const int N = x->shape[0], C = x->shape[1], H = x->shape[2], W = x->shape[3];
  auto out = make_node<T>({N, C, out_h, out_w});
  // Precompute the sampling taps once per axis.
  struct Tap {
    int lo, hi;
    T w_lo, w_hi;
  };
  auto taps = [](int in, int outn) {
    std::vector<Tap> t(outn);
    const double s = double(in) / double(outn);
    for (int i = 0; i < outn; ++i) {
      double src = (i + 0.5) * s - 0.5;
      src = std::max(0.0, std::min(src, double(in - 1)));
      int lo = (int)std::floor(src);
      int hi = std::min(lo + 1, in - 1);
      T frac = T(src - lo);
      t[i] = {lo, hi, T(1) - frac, frac};
    }
    return t;
  };
  auto th = std::make_shared<std::vector<Tap>>(taps(H, out_h));
  auto tw = std::make_shared<std::vector<Tap>>(taps(W, out_w));
  for (int nc = 0; nc < N * C; ++nc) {
    const size_t ib = (size_t)nc * H * W, ob = (size_t)nc * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      const Tap& a = (*th)[i];
      for (int j = 0; j < out_w; ++j) {
        const Tap& b = (*tw)[j];
        out->value[ob + (size_t)i * out_w + j] =
            a.w_lo * (b.w_lo * x->value[ib + (size_t)a.lo * W + b.lo] +
                      b.w_hi * x->value[ib + (size_t)a.lo * W + b.hi]) +
            a.w_hi * (b.w_lo * x->value[ib + (size_t)a.hi * W + b.lo] +
                      b.w_hi * x->value[ib + (size_t)a.hi * W + b.hi]);
      }
    }
  }
  out->requires_grad = x->requires_grad;
  if (out->requires_grad) {
    out->parents = {x};
    Node<T>* o = out.get();
    out->backward_fn = [o, x, N, C, H, W, out_h, out_w, th, tw]() {
      for (int nc = 0; nc < N * C; ++nc) {
        const size_t ib = (size_t)nc * H * W, ob = (size_t)nc * out_h * out_w;
        for (int i = 0; i < out_h; ++i) {
          const Tap& a = (*th)[i];
          for (int j = 0; j < out_w; ++j) {
            const Tap& b = (*tw)[j];
            const T g = o->grad[ob + (size_t)i * out_w + j];
            x->grad[ib + (size_t)a.lo * W + b.lo] += g * a.w_lo * b.w_lo;
            x->grad[ib + (size_t)a.lo * W + b.hi] += g * a.w_lo * b.w_hi;
            x->grad[ib + (size_t)a.hi * W + b.lo] += g * a.w_hi * b.w_lo;
            x->grad[ib + (size_t)a.hi * W + b.hi] += g * a.w_hi * b.w_hi;
          }
        }
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// Mean squared error over all elements.
template <typename T>
Ptr<T> l2_loss(const Ptr<T>& pred, const Ptr<T>& target) {
  check_shape(pred->shape == target->shape, "l2_loss", pred->shape, target->shape);
  auto out = make_node<T>({1});
  T acc = 0;
  for (size_t i = 0; i < pred->value.size(); ++i) {
    const T d = pred->value[i] - target->value[i];
    acc += d * d;
  }
  out->value[0] = acc / T(pred->size());
  out->requires_grad = pred->requires_grad || target->requires_grad;
  if (out->requires_grad) {
    out->parents = {pred, target};
    Node<T>* o = out.get();
    out->backward_fn = [o, pred, target]() {
      const T s = T(2) * o->grad[0] / T(pred->size());
      for (size_t i = 0; i < pred->value.size(); ++i) {
        const T d = pred->value[i] - target->value[i];
        if (pred->requires_grad) pred->grad[i] += s * d;
        if (target->requires_grad) target->grad[i] -= s * d;
      }
    };
  }
  return out;
}

// Softmax cross-entropy over rows of logits[N,K] against integer labels.
template <typename T>
Ptr<T> softmax_cross_entropy(const Ptr<T>& logits, const std::vector<int>& labels) {
  check_cfg(logits->shape.size() == 2 && (int)labels.size() == logits->shape[0],
            "softmax_cross_entropy: logits " + shape_str(logits->shape) + " vs " +
                std::to_string(labels.size()) + " labels");
  const int N = logits->shape[0], K = logits->shape[1];
  auto probs = std::make_shared<std::vector<T>>(logits->value.size());
  auto out = make_node<T>({1});
  T total = 0;
  for (int n = 0; n < N; ++n) {
    check_cfg(labels[n] >= 0 && labels[n] < K, "softmax_cross_entropy: label out of range");
    T mx = logits->value[n * K];
    for (int k = 1; k < K; ++k) mx = std::max(mx, logits->value[n * K + k]);
    T z = 0;
    for (int k = 0; k < K; ++k) z += std::exp(logits->value[n * K + k] - mx);
    for (int k = 0; k < K; ++k) (*probs)[n * K + k] = std::exp(logits->value[n * K + k] - mx) / z;
    total -= std::log((*probs)[n * K + labels[n]]);
  }
  out->value[0] = total / T(N);
  out->requires_grad = logits->requires_grad;
  if (out->requires_grad) {
    out->parents = {logits};
    Node<T>* o = out.get();
    auto lbl = std::make_shared<std::vector<int>>(labels);
    out->backward_fn = [o, logits, probs, lbl, N, K]() {
      const T g = o->grad[0] / T(N);
      for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k)
          logits->grad[n * K + k] +=
              g * ((*probs)[n * K + k] - (k == (*lbl)[n] ? T(1) : T(0)));
    };
  }
  return out;
}

// Cross-entropy of row-softmax(logits) against fixed soft targets (no gradient
// flows into the targets): mean_n ( -sum_k t[n,k] * log softmax(logits)[n,k] ).
template <typename T>
Ptr<T> soft_cross_entropy(const Ptr<T>& logits, const std::vector<T>& targets) {
  check_cfg(logits->shape.size() == 2 && targets.size() == logits->value.size(),
            "soft_cross_entropy: target size mismatch");
  const int N = logits->shape[0], K = logits->shape[1];
  auto probs = std::make_shared<std::vector<T>>(logits->value.size());
  auto tgt = std::make_shared<std::vector<T>>(targets);
  auto out = make_node<T>({1});
  T total = 0;
  for (int n = 0; n < N; ++n) {
    T mx = logits->value[n * K];
    for (int k = 1; k < K; ++k) mx = std::max(mx, logits->value[n * K + k]);
    T z = 0;
    for (int k = 0; k < K; ++k) z += std::exp(logits->value[n * K + k] - mx);
    const T logz = std::log(z) + mx;
    T tsum = 0;
    for (int k = 0; k < K; ++k) {
      (*probs)[n * K + k] = std::exp(logits->value[n * K + k] - mx) / z;
      total -= (*tgt)[n * K + k] * (logits->value[n * K + k] - logz);
      tsum += (*tgt)[n * K + k];
    }
    (void)tsum;
  }
  out->value[0] = total / T(N);
  out->requires_grad = logits->requires_grad;
  if (out->requires_grad) {
    out->parents = {logits};
    Node<T>* o = out.get();
    out->backward_fn = [o, logits, probs, tgt, N, K]() {
      const T g = o->grad[0] / T(N);
      for (int n = 0; n < N; ++n) {
        T trow = 0;
        for (int k = 0; k < K; ++k) trow += (*tgt)[n * K + k];
        for (int k = 0; k < K; ++k)
          logits->grad[n * K + k] += g * (trow * (*probs)[n * K + k] - (*tgt)[n * K + k]);
      }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// row-vector helpers
// ---------------------------------------------------------------------------

// L2-normalize each row of x[N,D].
template <typename T>
Ptr<T> l2_normalize_rows(const Ptr<T>& x, T eps = T(1e-12)) {
  check_cfg(x->shape.size() == 2, "l2_normalize_rows: expected 2-d input");
  const int N = x->shape[0], D = x->shape[1];
  auto norms = std::make_shared<std::vector<T>>(N);
  auto out = make_node<T>(x->shape);
  for (int n = 0; n < N; ++n) {
    T s = 0;
    for (int d = 0; d < D; ++d) s += x->value[n * D + d] * x->value[n * D + d];
    const T nr = std::sqrt(s);
    if (nr < eps) throw NumericError("l2_normalize_rows: zero-norm row " + std::to_string(n));
    (*norms)[n] = nr;
    for (int d = 0; d < D; ++d) out->value[n * D + d] = x->value[n * D + d] / nr;
  }
  out->requires_grad = x->requires_grad;
  if (out->requires_grad) {
    out->parents = {x};
    Node<T>* o = out.get();
    out->backward_fn = [o, x, norms, N, D]() {
      for (int n = 0; n < N; ++n) {
        const T nr = (*norms)[n];
        T dot = 0;
        for (int d = 0; d < D; ++d) dot += o->grad[n * D + d] * o->value[n * D + d];
        for (int d = 0; d < D; ++d)
          x->grad[n * D + d] += (o->grad[n * D + d] - o->value[n * D + d] * dot) / nr;
      }
    };
  }
  return out;
}

// Per-row dot product of a[N,D] and b[N,D] -> [N].
template <typename T>
Ptr<T> rowdot(const Ptr<T>& a, const Ptr<T>& b) {
  check_shape(a->shape == b->shape, "rowdot", a->shape, b->shape);
  check_cfg(a->shape.size() == 2, "rowdot: expected 2-d inputs");
  const int N = a->shape[0], D = a->shape[1];
  auto out = make_node<T>({N});
  for (int n = 0; n < N; ++n) {
    T acc = 0;
    for (int d = 0; d < D; ++d) acc += a->value[n * D + d] * b->value[n * D + d];
    out->value[n] = acc;
  }
  out->requires_grad = a->requires_grad || b->requires_grad;
  if (out->requires_grad) {
    out->parents = {a, b};
    Node<T>* o = out.get();
    out->backward_fn = [o, a, b, N, D]() {
      for (int n = 0; n < N; ++n) {
        const T g = o->grad[n];
        for (int d = 0; d < D; ++d) {
          if (a->requires_grad) a->grad[n * D + d] += g * b->value[n * D + d];
          if (b->requires_grad) b->grad[n * D + d] += g * a->value[n * D + d];
        }
      }
    };
  }
  return out;
}

// Concatenate a column vector col[N] with a matrix rest[N,M] -> [N,1+M].
template <typename T>
Ptr<T> concat_col(const Ptr<T>& col, const Ptr<T>& rest) {
  check_cfg(col->shape.size() == 1 && rest->shape.size() == 2 && col->shape[0] == rest->shape[0],
            "concat_col: incompatible shapes");
  const int N = col->shape[0], M = rest->shape[1];
  auto out = make_node<T>({N, 1 + M});
  for (int n = 0; n < N; ++n) {
    out->value[n * (1 + M)] = col->value[n];
    for (int m = 0; m < M; ++m) out->value[n * (1 + M) + 1 + m] = rest->value[n * M + m];
  }
  out->requires_grad = col->requires_grad || rest->requires_grad;
  if (out->requires_grad) {
    out->parents = {col, rest};
    Node<T>* o = out.get();
    out->backward_fn = [o, col, rest, N, M]() {
      for (int n = 0; n < N; ++n) {
        if (col->requires_grad) col->grad[n] += o->grad[n * (1 + M)];
        if (rest->requires_grad)
          for (int m = 0; m < M; ++m) rest->grad[n * M + m] += o->grad[n * (1 + M) + 1 + m];
      }
    };
  }
  return out;
}

// Reshape without copying semantics (copies buffers; sizes must match).
template <typename T>
Ptr<T> reshape(const Ptr<T>& x, Shape shape) {
  check_cfg(numel(shape) == x->size(),
            "reshape: cannot view " + shape_str(x->shape) + " as " + shape_str(shape));
  auto out = make_node<T>(std::move(shape), x->value);
  out->requires_grad = x->requires_grad;
  if (out->requires_grad) {
    out->parents = {x};
    Node<T>* o = out.get();
    out->backward_fn = [o, x]() {
      for (size_t i = 0; i < o->grad.size(); ++i) x->grad[i] += o->grad[i];
    };
  }
  return out;
}

}  // namespace sslct
