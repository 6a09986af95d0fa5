#pragma once

// The three contrastive baselines: momentum-contrast with a key queue and
// InfoNCE, prototype clustering with Sinkhorn-balanced swapped prediction,
// and online/target bootstrap with a predictor head.

#include <deque>
#include <iostream>

#include "sslct/encoder.hpp"

namespace sslct {

// ---------------------------------------------------------------------------
// key queue ("dictionary")
// ---------------------------------------------------------------------------

// Fixed-capacity FIFO ring of L2-normalized embedding vectors.
template <typename T>
struct KeyQueue {
  int capacity = 65536;
  int dim = 0;
  std::vector<std::vector<T>> keys;  // oldest first

  KeyQueue() = default;
  KeyQueue(int capacity_, int dim_) : capacity(capacity_), dim(dim_) {
    check_cfg(capacity >= 1 && dim >= 1, "key queue: capacity and dim must be >= 1");
  }
  int size() const { return (int)keys.size(); }

  // Enqueue a batch of already-normalized keys; evicts the oldest beyond
  // capacity.
  void push(const std::vector<std::vector<T>>& batch) {
    for (const auto& k : batch) {
      check_cfg((int)k.size() == dim, "key queue: key dim mismatch");
      keys.push_back(k);
    }
    while ((int)keys.size() > capacity) keys.erase(keys.begin());
  }

  // Constant [M,dim] node of the queued keys.
  Ptr<T> as_node() const {
    auto n = make_node<T>({(int)keys.size(), dim});
    for (size_t i = 0; i < keys.size(); ++i)
      std::copy(keys[i].begin(), keys[i].end(), n->value.begin() + (std::int64_t)i * dim);
    return n;
  }
};

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

// InfoNCE over a batch of normalized queries/positive keys against the queue:
// loss_b = -log( exp(q_b.k_b/tau) / (exp(q_b.k_b/tau) + sum_neg exp(q_b.k-/tau)) ).
// An empty queue degenerates to zero loss (no negatives); a warning is
// emitted.
template <typename T>
Ptr<T> info_nce(const Ptr<T>& queries, const Ptr<T>& positive_keys, const KeyQueue<T>& queue,
                T tau) {
  check_cfg(tau > T(0), "info_nce: tau must be > 0");
  check_shape(queries->shape == positive_keys->shape, "info_nce", queries->shape,
              positive_keys->shape);
  const int B = queries->shape[0];
  auto pos = scale(rowdot(queries, positive_keys), T(1) / tau);
  if (queue.size() == 0) {
    std::cerr << "[sslct] warning: info_nce with empty key queue, no negatives\n";
    auto logits = reshape(pos, {B, 1});
    return softmax_cross_entropy(logits, std::vector<int>(B, 0));
  }
  auto negs = scale(matmul_nt(queries, queue.as_node()), T(1) / tau);
  auto logits = concat_col(pos, negs);
  return softmax_cross_entropy(logits, std::vector<int>(B, 0));
}

// Single-vector convenience form.
template <typename T>
T info_nce_value(const std::vector<T>& query, const std::vector<T>& positive_key,
                 const KeyQueue<T>& queue, T tau) {
  auto q = make_node<T>({1, (int)query.size()}, std::vector<T>(query));
  auto k = make_node<T>({1, (int)positive_key.size()}, std::vector<T>(positive_key));
  return info_nce(q, k, queue, tau)->value[0];
}

// logits[b,k] = (1/tau) * Q_b . C_k
template <typename T>
Ptr<T> cluster_scores(const Ptr<T>& embeddings, const Ptr<T>& prototypes, T tau) {
  check_cfg(tau > T(0), "cluster_scores: tau must be > 0");
  return scale(matmul_nt(embeddings, prototypes), T(1) / tau);
}

// Sinkhorn balancing of exp(scores/eps) toward marginals rows = 1/B,
// cols = 1/K (alternating column then row renormalization), followed by a
// final row renormalization so the returned assignment rows sum to 1.
template <typename T>
std::vector<T> sinkhorn_codes(const std::vector<T>& scores, int B, int K, T epsilon,
                              int iterations) {
  check_cfg(iterations >= 1, "sinkhorn: iterations must be >= 1");
  check_cfg(epsilon > T(0), "sinkhorn: epsilon must be > 0");
  check_cfg((int)scores.size() == B * K, "sinkhorn: score size mismatch");
  // Stabilize exp by subtracting the global max.
  T mx = scores[0];
  for (T s : scores) {
    check_cfg(!std::isnan((double)s), "sinkhorn: NaN score");
    mx = std::max(mx, s);
  }
  if (!std::isfinite((double)mx))
    throw ValidationError("sinkhorn: degenerate all -inf scores");
  std::vector<T> M(scores.size());
  for (size_t i = 0; i < M.size(); ++i) M[i] = std::exp((scores[i] - mx) / epsilon);
  for (int it = 0; it < iterations; ++it) {
    // columns -> 1/K
    for (int k = 0; k < K; ++k) {
      T s = 0;
      for (int b = 0; b < B; ++b) s += M[(size_t)b * K + k];
      if (s <= T(0)) throw ValidationError("sinkhorn: degenerate zero column");
      const T f = T(1) / (s * T(K));
      for (int b = 0; b < B; ++b) M[(size_t)b * K + k] *= f;
    }
    // rows -> 1/B
    for (int b = 0; b < B; ++b) {
      T s = 0;
      for (int k = 0; k < K; ++k) s += M[(size_t)b * K + k];
      const T f = T(1) / (s * T(B));
      for (int k = 0; k < K; ++k) M[(size_t)b * K + k] *= f;
    }
  }
  // Final row renormalization: assignment rows sum to 1.
  for (int b = 0; b < B; ++b) {
    T s = 0;
    for (int k = 0; k < K; ++k) s += M[(size_t)b * K + k];
    for (int k = 0; k < K; ++k) M[(size_t)b * K + k] /= s;
  }
  return M;
}

// Cross-entropy with swapped predictions between the two large crops; codes
// are detached.
template <typename T>
Ptr<T> swav_swapped_loss(const Ptr<T>& logits_a, const Ptr<T>& logits_b,
                         const std::vector<T>& codes_a, const std::vector<T>& codes_b) {
  return add(soft_cross_entropy(logits_a, codes_b), soft_cross_entropy(logits_b, codes_a));
}

// Squared Euclidean distance between L2-normalized rows, averaged over the
// batch; equals 2 - 2*cosine for unit vectors.
template <typename T>
Ptr<T> byol_loss(const Ptr<T>& predicted, const Ptr<T>& target) {
  check_shape(predicted->shape == target->shape, "byol_loss", predicted->shape, target->shape);
  auto p = l2_normalize_rows(predicted);
  auto t = l2_normalize_rows(target);
  auto d = sub(p, t);
  return scale(sum(mul(d, d)), T(1) / T(predicted->shape[0]));
}

// target <- m*target + (1-m)*online, elementwise over aligned ParamSets.
template <typename T>
void ema_update(const ParamSet<T>& online, ParamSet<T>& target, T m) {
  check_cfg(m >= T(0) && m <= T(1), "ema_update: momentum must be in [0,1]");
  check_cfg(online.params.size() == target.params.size(), "ema_update: parameter count mismatch");
  for (size_t i = 0; i < online.params.size(); ++i) {
    const auto& [on, op] = online.params[i];
    auto& [tn, tp] = target.params[i];
    check_cfg(on == tn, "ema_update: misaligned parameter names " + on + " vs " + tn);
    check_shape(op->shape == tp->shape, "ema_update", op->shape, tp->shape);
    for (size_t j = 0; j < op->value.size(); ++j)
      tp->value[j] = m * tp->value[j] + (T(1) - m) * op->value[j];
  }
}

// Copy buffer lists (running stats) elementwise, aligned by construction.
template <typename T>
void ema_update_buffers(const std::vector<std::pair<std::string, std::vector<T>*>>& online,
                        std::vector<std::pair<std::string, std::vector<T>*>>& target, T m) {
  check_cfg(online.size() == target.size(), "ema_update: buffer count mismatch");
  for (size_t i = 0; i < online.size(); ++i) {
    auto& src = *online[i].second;
    auto& dst = *target[i].second;
    for (size_t j = 0; j < src.size(); ++j) dst[j] = m * dst[j] + (T(1) - m) * src[j];
  }
}

// ---------------------------------------------------------------------------
// method wrappers
// ---------------------------------------------------------------------------

struct ContrastiveHeadConfig {
  int proj_hidden = 512;
  int proj_out = 128;
  // BYOL-specific widths.
  int byol_hidden = 4096;
  int byol_out = 256;
};

// Online/query encoder + momentum/target twin with projection heads.
template <typename T>
struct TwinEncoders {
  Encoder<T> online, target;
  MlpHead<T> online_head, target_head;
  ParamSet<T> trainable;     // online side
  ParamSet<T> target_params;  // aligned names, no gradients
  double momentum = 0.999;

  TwinEncoders() = default;
  TwinEncoders(const EncoderConfig& ec, int hidden, int out_dim, std::uint64_t seed)
      : online(ec, derive_seed(seed, "online_enc")),
        target(ec, derive_seed(seed, "online_enc")) {  // target starts as a copy
    auto rng = make_rng(seed, "online_head");
    online_head = MlpHead<T>(ec.widths[3], hidden, out_dim, rng);
    auto rng2 = make_rng(seed, "online_head");
    target_head = MlpHead<T>(ec.widths[3], hidden, out_dim, rng2);
    trainable.extend(online.params, "encoder.");
    online_head.register_params(trainable, "head");
    target_params.extend(target.params, "encoder.");
    target_head.register_params(target_params, "head");
    for (auto& [n, p] : target_params.params) p->requires_grad = false;
  }

  std::int64_t parameter_count() const { return trainable.count() + target_params.count(); }

  Ptr<T> embed_online(const Ptr<T>& images, bool training) {
    auto pyr = online.encode(images, training);
    return online_head.forward(global_avgpool(pyr[3]));
  }
  Ptr<T> embed_target(const Ptr<T>& images, bool training) {
    auto pyr = target.encode(images, training);
    return target_head.forward(global_avgpool(pyr[3]));
  }
  void momentum_update() {
    ema_update(trainable, target_params, (T)momentum);
    std::vector<std::pair<std::string, std::vector<T>*>> ob, tb;
    online.collect_buffers(ob);
    target.collect_buffers(tb);
    ema_update_buffers(ob, tb, (T)momentum);
  }
};

// ---- MoCo v2 --------------------------------------------------------------

struct MocoConfig {
  int queue_capacity = 65536;
  double tau = 0.2;
  double ema_momentum = 0.999;
  ContrastiveHeadConfig heads;
};

template <typename T>
struct MocoModel {
  MocoConfig cfg;
  TwinEncoders<T> twins;
  KeyQueue<T> queue;

  MocoModel() = default;
  MocoModel(const EncoderConfig& ec, const MocoConfig& mc, std::uint64_t seed)
      : cfg(mc),
        twins(ec, mc.heads.proj_hidden, mc.heads.proj_out, seed),
        queue(mc.queue_capacity, mc.heads.proj_out) {
    twins.momentum = mc.ema_momentum;
  }

  std::int64_t parameter_count() const { return twins.parameter_count(); }

  // Query views through the online encoder, key views through the momentum
  // encoder (no gradient); InfoNCE against the queue; gradient step on the
  // online side; momentum update; keys enqueued.
  T step(const Ptr<T>& views_a, const Ptr<T>& views_b, const OptimizerConfig& opt,
         OptimizerState<T>& state, std::int64_t step_index) {
    check_cfg(queue.capacity >= views_a->shape[0], "moco: queue capacity below batch size");
    twins.trainable.zero_grad();
    auto q = l2_normalize_rows(twins.embed_online(views_a, true));
    auto k = l2_normalize_rows(twins.embed_target(views_b, true));
    auto loss = info_nce(q, k, queue, (T)cfg.tau);
    const T out = loss->value[0];
    backward(loss);
    optimizer_step(twins.trainable, state, opt, step_index);
    twins.momentum_update();
    const int B = k->shape[0], D = k->shape[1];
    std::vector<std::vector<T>> batch_keys(B, std::vector<T>(D));
    for (int b = 0; b < B; ++b)
      for (int d = 0; d < D; ++d) batch_keys[b][d] = k->value[(size_t)b * D + d];
    queue.push(batch_keys);
    return out;
  }
};

// ---- SwAV -----------------------------------------------------------------

struct SwavConfig {
  int num_prototypes = 500;
  std::int64_t freeze_prototypes_iters = 313;
  double tau = 0.1;
  double epsilon = 0.05;
  int sinkhorn_iterations = 3;
  ContrastiveHeadConfig heads;
};

template <typename T>
struct SwavModel {
  SwavConfig cfg;
  Encoder<T> encoder;
  MlpHead<T> head;
  Ptr<T> prototypes;  // [K,D], rows unit-normalized
  ParamSet<T> trainable;

  SwavModel() = default;
  SwavModel(const EncoderConfig& ec, const SwavConfig& sc, std::uint64_t seed)
      : cfg(sc), encoder(ec, derive_seed(seed, "swav_enc")) {
    auto rng = make_rng(seed, "swav_head");
    head = MlpHead<T>(ec.widths[3], sc.heads.proj_hidden, sc.heads.proj_out, rng);
    prototypes = make_node<T>({sc.num_prototypes, sc.heads.proj_out});
    std::normal_distribution<double> dist(0.0, 1.0);
    auto prng = make_rng(seed, "swav_proto");
    for (auto& v : prototypes->value) v = (T)dist(prng);
    normalize_prototypes();
    trainable.extend(encoder.params, "encoder.");
    head.register_params(trainable, "head");
    trainable.add("prototypes", prototypes);
  }

  std::int64_t parameter_count() const { return trainable.count(); }

  void normalize_prototypes() {
    const int K = prototypes->shape[0], D = prototypes->shape[1];
    for (int k = 0; k < K; ++k) {
      T s = 0;
      for (int d = 0; d < D; ++d) {
        const T v = prototypes->value[(size_t)k * D + d];
        s += v * v;
      }
      const T nr = std::sqrt(s);
      if (nr > T(0))
        for (int d = 0; d < D; ++d) prototypes->value[(size_t)k * D + d] /= nr;
    }
  }

  Ptr<T> embed(const Ptr<T>& images, bool training) {
    auto pyr = encoder.encode(images, training);
    return l2_normalize_rows(head.forward(global_avgpool(pyr[3])));
  }

  // Codes for a set of normalized embeddings (detached from the graph).
  std::vector<T> codes_for(const Ptr<T>& z) {
    auto raw = matmul_nt(z, prototypes);  // similarity without tau
    return sinkhorn_codes(raw->value, z->shape[0], prototypes->shape[0], (T)cfg.epsilon,
                          cfg.sinkhorn_iterations);
  }

  // views: the two large crops first, then any number of small crops. Small
  // crops predict the codes of both large crops.
  T step(const std::vector<Ptr<T>>& views, const OptimizerConfig& opt, OptimizerState<T>& state,
         std::int64_t step_index) {
    check_cfg(views.size() >= 2, "swav: need at least the two large crops");
    trainable.zero_grad();
    auto za = embed(views[0], true);
    auto zb = embed(views[1], true);
    auto logits_a = cluster_scores(za, prototypes, (T)cfg.tau);
    auto logits_b = cluster_scores(zb, prototypes, (T)cfg.tau);
    auto codes_a = codes_for(za);
    auto codes_b = codes_for(zb);
    auto loss = swav_swapped_loss(logits_a, logits_b, codes_a, codes_b);
    T normalizer = 2;
    for (size_t v = 2; v < views.size(); ++v) {
      auto zs = embed(views[v], true);
      auto logits_s = cluster_scores(zs, prototypes, (T)cfg.tau);
      loss = add(loss, add(soft_cross_entropy(logits_s, codes_a),
                           soft_cross_entropy(logits_s, codes_b)));
      normalizer += 2;
    }
    loss = scale(loss, T(2) / normalizer);
    const T out = loss->value[0];
    backward(loss);
    // During the freeze window the prototypes are excluded from the update
    // entirely (zeroing the gradient alone would still let weight decay and
    // stale momentum move them).
    const bool frozen = step_index <= cfg.freeze_prototypes_iters;
    if (frozen) {
      ParamSet<T> without_protos;
      for (const auto& [n, p] : trainable.params)
        if (n != "prototypes") without_protos.params.push_back({n, p});
      optimizer_step(without_protos, state, opt, step_index);
    } else {
      optimizer_step(trainable, state, opt, step_index);
    }
    // Renormalizing untouched rows would still perturb their last bits, so
    // the frozen window skips it entirely.
    if (!frozen) normalize_prototypes();
    return out;
  }
};

// ---- BYOL -----------------------------------------------------------------

struct ByolConfig {
  double ema_momentum = 0.99;
  ContrastiveHeadConfig heads;
};

template <typename T>
struct ByolModel {
  ByolConfig cfg;
  TwinEncoders<T> twins;
  MlpHead<T> predictor;
  // Everything the optimizer touches; the momentum update only covers the
  // twin portion, so the predictor lives here rather than in the twins.
  ParamSet<T> trainable;

  ByolModel() = default;
  ByolModel(const EncoderConfig& ec, const ByolConfig& bc, std::uint64_t seed)
      : cfg(bc), twins(ec, bc.heads.byol_hidden, bc.heads.byol_out, seed) {
    twins.momentum = bc.ema_momentum;
    auto rng = make_rng(seed, "byol_predictor");
    predictor = MlpHead<T>(bc.heads.byol_out, bc.heads.byol_hidden, bc.heads.byol_out, rng);
    trainable.extend(twins.trainable);
    predictor.register_params(trainable, "predictor");
  }

  std::int64_t parameter_count() const { return twins.parameter_count() + trainable.count() -
                                                twins.trainable.count(); }

  // Symmetrized: both view orderings contribute.
  T step(const Ptr<T>& views_a, const Ptr<T>& views_b, const OptimizerConfig& opt,
         OptimizerState<T>& state, std::int64_t step_index) {
    trainable.zero_grad();
    auto pa = predictor.forward(twins.embed_online(views_a, true));
    auto tb = twins.embed_target(views_b, true);
    auto pb = predictor.forward(twins.embed_online(views_b, true));
    auto ta = twins.embed_target(views_a, true);
    auto loss = scale(add(byol_loss(pa, tb), byol_loss(pb, ta)), T(0.5));
    const T out = loss->value[0];
    backward(loss);
    optimizer_step(trainable, state, opt, step_index);
    twins.momentum_update();
    return out;
  }
};

}  // namespace sslct
