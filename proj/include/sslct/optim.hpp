#pragma once

// Named parameter collections and the optimizer inventory: SGD with momentum,
// Adam, and the layerwise trust-ratio variants LARS (over SGD-momentum) and
// LAMB (over Adam), plus the cosine-annealed learning-rate schedule.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "sslct/tensor.hpp"

namespace sslct {

// Ordered named parameter arrays. Optimizer state lives in the optimizer,
// keyed by parameter name.
template <typename T>
struct ParamSet {
  std::vector<std::pair<std::string, Ptr<T>>> params;

  void add(const std::string& name, const Ptr<T>& p) {
    for (const auto& [n, _] : params)
      check_cfg(n != name, "ParamSet: duplicate parameter name " + name);
    p->name = name;
    p->requires_grad = true;
    params.push_back({name, p});
  }
  void extend(const ParamSet<T>& other, const std::string& prefix = "") {
    for (const auto& [n, p] : other.params) add(prefix + n, p);
  }
  Ptr<T> find(const std::string& name) const {
    for (const auto& [n, p] : params)
      if (n == name) return p;
    return nullptr;
  }
  std::int64_t count() const {
    std::int64_t c = 0;
    for (const auto& [n, p] : params) c += p->size();
    return c;
  }
  void zero_grad() {
    for (auto& [n, p] : params) p->zero_grad();
  }
};

enum class OptimizerKind { SgdMomentum, Adam, Lars, Lamb };

inline OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd-momentum" || s == "sgd") return OptimizerKind::SgdMomentum;
  if (s == "adam") return OptimizerKind::Adam;
  if (s == "lars") return OptimizerKind::Lars;
  if (s == "lamb") return OptimizerKind::Lamb;
  throw ConfigError("unknown optimizer kind: " + s);
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::SgdMomentum;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Cosine annealing with linear warmup; active when total_steps > 0.
  bool cosine = false;
  double peak_lr = 0.0;
  std::int64_t total_steps = 0;
  double warmup_fraction = 0.05;

  void validate() const {
    check_cfg(lr > 0.0, "optimizer: learning rate must be > 0");
    check_cfg(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0,
              "optimizer: betas must be in (0,1)");
    check_cfg(momentum >= 0.0 && momentum <= 1.0, "optimizer: momentum must be in [0,1]");
  }

  // Effective learning rate at 1-based step_index.
  double lr_at(std::int64_t step_index) const {
    if (!cosine || total_steps <= 0) return lr;
    const double peak = peak_lr > 0.0 ? peak_lr : lr;
    const double warm = warmup_fraction * (double)total_steps;
    const double t = (double)step_index;
    if (warm >= 1.0 && t <= warm) return peak * t / warm;
    const double progress = std::min(1.0, (t - warm) / std::max(1.0, (double)total_steps - warm));
    return peak * 0.5 * (1.0 + std::cos(M_PI * progress));
  }
};

template <typename T>
struct OptimizerState {
  std::map<std::string, std::vector<T>> m;  // momentum / first moment
  std::map<std::string, std::vector<T>> v;  // second moment (adam/lamb)
};

namespace detail {
template <typename T>
inline T l2_norm(const std::vector<T>& v) {
  T s = 0;
  for (T x : v) s += x * x;
  return std::sqrt(s);
}
}  // namespace detail

// One in-place update over the whole ParamSet. `step_index` starts at 1 and
// drives bias correction and the schedule. Throws on non-finite gradients,
// naming the parameter.
template <typename T>
void optimizer_step(ParamSet<T>& params, OptimizerState<T>& state, const OptimizerConfig& cfg,
                    std::int64_t step_index) {
  cfg.validate();
  check_cfg(step_index >= 1, "optimizer_step: step_index starts at 1");
  const T lr = (T)cfg.lr_at(step_index);
  const T wd = (T)cfg.weight_decay;
  for (auto& [name, p] : params.params) {
    p->ensure_grad();
    for (T g : p->grad)
      if (!std::isfinite(g))
        throw NumericError("optimizer_step: non-finite gradient in parameter " + name);
    const size_t n = p->value.size();
    switch (cfg.kind) {
      case OptimizerKind::SgdMomentum: {
        auto& buf = state.m[name];
        if (buf.size() != n) buf.assign(n, T(0));
        for (size_t i = 0; i < n; ++i) {
          const T g = p->grad[i] + wd * p->value[i];
          buf[i] = (T)cfg.momentum * buf[i] + g;
          p->value[i] -= lr * buf[i];
        }
        break;
      }
      case OptimizerKind::Adam: {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != n) m.assign(n, T(0));
        if (v.size() != n) v.assign(n, T(0));
        const T b1 = (T)cfg.beta1, b2 = (T)cfg.beta2;
        const T bc1 = T(1) - std::pow(b1, (T)step_index);
        const T bc2 = T(1) - std::pow(b2, (T)step_index);
        for (size_t i = 0; i < n; ++i) {
          const T g = p->grad[i] + wd * p->value[i];
          m[i] = b1 * m[i] + (T(1) - b1) * g;
          v[i] = b2 * v[i] + (T(1) - b2) * g * g;
          p->value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + (T)cfg.eps);
        }
        break;
      }
      case OptimizerKind::Lars: {
        auto& buf = state.m[name];
        if (buf.size() != n) buf.assign(n, T(0));
        std::vector<T> upd(n);
        for (size_t i = 0; i < n; ++i) upd[i] = p->grad[i] + wd * p->value[i];
        const T wn = detail::l2_norm(p->value);
        const T gn = detail::l2_norm(upd);
        const T ratio = (wn > T(0) && gn > T(0)) ? wn / gn : T(1);
        for (size_t i = 0; i < n; ++i) {
          buf[i] = (T)cfg.momentum * buf[i] + ratio * upd[i];
          p->value[i] -= lr * buf[i];
        }
        break;
      }
      case OptimizerKind::Lamb: {
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != n) m.assign(n, T(0));
        if (v.size() != n) v.assign(n, T(0));
        const T b1 = (T)cfg.beta1, b2 = (T)cfg.beta2;
        const T bc1 = T(1) - std::pow(b1, (T)step_index);
        const T bc2 = T(1) - std::pow(b2, (T)step_index);
        std::vector<T> upd(n);
        for (size_t i = 0; i < n; ++i) {
          const T g = p->grad[i];
          m[i] = b1 * m[i] + (T(1) - b1) * g;
          v[i] = b2 * v[i] + (T(1) - b2) * g * g;
          upd[i] = (m[i] / bc1) / (std::sqrt(v[i] / bc2) + (T)cfg.eps) + wd * p->value[i];
        }
        const T wn = detail::l2_norm(p->value);
        const T un = detail::l2_norm(upd);
        const T ratio = (wn > T(0) && un > T(0)) ? wn / un : T(1);
        for (size_t i = 0; i < n; ++i) p->value[i] -= lr * ratio * upd[i];
        break;
      }
    }
  }
}

}  // namespace sslct
