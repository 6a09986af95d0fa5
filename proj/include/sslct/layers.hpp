#pragma once

// Parameterized layers. Weights use Kaiming fan-in initialization; batchnorm
// starts at gamma=1 / beta=0 with running stats (0, 1).

#include <memory>
#include <random>

#include "sslct/optim.hpp"
#include "sslct/rng.hpp"
#include "sslct/sparse.hpp"

namespace sslct {

template <typename T>
Ptr<T> kaiming_init(Shape shape, std::int64_t fan_in, std::mt19937_64& rng) {
  auto p = make_node<T>(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (double)fan_in));
  for (auto& v : p->value) v = (T)dist(rng);
  return p;
}

template <typename T>
struct Conv2dLayer {
  Ptr<T> w, b;
  int stride = 1, padding = 0;

  Conv2dLayer() = default;
  Conv2dLayer(int in_ch, int out_ch, int kernel, int stride_, int padding_, bool bias,
              std::mt19937_64& rng)
      : stride(stride_), padding(padding_) {
    w = kaiming_init<T>({out_ch, in_ch, kernel, kernel}, (std::int64_t)in_ch * kernel * kernel,
                        rng);
    if (bias) b = make_node<T>({out_ch});
  }
  void register_params(ParamSet<T>& ps, const std::string& prefix) {
    ps.add(prefix + ".w", w);
    if (b) ps.add(prefix + ".b", b);
  }
  Ptr<T> forward(const Ptr<T>& x) const { return conv2d(x, w, b, stride, padding); }
  SparseFeatureMap<T> forward(const SparseFeatureMap<T>& x) const {
    return submanifold_conv2d(x, w, b, stride, padding);
  }
};

template <typename T>
struct BatchNormLayer {
  Ptr<T> gamma, beta;
  std::vector<T> run_mean, run_var;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNormLayer() = default;
  explicit BatchNormLayer(int channels) {
    gamma = make_node<T>({channels});
    beta = make_node<T>({channels});
    for (auto& v : gamma->value) v = T(1);
    run_mean.assign(channels, T(0));
    run_var.assign(channels, T(1));
  }
  void register_params(ParamSet<T>& ps, const std::string& prefix) {
    ps.add(prefix + ".gamma", gamma);
    ps.add(prefix + ".beta", beta);
  }
  Ptr<T> forward(const Ptr<T>& x, bool training) {
    return batchnorm_masked<T>(x, gamma, beta, nullptr, training, run_mean, run_var, momentum,
                               eps);
  }
  SparseFeatureMap<T> forward(const SparseFeatureMap<T>& x, bool training) {
    return sparse_batchnorm<T>(x, gamma, beta, training, run_mean, run_var, momentum, eps);
  }
};

template <typename T>
struct LinearLayer {
  Ptr<T> w, b;

  LinearLayer() = default;
  LinearLayer(int in_dim, int out_dim, std::mt19937_64& rng) {
    w = kaiming_init<T>({out_dim, in_dim}, in_dim, rng);
    b = make_node<T>({out_dim});
  }
  void register_params(ParamSet<T>& ps, const std::string& prefix) {
    ps.add(prefix + ".w", w);
    ps.add(prefix + ".b", b);
  }
  Ptr<T> forward(const Ptr<T>& x) const { return linear(x, w, b); }
};

// Two-layer MLP head: in -> hidden (relu) -> out.
template <typename T>
struct MlpHead {
  LinearLayer<T> fc1, fc2;

  MlpHead() = default;
  MlpHead(int in_dim, int hidden, int out_dim, std::mt19937_64& rng)
      : fc1(in_dim, hidden, rng), fc2(hidden, out_dim, rng) {}
  void register_params(ParamSet<T>& ps, const std::string& prefix) {
    fc1.register_params(ps, prefix + ".fc1");
    fc2.register_params(ps, prefix + ".fc2");
  }
  Ptr<T> forward(const Ptr<T>& x) const { return fc2.forward(relu(fc1.forward(x))); }
};

}  // namespace sslct
