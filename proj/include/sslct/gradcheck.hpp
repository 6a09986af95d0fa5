#pragma once

// Central-difference gradient verification. Intended for 64-bit mode; 32-bit
// differences are too noisy for the tolerances used here.

#include <cmath>
#include <functional>
#include <vector>

#include "sslct/optim.hpp"

namespace sslct {

// `fn` rebuilds the scalar computation from the current parameter values.
// `sample_indices`, when non-empty per parameter, restricts the numeric check
// to those flat element indices (for large parameter sets).
template <typename T>
double grad_check(const std::function<Ptr<T>()>& fn, ParamSet<T>& params, T epsilon,
                  const std::map<std::string, std::vector<std::int64_t>>* sample_indices =
                      nullptr) {
  params.zero_grad();
  auto loss = fn();
  if (!std::isfinite((double)loss->value[0]))
    throw NumericError("grad_check: non-finite loss value");
  backward(loss);

  // Freeze the analytic gradients before perturbing.
  std::map<std::string, std::vector<T>> analytic;
  for (auto& [name, p] : params.params) {
    p->ensure_grad();
    analytic[name] = p->grad;
  }

  double max_rel = 0.0;
  for (auto& [name, p] : params.params) {
    std::vector<std::int64_t> idx;
    if (sample_indices) {
      auto it = sample_indices->find(name);
      if (it == sample_indices->end()) continue;
      idx = it->second;
    } else {
      idx.resize(p->value.size());
      for (size_t i = 0; i < idx.size(); ++i) idx[i] = (std::int64_t)i;
    }
    for (std::int64_t i : idx) {
      const T orig = p->value[i];
      p->value[i] = orig + epsilon;
      const T f_plus = fn()->value[0];
      p->value[i] = orig - epsilon;
      const T f_minus = fn()->value[0];
      p->value[i] = orig;
      if (!std::isfinite((double)f_plus) || !std::isfinite((double)f_minus))
        throw NumericError("grad_check: non-finite perturbed loss for parameter " + name);
      const double numeric = ((double)f_plus - (double)f_minus) / (2.0 * (double)epsilon);
      const double a = (double)analytic[name][i];
      // The absolute floor keeps difference noise on near-zero gradients from
      // registering as relative error; 1e-6 matches the resolution of central
      // differences on O(1) losses in 64-bit mode.
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

}  // namespace sslct
