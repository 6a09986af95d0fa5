#pragma once

// Minimal dense multi-dimensional array with reverse-mode differentiation.
// Graphs are rebuilt per step (define-by-run); backward() walks the graph in
// reverse topological order. All loops use a fixed accumulation order so runs
// are bit-reproducible at thread count 1.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "sslct/common.hpp"

namespace sslct {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int e : s) n *= e;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

inline void check_shape(bool ok, const std::string& what, const Shape& a, const Shape& b) {
  if (!ok)
    throw ConfigError(what + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated lazily, same extent as value
  bool requires_grad = false;
  std::string name;  // set for parameters, used in error messages

  std::vector<std::shared_ptr<Node<T>>> parents;
  std::function<void()> backward_fn;  // accumulates into parents' grad

  std::int64_t size() const { return static_cast<std::int64_t>(value.size()); }

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
  void zero_grad() { grad.assign(value.size(), T(0)); }
};

template <typename T>
using Ptr = std::shared_ptr<Node<T>>;

template <typename T>
Ptr<T> make_node(Shape shape, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->value.assign(static_cast<size_t>(numel(n->shape)), T(0));
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
Ptr<T> make_node(Shape shape, std::vector<T> values, bool requires_grad = false) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  if (static_cast<std::int64_t>(values.size()) != numel(n->shape))
    throw ConfigError("make_node: value count " + std::to_string(values.size()) +
                      " does not match shape " + shape_str(n->shape));
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return n;
}

template <typename T>
Ptr<T> make_node(Shape shape, std::initializer_list<T> values, bool requires_grad = false) {
  return make_node<T>(std::move(shape), std::vector<T>(values), requires_grad);
}

template <typename T>
Ptr<T> scalar_node(T v) {
  return make_node<T>({1}, {v});
}

// Reverse topological order from `root`, then run each node's backward_fn.
// Seeds d(root)/d(root) = 1; root must be scalar.
template <typename T>
void backward(const Ptr<T>& root) {
  if (root->size() != 1)
    throw ConfigError("backward: root must be scalar, got " + shape_str(root->shape));
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // Iterative DFS; post-order gives topological order.
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Node<T>* p = node->parents[idx].get();
      ++idx;
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node<T>* n : order) n->ensure_grad();
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
}

template <typename T>
bool any_requires(const std::vector<Ptr<T>>& ps) {
  for (const auto& p : ps)
    if (p->requires_grad) return true;
  return false;
}

}  // namespace sslct
