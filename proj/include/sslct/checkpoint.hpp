#pragma once

// Pre-training checkpoint container: named float32 tensors plus the frozen
// run configuration, serialized little-endian with a trailing CRC-32 and
// written atomically (temp file + rename).

#include <cstdint>
#include <string>
#include <vector>

#include "sslct/tensor.hpp"

namespace sslct {

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

struct PretrainCheckpoint {
  std::string method;
  std::int64_t epoch = 0;
  std::int64_t step = 0;  // global optimizer step, resumes bias correction
  std::string config_text;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
  const NamedTensor& require(const std::string& name) const {
    const NamedTensor* t = find(name);
    if (!t) throw ValidationError("checkpoint: missing tensor " + name);
    return *t;
  }
  void add(const std::string& name, const std::vector<int>& shape,
           const std::vector<float>& data);
};

void save_checkpoint(const std::string& path, const PretrainCheckpoint& ckpt);
PretrainCheckpoint load_checkpoint(const std::string& path);

}  // namespace sslct
