#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "dat/tensor.hpp"

namespace dat {

// "DATCKPT1" | u32 LE tensor count | per tensor:
//   u16 LE name length | UTF-8 name | u8 rank | rank x u32 LE dims |
//   float32 LE row-major payload
using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

inline Tensor<float> checkpoint_tensor(const NamedTensors& ts, const std::string& name) {
    for (auto& [n, t] : ts)
        if (n == name) return t;
    throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
}

}  // namespace dat
