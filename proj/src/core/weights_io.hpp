#pragma once

#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace rfe {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Flat binary weight container. Layout: magic "RFEW1", then one record per
// tensor: name length (u64 LE), UTF-8 name bytes, rank (u64 LE), extents
// (u64 LE each), data (f64 LE each). Records run to end of file. The round
// trip is bit-exact.
void save_weights(const std::string& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> load_weights(const std::string& path);

}  // namespace rfe
