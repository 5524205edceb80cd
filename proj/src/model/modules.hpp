#pragma once

#include <functional>
#include <string>

#include "core/rng.hpp"
#include "core/tape.hpp"

namespace rfe {

using ParamVisitor = std::function<void(const std::string&, Parameter&)>;

// Kaiming-uniform fan-in initialization; biases start at zero.
Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng);

// y = x W + b with W[in,out], b[out]. Accepts x as [B,in] or [in].
class Affine {
 public:
  Affine() = default;
  Affine(std::size_t in, std::size_t out, Rng& rng);

  Value operator()(Tape& t, Value x) const;

  std::size_t in_dim() const { return weight.value.shape.empty() ? 0 : weight.value.shape[0]; }
  std::size_t out_dim() const { return weight.value.shape.empty() ? 0 : weight.value.shape[1]; }
  std::size_t param_count() const { return weight.value.size() + bias.value.size(); }

  void visit(const std::string& prefix, const ParamVisitor& cb);
  void set_trainable(bool trainable);

  Parameter weight;
  Parameter bias;
};

class Conv2dLayer {
 public:
  Conv2dLayer() = default;
  Conv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, int stride,
              int padding, Rng& rng);

  Value operator()(Tape& t, Value x) const;

  std::size_t out_channels() const { return kernel.value.shape.empty() ? 0 : kernel.value.shape[0]; }
  std::size_t param_count() const { return kernel.value.size() + bias.value.size(); }

  void visit(const std::string& prefix, const ParamVisitor& cb);
  void set_trainable(bool trainable);

  Parameter kernel;
  Parameter bias;
  int stride = 1;
  int padding = 0;
};

}  // namespace rfe
