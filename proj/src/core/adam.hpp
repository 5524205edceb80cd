#pragma once

#include <cstdint>
#include <vector>

#include "core/tape.hpp"

namespace rfe {

// Bias-corrected Adam. Moments are zero-initialized and the step counter
// advances by exactly one per update.
struct AdamState {
  Tensor m;
  Tensor v;
  std::uint64_t step = 0;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  AdamState(const Shape& shape, double lr)
      : m(Tensor::zeros(shape)), v(Tensor::zeros(shape)), learning_rate(lr) {}
};

// One Adam update in place. Throws DivergenceError naming the parameter when
// the gradient is non-finite.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const std::string& name);

class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Parameter*> params, double lr);

  void zero_grad();
  void step();
  void set_lr(double lr);
  double lr() const { return lr_; }
  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<AdamState> states_;
  double lr_;
};

}  // namespace rfe
