#include "core/adam.hpp"

#include <cmath>

#include "core/error.hpp"

namespace rfe {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const std::string& name) {
  require_same_shape(param, grad, "adam_step");
  require_same_shape(param, state.m, "adam_step");
  for (double g : grad.data) {
    if (!std::isfinite(g)) {
      throw DivergenceError("adam_step: non-finite gradient for parameter '" + name + "'");
    }
  }
  state.step += 1;
  double b1 = state.beta1, b2 = state.beta2;
  double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    double g = grad[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    double mhat = state.m[i] / c1;
    double vhat = state.v[i] / c2;
    param[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

AdamOptimizer::AdamOptimizer(std::vector<Parameter*> params, double lr)
    : params_(std::move(params)), lr_(lr) {
  states_.reserve(params_.size());
  for (Parameter* p : params_) states_.emplace_back(p->value.shape, lr);
}

void AdamOptimizer::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

void AdamOptimizer::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    adam_step(params_[i]->value, params_[i]->grad, states_[i], params_[i]->name);
  }
}

void AdamOptimizer::set_lr(double lr) {
  lr_ = lr;
  for (AdamState& s : states_) s.learning_rate = lr;
}

}  // namespace rfe
