#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "core/adam.hpp"
#include "core/rng.hpp"
#include "core/tape.hpp"

namespace rfe::test {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Tensor t(shape);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Builds the graph on a fresh tape and returns the scalar loss value.
using GraphBuilder = std::function<Value(Tape&)>;

inline double eval_loss(const GraphBuilder& build) {
  Tape t(false);
  return t.value(build(t)).item();
}

struct FdReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

// Central finite differences against the analytic gradients accumulated in
// `params`. `skip` may exclude elements near non-smooth points.
inline FdReport check_grads_fd(
    const GraphBuilder& build, const std::vector<Parameter*>& params, double h = 1e-5,
    const std::function<bool(const Parameter&, std::size_t)>& skip = nullptr) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape t;
    t.backward(build(t));
  }
  FdReport rep;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      if (skip && skip(*p, i)) continue;
      double orig = p->value[i];
      p->value[i] = orig + h;
      double lp = eval_loss(build);
      p->value[i] = orig - h;
      double lm = eval_loss(build);
      p->value[i] = orig;
      double fd = (lp - lm) / (2.0 * h);
      double an = p->grad[i];
      double denom = std::max(std::abs(fd), std::abs(an));
      double rel = denom < 1e-10 ? 0.0 : std::abs(fd - an) / denom;
      rep.max_rel_err = std::max(rep.max_rel_err, rel);
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace rfe::test
