#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace rfe {

// Persistent trainable tensor. The gradient accumulates across backward
// passes until the optimizer zeroes it, so a batch may be split over several
// tapes and still produce the summed gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  explicit Parameter(Tensor v) : value(std::move(v)), grad(Tensor::zeros(value.shape)) {}

  void zero_grad() { grad.fill(0.0); }
};

// Handle to a node on a Tape. Valid only for the tape that produced it.
struct Value {
  std::uint32_t idx = 0;
};

// Dynamic reverse-mode tape. Every differentiable operation appends one node
// holding its output and a closure that routes the output gradient to the
// operation's inputs. backward() walks the tape once in reverse creation
// order, which is a topological order by construction.
//
// A tape built with grads_enabled=false records no gradient structure at
// all; such tapes are used for inference and for detaching targets, and are
// safe to run concurrently against a shared model.
class Tape {
 public:
  explicit Tape(bool grads_enabled = true) : grads_enabled_(grads_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value constant(Tensor v);
  Value param(const Parameter& p);

  // matmul(a[m,k], b[k,n]) -> [m,n]
  Value matmul(Value a, Value b);

  // Elementwise; binary ops require identical shapes.
  Value add(Value a, Value b);
  Value mul(Value a, Value b);
  Value relu(Value a);
  Value sigmoid(Value a);
  Value scale(Value a, double c);

  // m[B,n] + bias[n], broadcast over rows. Also accepts m[n].
  Value bias_add(Value m, Value bias);

  // input[Ci,H,W] cross-correlated with kernel[Co,Ci,kh,kw]; optional bias[Co].
  Value conv2d(Value input, Value kernel, int stride, int padding);
  Value conv2d(Value input, Value kernel, Value bias, int stride, int padding);

  // input[C,H,W]; per-window maximum, gradient routed to the first-in-row-major argmax.
  Value maxpool2d(Value input, int window, int stride);

  // input[C,H,W] -> [C]
  Value global_avg_pool(Value input);

  Value reshape(Value a, Shape s);

  // Concatenate along the last axis: [n]+[m]->[n+m], [B,n]+[B,m]->[B,n+m].
  Value concat(Value a, Value b);

  // k vectors of length n -> [k,n]
  Value stack_rows(const std::vector<Value>& rows);

  // Batch-mean squared L2 distance: for [B,D] the mean over rows of the row's
  // squared L2 norm of (a-b); a 1-D tensor is a batch of one.
  Value mse_sum(Value a, Value b);

  // Softmax cross-entropy over the unmasked entries of a 1-D logit vector.
  // mask[i]!=0 excludes unit i; an empty mask leaves every unit in play.
  // Masked positions receive exactly zero gradient.
  Value masked_softmax_cross_entropy(Value logits, std::size_t target,
                                     const std::vector<std::uint8_t>& mask = {});

  // Mean masked cross-entropy over the rows of logits[B,M].
  Value cross_entropy_mean(Value logits, const std::vector<std::size_t>& targets,
                           const std::vector<std::uint8_t>& mask = {});

  // Reverse pass from a scalar loss. Node gradients are reset at the start of
  // each call; Parameter gradients accumulate across calls.
  void backward(Value loss);

  const Tensor& value(Value v) const { return node(v).value; }
  bool has_grad(Value v) const { return node(v).requires_grad; }
  const Tensor& grad(Value v) const;
  bool grads_enabled() const { return grads_enabled_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated iff requires_grad
    bool requires_grad = false;
    Parameter* leaf = nullptr;
    std::function<void(Tape&)> backprop;
  };

  Value emplace(Tensor v, bool requires_grad, std::function<void(Tape&)> backprop = nullptr,
                Parameter* leaf = nullptr);
  const Node& node(Value v) const;
  Node& node(Value v);
  // Shared softmax-CE kernel over one logit row.
  double ce_row(const double* logits, std::size_t m, std::size_t target,
                const std::vector<std::uint8_t>& mask, std::vector<double>& probs) const;

  std::vector<Node> nodes_;
  bool grads_enabled_;
  std::uint32_t cur_ = 0;  // node whose backprop closure is running
};

}  // namespace rfe
