#include "core/tensor.hpp"

#include <algorithm>

namespace rfe {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return shape.empty() ? 0 : n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  s += "]";
  return s;
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
}

Tensor Tensor::full(Shape s, double v) {
  Tensor t(std::move(s));
  t.fill(v);
  return t;
}

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() requires a single-element tensor, got " + shape_str(shape));
  }
  return data[0];
}

void Tensor::fill(double v) { std::fill(data.begin(), data.end(), v); }

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!same_shape(a, b)) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
  }
}

}  // namespace rfe
