#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace rfe {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of doubles. All numeric state in the library lives
// in these; gradients are held separately by the tape and by Parameter.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
  Tensor(Shape s, std::vector<double> d);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, double v);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  bool defined() const { return !shape.empty(); }

  // Scalar extraction; requires size()==1.
  double item() const;

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  void fill(double v);
};

bool same_shape(const Tensor& a, const Tensor& b);

// Throws DimensionError naming both shapes when they differ.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace rfe
