#include "model/modules.hpp"

#include <cmath>

namespace rfe {

Tensor kaiming_uniform(const Shape& shape, std::size_t fan_in, Rng& rng) {
  Tensor t(shape);
  double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

Affine::Affine(std::size_t in, std::size_t out, Rng& rng)
    : weight(kaiming_uniform({in, out}, in, rng)), bias(Tensor::zeros({out})) {}

Value Affine::operator()(Tape& t, Value x) const {
  const Tensor& xv = t.value(x);
  if (xv.rank() == 1) {
    Value row = t.reshape(x, {1, xv.shape[0]});
    Value y = t.bias_add(t.matmul(row, t.param(weight)), t.param(bias));
    return t.reshape(y, {out_dim()});
  }
  return t.bias_add(t.matmul(x, t.param(weight)), t.param(bias));
}

void Affine::visit(const std::string& prefix, const ParamVisitor& cb) {
  weight.name = prefix + ".weight";
  bias.name = prefix + ".bias";
  cb(weight.name, weight);
  cb(bias.name, bias);
}

void Affine::set_trainable(bool trainable) {
  weight.trainable = trainable;
  bias.trainable = trainable;
}

Conv2dLayer::Conv2dLayer(std::size_t in_channels, std::size_t out_channels, std::size_t kernel_size,
                         int stride_, int padding_, Rng& rng)
    : kernel(kaiming_uniform({out_channels, in_channels, kernel_size, kernel_size},
                             in_channels * kernel_size * kernel_size, rng)),
      bias(Tensor::zeros({out_channels})),
      stride(stride_),
      padding(padding_) {}

Value Conv2dLayer::operator()(Tape& t, Value x) const {
  return t.conv2d(x, t.param(kernel), t.param(bias), stride, padding);
}

void Conv2dLayer::visit(const std::string& prefix, const ParamVisitor& cb) {
  kernel.name = prefix + ".weight";
  bias.name = prefix + ".bias";
  cb(kernel.name, kernel);
  cb(bias.name, bias);
}

void Conv2dLayer::set_trainable(bool trainable) {
  kernel.trainable = trainable;
  bias.trainable = trainable;
}

}  // namespace rfe
