#include "model/extractor.hpp"

#include "core/error.hpp"

namespace rfe {

Value FeatureExtractor::forward_batch(Tape& t, const std::vector<const Tensor*>& xs) const {
  std::vector<Value> rows;
  rows.reserve(xs.size());
  for (const Tensor* x : xs) rows.push_back(forward(t, *x));
  return t.stack_rows(rows);
}

std::size_t FeatureExtractor::param_count() {
  std::size_t n = 0;
  visit("f", [&](const std::string&, Parameter& p) { n += p.value.size(); });
  return n;
}

void FeatureExtractor::check_input(const Tensor& x) const {
  if (x.shape != input_shape_) {
    throw DimensionError("extractor: input shape " + shape_str(x.shape) +
                         " does not match configured " + shape_str(input_shape_));
  }
}

std::unique_ptr<FeatureExtractor> make_extractor(const ExtractorConfig& cfg, Rng& rng) {
  if (cfg.kind == ExtractorKind::Mlp) return std::make_unique<MlpExtractor>(cfg, rng);
  return std::make_unique<SmallConvNet>(cfg, rng);
}

MlpExtractor::MlpExtractor(const ExtractorConfig& cfg, Rng& rng) {
  if (cfg.input_shape.size() != 1) {
    throw ConfigError("mlp extractor expects a vector input shape, got " +
                      shape_str(cfg.input_shape));
  }
  feature_dim_ = cfg.feature_dim;
  input_shape_ = cfg.input_shape;
  std::size_t prev = cfg.input_shape[0];
  for (std::size_t width : cfg.hidden) {
    layers.emplace_back(prev, width, rng);
    prev = width;
  }
  layers.emplace_back(prev, cfg.feature_dim, rng);
}

Value MlpExtractor::apply(Tape& t, Value x) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    x = layers[i](t, x);
    if (i + 1 < layers.size()) x = t.relu(x);
  }
  return x;
}

Value MlpExtractor::forward(Tape& t, const Tensor& x) const {
  check_input(x);
  return apply(t, t.constant(x));
}

Value MlpExtractor::forward_batch(Tape& t, const std::vector<const Tensor*>& xs) const {
  std::size_t dim = input_shape_[0];
  Tensor batch({xs.size(), dim});
  for (std::size_t r = 0; r < xs.size(); ++r) {
    check_input(*xs[r]);
    std::copy(xs[r]->data.begin(), xs[r]->data.end(), batch.data.begin() + r * dim);
  }
  return apply(t, t.constant(std::move(batch)));
}

std::unique_ptr<FeatureExtractor> MlpExtractor::clone() const {
  return std::make_unique<MlpExtractor>(*this);
}

void MlpExtractor::visit(const std::string& prefix, const ParamVisitor& cb) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    layers[i].visit(prefix + ".layer" + std::to_string(i), cb);
  }
}

void MlpExtractor::set_trainable(bool trainable) {
  for (Affine& l : layers) l.set_trainable(trainable);
}

SmallConvNet::SmallConvNet(const ExtractorConfig& cfg, Rng& rng) {
  if (cfg.input_shape.size() != 3) {
    throw ConfigError("conv extractor expects a [C,H,W] input shape, got " +
                      shape_str(cfg.input_shape));
  }
  if (cfg.channels.empty()) throw ConfigError("conv extractor needs a channel plan");
  feature_dim_ = cfg.feature_dim;
  input_shape_ = cfg.input_shape;
  std::size_t prev = cfg.input_shape[0];
  for (std::size_t ch : cfg.channels) {
    convs.emplace_back(prev, ch, 3, /*stride=*/2, /*padding=*/1, rng);
    prev = ch;
  }
  head = Affine(prev, cfg.feature_dim, rng);
}

Value SmallConvNet::forward(Tape& t, const Tensor& x) const {
  check_input(x);
  Value v = t.constant(x);
  for (const Conv2dLayer& conv : convs) v = t.relu(conv(t, v));
  return head(t, t.global_avg_pool(v));
}

std::unique_ptr<FeatureExtractor> SmallConvNet::clone() const {
  return std::make_unique<SmallConvNet>(*this);
}

void SmallConvNet::visit(const std::string& prefix, const ParamVisitor& cb) {
  for (std::size_t i = 0; i < convs.size(); ++i) {
    convs[i].visit(prefix + ".conv" + std::to_string(i), cb);
  }
  head.visit(prefix + ".head", cb);
}

void SmallConvNet::set_trainable(bool trainable) {
  for (Conv2dLayer& c : convs) c.set_trainable(trainable);
  head.set_trainable(trainable);
}

namespace {

int aux_down_window(const Shape& input_shape) {
  std::size_t h = input_shape[1], w = input_shape[2];
  if (h != w) {
    throw ConfigError("auxiliary extractor expects square images, got " + shape_str(input_shape));
  }
  if (h < 16 || h % 16 != 0) {
    throw ConfigError("auxiliary extractor requires the image side to be a multiple of 16, got " +
                      std::to_string(h));
  }
  return static_cast<int>(h / 16);
}

}  // namespace

AuxiliaryExtractor::AuxiliaryExtractor(const Shape& input_shape, std::size_t aux_dim, Rng& rng)
    : aux_dim_(aux_dim) {
  if (input_shape.size() == 3) {
    image_ = true;
    down_window_ = aux_down_window(input_shape);
    conv1 = Conv2dLayer(input_shape[0], 64, 3, /*stride=*/2, /*padding=*/1, rng);
    conv2 = Conv2dLayer(64, aux_dim, 3, /*stride=*/2, /*padding=*/1, rng);
  } else if (input_shape.size() == 1) {
    image_ = false;
    dense = Affine(input_shape[0], aux_dim, rng);
  } else {
    throw ConfigError("auxiliary extractor: unsupported input shape " + shape_str(input_shape));
  }
}

std::vector<std::size_t> AuxiliaryExtractor::image_stage_sides(const Shape& input_shape) {
  aux_down_window(input_shape);
  return {16, 8, 4, 2, 1};
}

Value AuxiliaryExtractor::forward(Tape& t, const Tensor& x) const {
  if (image_) {
    Value v = t.constant(x);
    if (down_window_ > 1) v = t.maxpool2d(v, down_window_, down_window_);
    v = t.maxpool2d(t.relu(conv1(t, v)), 2, 2);
    v = t.maxpool2d(t.relu(conv2(t, v)), 2, 2);
    return t.reshape(v, {aux_dim_});
  }
  return t.relu(dense(t, t.constant(x)));
}

Value AuxiliaryExtractor::forward_batch(Tape& t, const std::vector<const Tensor*>& xs) const {
  if (!image_) {
    std::size_t dim = dense.in_dim();
    Tensor batch({xs.size(), dim});
    for (std::size_t r = 0; r < xs.size(); ++r) {
      if (xs[r]->shape != Shape{dim}) {
        throw DimensionError("auxiliary extractor: input shape " + shape_str(xs[r]->shape) +
                             " does not match configured [" + std::to_string(dim) + "]");
      }
      std::copy(xs[r]->data.begin(), xs[r]->data.end(), batch.data.begin() + r * dim);
    }
    return t.relu(dense(t, t.constant(std::move(batch))));
  }
  std::vector<Value> rows;
  rows.reserve(xs.size());
  for (const Tensor* x : xs) rows.push_back(forward(t, *x));
  return t.stack_rows(rows);
}

std::size_t AuxiliaryExtractor::param_count() {
  std::size_t n = 0;
  visit("h", [&](const std::string&, Parameter& p) { n += p.value.size(); });
  return n;
}

void AuxiliaryExtractor::visit(const std::string& prefix, const ParamVisitor& cb) {
  if (image_) {
    conv1.visit(prefix + ".conv1", cb);
    conv2.visit(prefix + ".conv2", cb);
  } else {
    dense.visit(prefix + ".dense", cb);
  }
}

void AuxiliaryExtractor::set_trainable(bool trainable) {
  conv1.set_trainable(trainable);
  conv2.set_trainable(trainable);
  dense.set_trainable(trainable);
}

void AuxiliaryExtractor::freeze() {
  frozen_ = true;
  set_trainable(false);
}

}  // namespace rfe
