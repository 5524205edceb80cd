#pragma once

#include <memory>
#include <vector>

#include "model/modules.hpp"

namespace rfe {

enum class ExtractorKind { Mlp, SmallConvNet };

struct ExtractorConfig {
  ExtractorKind kind = ExtractorKind::Mlp;
  Shape input_shape;                          // {D} for vectors, {C,H,W} for images
  std::size_t feature_dim = 512;
  std::vector<std::size_t> hidden = {256, 256};  // MLP widths
  std::vector<std::size_t> channels = {32, 64};  // conv channel plan
};

// Task-agnostic feature extractor f. One instance evolves across all tasks;
// frozen snapshots of earlier states are taken by clone().
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;

  virtual Value forward(Tape& t, const Tensor& x) const = 0;
  // Default batches by stacking per-sample features into [B, dim(f)].
  virtual Value forward_batch(Tape& t, const std::vector<const Tensor*>& xs) const;

  virtual std::unique_ptr<FeatureExtractor> clone() const = 0;
  virtual void visit(const std::string& prefix, const ParamVisitor& cb) = 0;
  virtual void set_trainable(bool trainable) = 0;

  std::size_t feature_dim() const { return feature_dim_; }
  const Shape& input_shape() const { return input_shape_; }
  std::size_t param_count();

  void check_input(const Tensor& x) const;

 protected:
  std::size_t feature_dim_ = 0;
  Shape input_shape_;
};

std::unique_ptr<FeatureExtractor> make_extractor(const ExtractorConfig& cfg, Rng& rng);

class MlpExtractor final : public FeatureExtractor {
 public:
  MlpExtractor(const ExtractorConfig& cfg, Rng& rng);

  Value forward(Tape& t, const Tensor& x) const override;
  Value forward_batch(Tape& t, const std::vector<const Tensor*>& xs) const override;
  std::unique_ptr<FeatureExtractor> clone() const override;
  void visit(const std::string& prefix, const ParamVisitor& cb) override;
  void set_trainable(bool trainable) override;

  std::vector<Affine> layers;  // hidden layers with ReLU, final layer linear

 private:
  Value apply(Tape& t, Value x) const;
};

class SmallConvNet final : public FeatureExtractor {
 public:
  SmallConvNet(const ExtractorConfig& cfg, Rng& rng);

  Value forward(Tape& t, const Tensor& x) const override;
  std::unique_ptr<FeatureExtractor> clone() const override;
  void visit(const std::string& prefix, const ParamVisitor& cb) override;
  void set_trainable(bool trainable) override;

  std::vector<Conv2dLayer> convs;
  Affine head;
};

// Weak auxiliary extractor h_t. For images: the input is max-pooled down to
// 16x16, then Conv(->64, 3x3, s2, p1) + ReLU + MaxPool(2) +
// Conv(->dim(h), 3x3, s2, p1) + ReLU + MaxPool(2), ending at 1x1. For
// vectors: one hidden affine + ReLU of width dim(h). Frozen after
// distillation; its parameters never reach another optimizer.
class AuxiliaryExtractor {
 public:
  AuxiliaryExtractor() = default;
  AuxiliaryExtractor(const Shape& input_shape, std::size_t aux_dim, Rng& rng);

  Value forward(Tape& t, const Tensor& x) const;
  Value forward_batch(Tape& t, const std::vector<const Tensor*>& xs) const;

  std::size_t out_dim() const { return aux_dim_; }
  bool is_image() const { return image_; }
  std::size_t param_count();

  void visit(const std::string& prefix, const ParamVisitor& cb);
  void set_trainable(bool trainable);
  void freeze();
  bool frozen() const { return frozen_; }

  // Spatial side lengths along the image path, starting at the downsampled
  // input: {16, 8, 4, 2, 1} for the default configuration.
  static std::vector<std::size_t> image_stage_sides(const Shape& input_shape);

  Conv2dLayer conv1, conv2;  // image path
  Affine dense;              // vector path

 private:
  std::size_t aux_dim_ = 0;
  bool image_ = false;
  bool frozen_ = false;
  int down_window_ = 1;
};

}  // namespace rfe
