#pragma once

#include <functional>
#include <optional>

#include "core/adam.hpp"
#include "data/stream.hpp"
#include "engine/store.hpp"
#include "model/continual_model.hpp"

namespace rfe {

enum class StrategyKind { Rfe, RfeP, RfeB, Finetuning, Oracle };

const char* strategy_name(StrategyKind kind);
std::optional<StrategyKind> parse_strategy(const std::string& name);

struct StrategyConfig {
  StrategyKind kind = StrategyKind::Rfe;
  std::size_t capacity = 0;  // |P| or |B|; 0 for plain RFE
  double alpha = 1.0;
  bool end_to_end = false;

  void validate() const;
  bool is_rfe_family() const {
    return kind == StrategyKind::Rfe || kind == StrategyKind::RfeP || kind == StrategyKind::RfeB;
  }
  bool keeps_prev_extractor() const { return is_rfe_family(); }
  bool keeps_subset() const { return kind == StrategyKind::RfeP; }
  bool keeps_buffer() const { return kind == StrategyKind::RfeB; }
};

struct TrainConfig {
  int epochs_main = 40;
  int epochs_aux = 40;
  int epochs_retro = 40;
  double lr_main = 5e-4;
  double lr_retro = 5e-3;  // retrospector and auxiliary distillation
  double lr_decay = 0.1;   // applied when validation loss plateaus
  int patience = 3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochRecord {
  std::string stage;  // main | aux | retro | oracle
  int task = 0;
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
};

// Multiplies the learning rate by `decay` after `patience` consecutive
// epochs without improvement of the monitored loss.
class PlateauScheduler {
 public:
  PlateauScheduler(double decay, int patience) : decay_(decay), patience_(patience) {}
  // Returns the lr multiplier to apply after this observation (1.0 or decay).
  double observe(double loss);

 private:
  double decay_;
  int patience_;
  double best_ = 1e300;
  int bad_ = 0;
};

using BatchFeatureFn = std::function<Value(Tape&, const std::vector<const Tensor*>&)>;

// Batch-mean squared L2 distance between two feature maps of the batch.
// The target is evaluated on a detached tape, so gradients flow only into
// the estimator's parameters.
Value feature_estimation_loss(Tape& tape, const BatchFeatureFn& estimate,
                              const BatchFeatureFn& target,
                              const std::vector<const Tensor*>& batch);

// Combined per-batch training loss: cross-entropy through the task head plus
// alpha times the feature regularizer against the frozen predecessor over
// xs + fe_extra. When end_to_end_retro is set, the regularizer runs through
// that retrospector instead of comparing raw features. At task 1 (or
// alpha=0) the regularizer is absent.
Value training_loss(Tape& tape, const ContinualModel& model, int task,
                    const std::vector<const Tensor*>& xs, const std::vector<std::size_t>& ys_local,
                    const FeatureExtractor* prev, const std::vector<const Tensor*>& fe_extra,
                    double alpha, const Retrospector* end_to_end_retro = nullptr);

// Sequential training per the per-task procedure: main training with the
// combined loss, auxiliary-extractor distillation for the next task,
// retrospector training, and the strategy's store update. Oracle training
// (joint over all tasks) is exposed separately.
class ContinualTrainer {
 public:
  ContinualTrainer(ContinualModel& model, StrategyConfig strategy, TrainConfig cfg);

  void learn_task(const TaskDataset& task);
  void learn_oracle(const TaskStream& stream);

  // Trains the whole stream with the configured strategy.
  void learn_all(const TaskStream& stream);

  const std::vector<EpochRecord>& log() const { return log_; }
  ExemplarStore& store() { return store_; }
  const ExemplarStore& store() const { return store_; }

  // The individual stages, in the order learn_task runs them. Exposed so the
  // stages can be driven and inspected directly.
  void train_main(const TaskDataset& task);
  AuxiliaryExtractor distill_aux(const FeatureExtractor& target, const TaskDataset& task);
  void train_retrospector(const TaskDataset& task);
  void update_buffer(const TaskDataset& task);
  void refill_subset(const TaskDataset& task);

 private:
  double effective_alpha() const {
    return strategy_.kind == StrategyKind::Finetuning ? 0.0 : strategy_.alpha;
  }
  Tensor features_of(const Tensor& x) const;  // no-grad f(x) under the live extractor
  void check_finite(double loss, const char* stage, int task, int epoch) const;

  ContinualModel& model_;
  StrategyConfig strategy_;
  TrainConfig cfg_;
  ExemplarStore store_;
  std::vector<EpochRecord> log_;
};

std::vector<Parameter*> collect_params(const std::function<void(const ParamVisitor&)>& visit_fn);

}  // namespace rfe
