#pragma once

#include "data/stream.hpp"
#include "model/continual_model.hpp"

namespace rfe {

// One descending pass f_N(x), f̂_{N-1}(x), ..., f̂_{to}(x). Entry k is
// produced from entry k-1 by exactly one retrospector application.
struct RectificationTrace {
  std::vector<Tensor> features;
  std::vector<int> tasks;  // N, N-1, ..., to

  const Tensor& at_task(int t) const;
  std::size_t length() const { return features.size(); }
};

RectificationTrace rectify_chain(const ContinualModel& model, const Tensor& x, int to_task);

struct TilPrediction {
  std::size_t label_local = 0;  // argmax within the head; ties take the lowest index
  Tensor logits;
};

// use_rectification=false classifies the raw f_N(x) feature instead of the
// chain terminus; that is the finetuning/oracle evaluation path.
TilPrediction til_predict(const ContinualModel& model, const Tensor& x, int task_id,
                          bool use_rectification = true);

struct CilPrediction {
  std::size_t slot = 0;  // global class slot (task blocks in order)
  Tensor probabilities;  // averaged over domains; sums to 1
};

// Per-domain masked softmax embedded into the global class vector and
// averaged uniformly over all learned domains. A single descending trace
// serves every domain.
CilPrediction cil_predict(const ContinualModel& model, const Tensor& x,
                          bool use_rectification = true);

struct EvalSettings {
  bool til = true;
  bool cil = true;
  bool use_rectification = true;
  int threads = 1;
};

struct SampleRecord {
  const char* setting;  // "TIL" or "CIL"
  int task_id = 0;
  std::size_t sample_index = 0;
  std::int64_t true_label = 0;
  std::int64_t pred_label = 0;
};

struct EvalOutput {
  std::vector<double> til_accuracy;  // indexed by task-1, tasks 1..upto
  std::vector<double> cil_accuracy;
  std::vector<SampleRecord> records;
  // CIL probability vectors in record order (task-major, then sample index).
  std::vector<Tensor> cil_probabilities;
};

// Evaluates the test splits of tasks 1..upto_task. Worker threads write
// into preallocated per-sample slots, so the output does not depend on the
// thread count.
EvalOutput evaluate(const ContinualModel& model, const TaskStream& stream, int upto_task,
                    const EvalSettings& settings);

}  // namespace rfe
