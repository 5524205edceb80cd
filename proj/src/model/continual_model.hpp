#pragma once

#include <atomic>
#include <cstdint>

#include "core/weights_io.hpp"
#include "model/retrospector.hpp"

namespace rfe {

struct ModelConfig {
  ExtractorConfig extractor;
  std::size_t aux_dim = 128;
  std::size_t joint_dim = 128;
  RetroKind retro_kind = RetroKind::Gated;
};

// The evolving network: one shared feature extractor, one classifier head
// per task, and the growing retrospector chain. The frozen snapshot of the
// previous extractor and the pre-distilled auxiliary extractor for the next
// task are carried between learn_task calls.
class ContinualModel {
 public:
  ContinualModel(ModelConfig cfg, std::uint64_t seed);
  ContinualModel(ContinualModel&& other) noexcept;
  ContinualModel& operator=(ContinualModel&&) = delete;
  ContinualModel(const ContinualModel&) = delete;

  Value extract(Tape& t, const Tensor& x) const { return extractor->forward(t, x); }
  Value extract_batch(Tape& t, const std::vector<const Tensor*>& xs) const {
    return extractor->forward_batch(t, xs);
  }

  // Affine map of a feature (row or batch) by the head of `task` (1-based).
  Value classify(Tape& t, Value feature, int task) const;

  const Affine& head(int task) const;
  Affine& head(int task);
  bool has_head(int task) const {
    return task >= 1 && static_cast<std::size_t>(task) <= heads.size();
  }

  void add_head(std::size_t classes);
  AuxiliaryExtractor make_aux();
  Retrospector& add_retrospector(AuxiliaryExtractor aux, int task);
  const Retrospector& retrospector(int task) const;  // r_task, task >= 2
  Retrospector& retrospector(int task);

  // Canonical enumeration used for checkpoints and parameter counting:
  // f.*, w.task{t}.*, r.task{t}.*, pending_aux.*, f_prev.*.
  void visit_all(const ParamVisitor& cb);
  std::vector<NamedTensor> named_tensors();

  std::size_t inference_param_count();  // extractor + heads + retrospectors

  void save(const std::string& path);
  static ContinualModel load(const ModelConfig& cfg, const std::string& path);

  ModelConfig config;
  std::unique_ptr<FeatureExtractor> extractor;
  std::vector<Affine> heads;                  // heads[t-1] serves task t
  std::vector<Retrospector> retrospectors;    // retrospectors[k] is r_{k+2}
  std::unique_ptr<FeatureExtractor> prev_extractor;  // frozen f_{t-1}
  std::unique_ptr<AuxiliaryExtractor> pending_aux;   // frozen h_{t+1}
  int tasks_learned = 0;

  // Instrumentation: incremented once per retrospector application.
  mutable std::atomic<std::uint64_t> rectify_calls{0};

  Rng& init_rng() { return rng_; }

 private:
  Rng rng_;
};

}  // namespace rfe
