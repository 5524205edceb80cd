#include "model/continual_model.hpp"

#include <map>

#include "core/error.hpp"

namespace rfe {

ContinualModel::ContinualModel(ModelConfig cfg, std::uint64_t seed)
    : config(std::move(cfg)), rng_(derive_seed(seed, "model-init")) {
  extractor = make_extractor(config.extractor, rng_);
}

ContinualModel::ContinualModel(ContinualModel&& other) noexcept
    : config(std::move(other.config)),
      extractor(std::move(other.extractor)),
      heads(std::move(other.heads)),
      retrospectors(std::move(other.retrospectors)),
      prev_extractor(std::move(other.prev_extractor)),
      pending_aux(std::move(other.pending_aux)),
      tasks_learned(other.tasks_learned),
      rng_(other.rng_) {
  rectify_calls.store(other.rectify_calls.load());
}

Value ContinualModel::classify(Tape& t, Value feature, int task) const {
  return head(task)(t, feature);
}

const Affine& ContinualModel::head(int task) const {
  if (!has_head(task)) {
    throw InvalidArgument("no classifier head for task " + std::to_string(task));
  }
  return heads[static_cast<std::size_t>(task) - 1];
}

Affine& ContinualModel::head(int task) {
  return const_cast<Affine&>(static_cast<const ContinualModel*>(this)->head(task));
}

void ContinualModel::add_head(std::size_t classes) {
  heads.emplace_back(extractor->feature_dim(), classes, rng_);
}

AuxiliaryExtractor ContinualModel::make_aux() {
  return AuxiliaryExtractor(config.extractor.input_shape, config.aux_dim, rng_);
}

Retrospector& ContinualModel::add_retrospector(AuxiliaryExtractor aux, int task) {
  retrospectors.emplace_back(task, config.retro_kind, extractor->feature_dim(), config.joint_dim,
                             std::move(aux), rng_);
  return retrospectors.back();
}

const Retrospector& ContinualModel::retrospector(int task) const {
  std::size_t idx = static_cast<std::size_t>(task) - 2;
  if (task < 2 || idx >= retrospectors.size()) {
    throw InvalidArgument("no retrospector for task " + std::to_string(task));
  }
  return retrospectors[idx];
}

Retrospector& ContinualModel::retrospector(int task) {
  return const_cast<Retrospector&>(
      static_cast<const ContinualModel*>(this)->retrospector(task));
}

void ContinualModel::visit_all(const ParamVisitor& cb) {
  extractor->visit("f", cb);
  for (std::size_t i = 0; i < heads.size(); ++i) {
    heads[i].visit("w.task" + std::to_string(i + 1), cb);
  }
  for (Retrospector& r : retrospectors) {
    r.visit("r.task" + std::to_string(r.task), cb);
  }
  if (pending_aux) pending_aux->visit("pending_aux", cb);
  if (prev_extractor) prev_extractor->visit("f_prev", cb);
}

std::vector<NamedTensor> ContinualModel::named_tensors() {
  std::vector<NamedTensor> out;
  visit_all([&](const std::string& name, Parameter& p) { out.push_back({name, p.value}); });
  return out;
}

std::size_t ContinualModel::inference_param_count() {
  std::size_t n = extractor->param_count();
  for (Affine& h : heads) n += h.param_count();
  for (Retrospector& r : retrospectors) n += r.param_count();
  return n;
}

void ContinualModel::save(const std::string& path) { save_weights(path, named_tensors()); }

ContinualModel ContinualModel::load(const ModelConfig& cfg, const std::string& path) {
  std::vector<NamedTensor> tensors = load_weights(path);
  std::map<std::string, Tensor*> by_name;
  for (NamedTensor& nt : tensors) by_name[nt.name] = &nt.tensor;

  ContinualModel model(cfg, /*seed=*/0);
  auto have = [&](const std::string& name) { return by_name.count(name) != 0; };

  for (int t = 1; have("w.task" + std::to_string(t) + ".bias"); ++t) {
    model.add_head(by_name["w.task" + std::to_string(t) + ".bias"]->size());
  }
  model.tasks_learned = static_cast<int>(model.heads.size());
  for (int t = 2; have("r.task" + std::to_string(t) + ".a_f.weight") ||
                  have("r.task" + std::to_string(t) + ".mlp1.weight");
       ++t) {
    model.add_retrospector(model.make_aux(), t);
    model.retrospectors.back().aux.freeze();
  }
  if (have("pending_aux.conv1.weight") || have("pending_aux.dense.weight")) {
    model.pending_aux = std::make_unique<AuxiliaryExtractor>(model.make_aux());
    model.pending_aux->freeze();
  }
  if (have("f_prev.layer0.weight") || have("f_prev.conv0.weight")) {
    model.prev_extractor = model.extractor->clone();
    model.prev_extractor->set_trainable(false);
  }

  std::size_t assigned = 0;
  model.visit_all([&](const std::string& name, Parameter& p) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw ConfigError("checkpoint '" + path + "' is missing tensor '" + name + "'");
    }
    if (it->second->shape != p.value.shape) {
      throw ConfigError("checkpoint tensor '" + name + "' has shape " +
                        shape_str(it->second->shape) + ", model expects " +
                        shape_str(p.value.shape));
    }
    p.value = *it->second;
    ++assigned;
  });
  if (assigned != tensors.size()) {
    throw ConfigError("checkpoint '" + path + "' holds " + std::to_string(tensors.size()) +
                      " tensors but the configured model uses " + std::to_string(assigned));
  }
  return model;
}

}  // namespace rfe
