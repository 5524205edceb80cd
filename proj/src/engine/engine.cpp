#include "engine/engine.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "core/error.hpp"

namespace rfe {

const char* strategy_name(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::Rfe: return "rfe";
    case StrategyKind::RfeP: return "rfe_p";
    case StrategyKind::RfeB: return "rfe_b";
    case StrategyKind::Finetuning: return "finetuning";
    case StrategyKind::Oracle: return "oracle";
  }
  return "?";
}

std::optional<StrategyKind> parse_strategy(const std::string& name) {
  if (name == "rfe") return StrategyKind::Rfe;
  if (name == "rfe_p") return StrategyKind::RfeP;
  if (name == "rfe_b") return StrategyKind::RfeB;
  if (name == "finetuning") return StrategyKind::Finetuning;
  if (name == "oracle") return StrategyKind::Oracle;
  return std::nullopt;
}

void StrategyConfig::validate() const {
  if (alpha < 0.0) throw ConfigError("strategy: alpha must be >= 0");
  if (kind == StrategyKind::Rfe && capacity != 0) {
    throw ConfigError("strategy: plain rfe keeps no data, capacity must be 0");
  }
  if ((kind == StrategyKind::RfeP || kind == StrategyKind::RfeB) && capacity == 0) {
    throw ConfigError(std::string("strategy: ") + strategy_name(kind) +
                      " requires a positive capacity");
  }
  if (end_to_end && !is_rfe_family()) {
    throw ConfigError("strategy: end_to_end applies only to the rfe variants");
  }
}

void TrainConfig::validate() const {
  if (epochs_main < 1 || epochs_aux < 1 || epochs_retro < 1) {
    throw ConfigError("training: epochs must be >= 1");
  }
  if (lr_main <= 0.0 || lr_retro <= 0.0) throw ConfigError("training: learning rates must be > 0");
  if (lr_decay <= 0.0 || lr_decay > 1.0) throw ConfigError("training: lr_decay must be in (0,1]");
  if (patience < 1) throw ConfigError("training: patience must be >= 1");
  if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
}

double PlateauScheduler::observe(double loss) {
  if (loss < best_) {
    best_ = loss;
    bad_ = 0;
    return 1.0;
  }
  if (++bad_ >= patience_) {
    bad_ = 0;
    return decay_;
  }
  return 1.0;
}

std::vector<Parameter*> collect_params(const std::function<void(const ParamVisitor&)>& visit_fn) {
  std::vector<Parameter*> out;
  visit_fn([&](const std::string&, Parameter& p) { out.push_back(&p); });
  return out;
}

Value feature_estimation_loss(Tape& tape, const BatchFeatureFn& estimate,
                              const BatchFeatureFn& target,
                              const std::vector<const Tensor*>& batch) {
  Value est = estimate(tape, batch);
  Tensor detached;
  {
    Tape no_grad(false);
    detached = no_grad.value(target(no_grad, batch));
  }
  return tape.mse_sum(est, tape.constant(std::move(detached)));
}

Value training_loss(Tape& tape, const ContinualModel& model, int task,
                    const std::vector<const Tensor*>& xs, const std::vector<std::size_t>& ys_local,
                    const FeatureExtractor* prev, const std::vector<const Tensor*>& fe_extra,
                    double alpha, const Retrospector* end_to_end_retro) {
  Value feats = model.extract_batch(tape, xs);
  Value logits = model.classify(tape, feats, task);
  Value ce = tape.cross_entropy_mean(logits, ys_local);
  if (task == 1 || alpha == 0.0) return ce;
  if (!prev) {
    throw ConfigError("training_loss: previous extractor required at task " +
                      std::to_string(task) + " with alpha > 0");
  }
  std::vector<const Tensor*> fe_xs = xs;
  fe_xs.insert(fe_xs.end(), fe_extra.begin(), fe_extra.end());
  Value est;
  if (end_to_end_retro) {
    Value f_now = model.extract_batch(tape, fe_xs);
    est = end_to_end_retro->rectify(tape, f_now, fe_xs);
  } else {
    est = model.extract_batch(tape, fe_xs);
  }
  Tensor target;
  {
    Tape no_grad(false);
    target = no_grad.value(prev->forward_batch(no_grad, fe_xs));
  }
  Value fe = tape.mse_sum(est, tape.constant(std::move(target)));
  return tape.add(ce, tape.scale(fe, alpha));
}

namespace {

struct Batch {
  std::vector<const Tensor*> xs;
  std::vector<std::size_t> ys;
};

Batch make_batch(const TaskDataset& ds, const std::vector<std::size_t>& order, std::size_t begin,
                 std::size_t end) {
  Batch b;
  b.xs.reserve(end - begin);
  b.ys.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    std::size_t src = order[i];
    b.xs.push_back(&ds.train_x[src]);
    b.ys.push_back(ds.local_class(ds.train_y[src]));
  }
  return b;
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(idx);
  return idx;
}

}  // namespace

ContinualTrainer::ContinualTrainer(ContinualModel& model, StrategyConfig strategy, TrainConfig cfg)
    : model_(model),
      strategy_(strategy),
      cfg_(cfg),
      store_(strategy.keeps_buffer() ? StorePolicy::ReservoirAllTasks
                                     : StorePolicy::SubsetPrevTask,
             strategy.is_rfe_family() ? strategy.capacity : 0,
             derive_seed(cfg.seed, "reservoir")) {
  strategy_.validate();
  cfg_.validate();
}

Tensor ContinualTrainer::features_of(const Tensor& x) const {
  Tape no_grad(false);
  return no_grad.value(model_.extract(no_grad, x));
}

void ContinualTrainer::check_finite(double loss, const char* stage, int task, int epoch) const {
  if (!std::isfinite(loss)) {
    throw DivergenceError(std::string(stage) + " training diverged at task " +
                          std::to_string(task) + " epoch " + std::to_string(epoch));
  }
}

void ContinualTrainer::learn_all(const TaskStream& stream) {
  if (strategy_.kind == StrategyKind::Oracle) {
    learn_oracle(stream);
    return;
  }
  for (const TaskDataset& task : stream.tasks) learn_task(task);
}

void ContinualTrainer::learn_task(const TaskDataset& task) {
  if (strategy_.kind == StrategyKind::Oracle) {
    throw InvalidArgument("oracle strategy trains jointly; use learn_oracle");
  }
  int t = task.task_id;
  if (t != model_.tasks_learned + 1) {
    throw InvalidArgument("out-of-order task " + std::to_string(t) + "; next expected task is " +
                          std::to_string(model_.tasks_learned + 1));
  }
  model_.add_head(task.num_classes());

  bool rfe = strategy_.is_rfe_family();
  bool e2e = strategy_.end_to_end && rfe;
  if (e2e && t > 1) {
    // End-to-end variant: the whole retrospector, auxiliary extractor
    // included, trains inside the main loss; no distillation stage.
    model_.add_retrospector(model_.make_aux(), t);
  }

  train_main(task);

  if (rfe) {
    if (strategy_.keeps_buffer()) update_buffer(task);
    if (!e2e) {
      if (t > 1) {
        if (!model_.pending_aux) {
          throw InvalidArgument("no distilled auxiliary extractor available for task " +
                                std::to_string(t));
        }
        model_.add_retrospector(std::move(*model_.pending_aux), t);
        model_.pending_aux.reset();
      }
      AuxiliaryExtractor next_aux = distill_aux(*model_.extractor, task);
      model_.pending_aux = std::make_unique<AuxiliaryExtractor>(std::move(next_aux));
      if (t > 1) train_retrospector(task);
    }
    model_.prev_extractor = model_.extractor->clone();
    model_.prev_extractor->set_trainable(false);
    if (strategy_.keeps_subset()) refill_subset(task);
  }
  model_.tasks_learned = t;
}

void ContinualTrainer::train_main(const TaskDataset& task) {
  int t = task.task_id;
  double alpha = effective_alpha();
  bool e2e = strategy_.end_to_end && strategy_.is_rfe_family() && t > 1;
  Retrospector* e2e_retro = e2e ? &model_.retrospector(t) : nullptr;

  model_.extractor->set_trainable(true);
  std::vector<Parameter*> params = collect_params([&](const ParamVisitor& cb) {
    model_.extractor->visit("f", cb);
    model_.head(t).visit("w.task" + std::to_string(t), cb);
    if (e2e_retro) e2e_retro->visit("r.task" + std::to_string(t), cb);
  });
  AdamOptimizer opt(params, cfg_.lr_main);
  PlateauScheduler sched(cfg_.lr_decay, cfg_.patience);
  const FeatureExtractor* prev = model_.prev_extractor.get();
  bool use_store = alpha > 0.0 && t > 1 && store_.size() > 0;

  for (int epoch = 1; epoch <= cfg_.epochs_main; ++epoch) {
    auto order = shuffled_indices(task.train_x.size(),
                                  derive_seed(cfg_.seed, "main-epoch", t, epoch));
    std::vector<std::size_t> store_order;
    std::size_t store_cursor = 0;
    if (use_store) {
      store_order = shuffled_indices(store_.size(),
                                     derive_seed(cfg_.seed, "main-store", t, epoch));
    }
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
      std::size_t end = std::min(order.size(), begin + cfg_.batch_size);
      Batch batch = make_batch(task, order, begin, end);
      std::vector<const Tensor*> fe_extra;
      if (use_store) {
        for (std::size_t i = 0; i < end - begin; ++i) {
          fe_extra.push_back(&store_.entries()[store_order[store_cursor]].x);
          store_cursor = (store_cursor + 1) % store_order.size();
        }
      }
      opt.zero_grad();
      Tape tape;
      Value loss = training_loss(tape, model_, t, batch.xs, batch.ys, prev, fe_extra, alpha,
                                 e2e_retro);
      double lv = tape.value(loss).item();
      check_finite(lv, "main", t, epoch);
      tape.backward(loss);
      opt.step();
      epoch_loss += lv * static_cast<double>(end - begin);
    }
    epoch_loss /= static_cast<double>(task.train_x.size());

    double val_loss = 0.0;
    for (std::size_t begin = 0; begin < task.val_x.size(); begin += cfg_.batch_size) {
      std::size_t end = std::min(task.val_x.size(), begin + cfg_.batch_size);
      std::vector<const Tensor*> xs;
      std::vector<std::size_t> ys;
      for (std::size_t i = begin; i < end; ++i) {
        xs.push_back(&task.val_x[i]);
        ys.push_back(task.local_class(task.val_y[i]));
      }
      Tape tape(false);
      Value loss = training_loss(tape, model_, t, xs, ys, prev, {}, alpha, e2e_retro);
      val_loss += tape.value(loss).item() * static_cast<double>(end - begin);
    }
    if (!task.val_x.empty()) val_loss /= static_cast<double>(task.val_x.size());
    opt.set_lr(opt.lr() * sched.observe(val_loss));
    log_.push_back({"main", t, epoch, epoch_loss, opt.lr()});
  }
}

AuxiliaryExtractor ContinualTrainer::distill_aux(const FeatureExtractor& target,
                                                 const TaskDataset& task) {
  int t = task.task_id;
  AuxiliaryExtractor aux = model_.make_aux();
  std::size_t feature_dim = target.feature_dim();
  // Throwaway adapter used only to compare against the target space when the
  // dimensions differ; discarded after distillation.
  std::optional<Affine> adapter;
  if (aux.out_dim() != feature_dim) {
    adapter.emplace(aux.out_dim(), feature_dim, model_.init_rng());
  }

  std::vector<Parameter*> params = collect_params([&](const ParamVisitor& cb) {
    aux.visit("distill.aux", cb);
    if (adapter) adapter->visit("distill.adapter", cb);
  });
  AdamOptimizer opt(params, cfg_.lr_retro);
  PlateauScheduler sched(cfg_.lr_decay, cfg_.patience);

  BatchFeatureFn estimate = [&](Tape& tape, const std::vector<const Tensor*>& xs) {
    Value h = aux.forward_batch(tape, xs);
    return adapter ? (*adapter)(tape, h) : h;
  };
  BatchFeatureFn target_fn = [&](Tape& tape, const std::vector<const Tensor*>& xs) {
    return target.forward_batch(tape, xs);
  };

  for (int epoch = 1; epoch <= cfg_.epochs_aux; ++epoch) {
    auto order = shuffled_indices(task.train_x.size(),
                                  derive_seed(cfg_.seed, "aux-epoch", t, epoch));
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
      std::size_t end = std::min(order.size(), begin + cfg_.batch_size);
      std::vector<const Tensor*> xs;
      for (std::size_t i = begin; i < end; ++i) xs.push_back(&task.train_x[order[i]]);
      opt.zero_grad();
      Tape tape;
      Value loss = feature_estimation_loss(tape, estimate, target_fn, xs);
      double lv = tape.value(loss).item();
      check_finite(lv, "aux", t, epoch);
      tape.backward(loss);
      opt.step();
      epoch_loss += lv * static_cast<double>(end - begin);
    }
    epoch_loss /= static_cast<double>(task.train_x.size());

    double val_loss = 0.0;
    for (std::size_t begin = 0; begin < task.val_x.size(); begin += cfg_.batch_size) {
      std::size_t end = std::min(task.val_x.size(), begin + cfg_.batch_size);
      std::vector<const Tensor*> xs;
      for (std::size_t i = begin; i < end; ++i) xs.push_back(&task.val_x[i]);
      Tape tape(false);
      val_loss +=
          tape.value(feature_estimation_loss(tape, estimate, target_fn, xs)).item() *
          static_cast<double>(end - begin);
    }
    if (!task.val_x.empty()) val_loss /= static_cast<double>(task.val_x.size());
    opt.set_lr(opt.lr() * sched.observe(val_loss));
    log_.push_back({"aux", t, epoch, epoch_loss, opt.lr()});
  }
  aux.freeze();
  return aux;
}

void ContinualTrainer::train_retrospector(const TaskDataset& task) {
  int t = task.task_id;
  Retrospector& retro = model_.retrospector(t);
  const FeatureExtractor* prev = model_.prev_extractor.get();
  if (!prev) throw InvalidArgument("retrospector training requires the frozen predecessor");

  model_.extractor->set_trainable(false);  // f_t is frozen while r_t trains

  // Buffer entries whose native domain predates task t feed the chained
  // rectification term, which also tunes the earlier retrospectors.
  std::vector<std::size_t> old_items;
  if (strategy_.keeps_buffer()) {
    for (std::size_t i = 0; i < store_.size(); ++i) {
      if (store_.entries()[i].task < t && store_.entries()[i].has_feature()) {
        old_items.push_back(i);
      }
    }
  }
  bool chained = !old_items.empty();

  std::vector<Parameter*> params = collect_params([&](const ParamVisitor& cb) {
    retro.visit_trainable("r.task" + std::to_string(t), cb);
    if (chained) {
      for (Retrospector& r : model_.retrospectors) {
        if (r.task < t) r.visit_trainable("r.task" + std::to_string(r.task), cb);
      }
    }
  });
  AdamOptimizer opt(params, cfg_.lr_retro);
  PlateauScheduler sched(cfg_.lr_decay, cfg_.patience);

  // Training pool: current task data plus stored exemplars.
  std::size_t n_task = task.train_x.size();
  std::size_t n_pool = n_task + store_.size();

  auto pool_x = [&](std::size_t i) -> const Tensor* {
    return i < n_task ? &task.train_x[i] : &store_.entries()[i - n_task].x;
  };

  for (int epoch = 1; epoch <= cfg_.epochs_retro; ++epoch) {
    auto order = shuffled_indices(n_pool, derive_seed(cfg_.seed, "retro-epoch", t, epoch));
    std::vector<std::size_t> chain_order;
    std::size_t chain_cursor = 0;
    if (chained) {
      chain_order = shuffled_indices(old_items.size(),
                                     derive_seed(cfg_.seed, "retro-chain", t, epoch));
    }
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < n_pool; begin += cfg_.batch_size) {
      std::size_t end = std::min(n_pool, begin + cfg_.batch_size);
      std::vector<const Tensor*> xs;
      for (std::size_t i = begin; i < end; ++i) xs.push_back(pool_x(order[i]));

      opt.zero_grad();
      Tape tape;
      Value f_now = model_.extract_batch(tape, xs);
      Value est = retro.rectify(tape, f_now, xs);
      Tensor detached;
      {
        Tape no_grad(false);
        detached = no_grad.value(prev->forward_batch(no_grad, xs));
      }
      Value loss = tape.mse_sum(est, tape.constant(std::move(detached)));

      if (chained) {
        std::size_t n_chain = std::min<std::size_t>(end - begin, old_items.size());
        std::map<int, std::vector<const ExemplarEntry*>> groups;
        for (std::size_t i = 0; i < n_chain; ++i) {
          const ExemplarEntry& e = store_.entries()[old_items[chain_order[chain_cursor]]];
          chain_cursor = (chain_cursor + 1) % chain_order.size();
          groups[e.task].push_back(&e);
        }
        for (const auto& [domain, items] : groups) {
          std::vector<const Tensor*> cxs;
          Tensor targets({items.size(), model_.extractor->feature_dim()});
          for (std::size_t i = 0; i < items.size(); ++i) {
            cxs.push_back(&items[i]->x);
            std::copy(items[i]->feature.data.begin(), items[i]->feature.data.end(),
                      targets.data.begin() + i * targets.shape[1]);
          }
          Value f = model_.extract_batch(tape, cxs);
          for (int j = t; j > domain; --j) {
            f = model_.retrospector(j).rectify(tape, f, cxs);
          }
          Value part = tape.mse_sum(f, tape.constant(std::move(targets)));
          double weight = static_cast<double>(items.size()) / static_cast<double>(n_chain);
          loss = tape.add(loss, tape.scale(part, weight));
        }
      }

      double lv = tape.value(loss).item();
      check_finite(lv, "retro", t, epoch);
      tape.backward(loss);
      opt.step();
      epoch_loss += lv * static_cast<double>(end - begin);
    }
    epoch_loss /= static_cast<double>(n_pool);

    double val_loss = 0.0;
    for (std::size_t begin = 0; begin < task.val_x.size(); begin += cfg_.batch_size) {
      std::size_t end = std::min(task.val_x.size(), begin + cfg_.batch_size);
      std::vector<const Tensor*> xs;
      for (std::size_t i = begin; i < end; ++i) xs.push_back(&task.val_x[i]);
      Tape tape(false);
      Value f_now = model_.extract_batch(tape, xs);
      Value est = retro.rectify(tape, f_now, xs);
      Value tgt = prev->forward_batch(tape, xs);
      val_loss += tape.value(tape.mse_sum(est, tgt)).item() * static_cast<double>(end - begin);
    }
    if (!task.val_x.empty()) val_loss /= static_cast<double>(task.val_x.size());
    opt.set_lr(opt.lr() * sched.observe(val_loss));
    log_.push_back({"retro", t, epoch, epoch_loss, opt.lr()});
  }
  model_.extractor->set_trainable(true);
}

void ContinualTrainer::update_buffer(const TaskDataset& task) {
  for (std::size_t i = 0; i < task.train_x.size(); ++i) {
    ExemplarEntry e;
    e.x = task.train_x[i];
    e.task = task.task_id;
    e.label = task.train_y[i];
    store_.stream_insert(std::move(e));
  }
  // Native-domain features for the entries that survived, computed once
  // under the just-trained extractor.
  for (ExemplarEntry& e : store_.entries()) {
    if (e.task == task.task_id && !e.has_feature()) e.feature = features_of(e.x);
  }
}

void ContinualTrainer::refill_subset(const TaskDataset& task) {
  auto order = shuffled_indices(task.train_x.size(),
                                derive_seed(cfg_.seed, "subset", task.task_id));
  std::size_t n = std::min<std::size_t>(strategy_.capacity, task.train_x.size());
  std::vector<ExemplarEntry> entries;
  entries.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ExemplarEntry e;
    e.x = task.train_x[order[i]];
    e.task = task.task_id;
    e.label = task.train_y[order[i]];
    e.feature = features_of(e.x);
    entries.push_back(std::move(e));
  }
  store_.replace_with(std::move(entries));
}

void ContinualTrainer::learn_oracle(const TaskStream& stream) {
  if (model_.tasks_learned != 0) {
    throw InvalidArgument("oracle training starts from an untrained model");
  }
  for (const TaskDataset& task : stream.tasks) model_.add_head(task.num_classes());

  model_.extractor->set_trainable(true);
  std::vector<Parameter*> params = collect_params([&](const ParamVisitor& cb) {
    model_.extractor->visit("f", cb);
    for (std::size_t i = 0; i < model_.heads.size(); ++i) {
      model_.heads[i].visit("w.task" + std::to_string(i + 1), cb);
    }
  });
  AdamOptimizer opt(params, cfg_.lr_main);
  PlateauScheduler sched(cfg_.lr_decay, cfg_.patience);

  std::vector<std::pair<int, std::size_t>> all;
  for (const TaskDataset& task : stream.tasks) {
    for (std::size_t i = 0; i < task.train_x.size(); ++i) all.emplace_back(task.task_id, i);
  }

  for (int epoch = 1; epoch <= cfg_.epochs_main; ++epoch) {
    auto order = shuffled_indices(all.size(), derive_seed(cfg_.seed, "oracle-epoch", epoch));
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
      std::size_t end = std::min(order.size(), begin + cfg_.batch_size);
      std::map<int, Batch> by_task;
      for (std::size_t i = begin; i < end; ++i) {
        auto [tid, idx] = all[order[i]];
        const TaskDataset& ds = stream.task(tid);
        Batch& b = by_task[tid];
        b.xs.push_back(&ds.train_x[idx]);
        b.ys.push_back(ds.local_class(ds.train_y[idx]));
      }
      opt.zero_grad();
      Tape tape;
      Value loss{};
      bool first = true;
      double n_batch = static_cast<double>(end - begin);
      for (const auto& [tid, b] : by_task) {
        Value feats = model_.extract_batch(tape, b.xs);
        Value ce = tape.cross_entropy_mean(model_.classify(tape, feats, tid), b.ys);
        Value part = tape.scale(ce, static_cast<double>(b.xs.size()) / n_batch);
        loss = first ? part : tape.add(loss, part);
        first = false;
      }
      double lv = tape.value(loss).item();
      check_finite(lv, "oracle", 0, epoch);
      tape.backward(loss);
      opt.step();
      epoch_loss += lv * n_batch;
    }
    epoch_loss /= static_cast<double>(all.size());

    double val_loss = 0.0;
    std::size_t val_n = 0;
    for (const TaskDataset& task : stream.tasks) {
      for (std::size_t begin = 0; begin < task.val_x.size(); begin += cfg_.batch_size) {
        std::size_t end = std::min(task.val_x.size(), begin + cfg_.batch_size);
        std::vector<const Tensor*> xs;
        std::vector<std::size_t> ys;
        for (std::size_t i = begin; i < end; ++i) {
          xs.push_back(&task.val_x[i]);
          ys.push_back(task.local_class(task.val_y[i]));
        }
        Tape tape(false);
        Value feats = model_.extract_batch(tape, xs);
        Value ce = tape.cross_entropy_mean(model_.classify(tape, feats, task.task_id), ys);
        val_loss += tape.value(ce).item() * static_cast<double>(end - begin);
        val_n += end - begin;
      }
    }
    if (val_n) val_loss /= static_cast<double>(val_n);
    opt.set_lr(opt.lr() * sched.observe(val_loss));
    log_.push_back({"oracle", 0, epoch, epoch_loss, opt.lr()});
  }
  model_.tasks_learned = stream.num_tasks();
}

}  // namespace rfe
