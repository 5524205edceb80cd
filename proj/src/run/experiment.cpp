#include "run/experiment.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace rfe {

namespace fs = std::filesystem;

KeyValues parse_config_text(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  auto trim = [](std::string s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    std::size_t e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#' || s[0] == ';') continue;
    if (s.front() == '[') {
      if (s.back() != ']' || s.size() < 3) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
      }
      section = trim(s.substr(1, s.size() - 2));
      continue;
    }
    std::size_t eq = s.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (section.empty() || key.empty()) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": key outside a section");
    }
    kv[section + "." + key] = value;
  }
  return kv;
}

KeyValues parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << is.rdbuf();
  return parse_config_text(buf.str(), path);
}

void apply_override(KeyValues& kv, const std::string& key, const std::string& value) {
  if (key.find('.') == std::string::npos) {
    throw ConfigError("override key '" + key + "' must be section.key");
  }
  kv[key] = value;
}

namespace {

struct ConfigReader {
  const KeyValues& kv;
  mutable std::map<std::string, bool> consumed;

  std::string get(const std::string& key, const std::string& def) const {
    consumed[key] = true;
    auto it = kv.find(key);
    return it == kv.end() ? def : it->second;
  }
  bool has(const std::string& key) const {
    consumed[key] = true;
    return kv.count(key) != 0;
  }
  std::int64_t get_int(const std::string& key, std::int64_t def) const {
    std::string v = get(key, std::to_string(def));
    std::int64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) {
      throw ConfigError("field '" + key + "': expected an integer, got '" + v + "'");
    }
    return out;
  }
  std::uint64_t get_u64(const std::string& key, std::uint64_t def) const {
    std::int64_t v = get_int(key, static_cast<std::int64_t>(def));
    if (v < 0) throw ConfigError("field '" + key + "': must be non-negative");
    return static_cast<std::uint64_t>(v);
  }
  double get_double(const std::string& key, double def) const {
    std::string v = get(key, format_g17(def));
    try {
      std::size_t pos = 0;
      double out = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument(v);
      return out;
    } catch (const std::exception&) {
      throw ConfigError("field '" + key + "': expected a number, got '" + v + "'");
    }
  }
  bool get_bool(const std::string& key, bool def) const {
    std::string v = get(key, def ? "true" : "false");
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("field '" + key + "': expected true/false, got '" + v + "'");
  }
  std::vector<std::size_t> get_list(const std::string& key,
                                    const std::vector<std::size_t>& def) const {
    if (!has(key)) return def;
    std::string v = get(key, "");
    std::vector<std::size_t> out;
    std::istringstream is(v);
    std::string part;
    while (std::getline(is, part, ',')) {
      try {
        long n = std::stol(part);
        if (n <= 0) throw std::invalid_argument(part);
        out.push_back(static_cast<std::size_t>(n));
      } catch (const std::exception&) {
        throw ConfigError("field '" + key + "': expected comma-separated positive integers");
      }
    }
    if (out.empty()) throw ConfigError("field '" + key + "': empty list");
    return out;
  }
};

const char* kKnownKeys[] = {
    "stream.kind",        "stream.tasks",          "stream.classes_per_task",
    "stream.input_dim",   "stream.samples_per_class", "stream.test_per_class",
    "stream.separation",  "stream.noise",          "stream.drift",
    "stream.path",        "model.extractor",       "model.feature_dim",
    "model.aux_dim",      "model.joint_dim",       "model.retrospector",
    "model.hidden",       "model.channels",        "strategy.kind",
    "strategy.capacity",  "strategy.alpha",        "strategy.end_to_end",
    "train.epochs_main",  "train.epochs_aux",      "train.epochs_retro",
    "train.lr_main",      "train.lr_retro",        "train.lr_decay",
    "train.patience",     "train.batch_size",      "eval.til",
    "eval.cil",           "eval.rmse",             "eval.pca",
    "run.seed",           "run.out",
};

}  // namespace

ExperimentConfig build_config(const KeyValues& kv) {
  for (const auto& [key, value] : kv) {
    bool known = false;
    for (const char* k : kKnownKeys) known = known || key == k;
    if (!known) throw ConfigError("unknown config field '" + key + "'");
    (void)value;
  }
  ConfigReader r{kv, {}};
  ExperimentConfig cfg;

  std::string stream_kind = r.get("stream.kind", "blob");
  if (stream_kind == "blob") {
    cfg.stream.kind = StreamSpec::Kind::Blob;
    cfg.stream.blob.n_tasks = static_cast<int>(r.get_int("stream.tasks", 5));
    cfg.stream.blob.classes_per_task = static_cast<int>(r.get_int("stream.classes_per_task", 2));
    cfg.stream.blob.dim = r.get_u64("stream.input_dim", 20);
    cfg.stream.blob.samples_per_class = r.get_u64("stream.samples_per_class", 200);
    cfg.stream.blob.test_per_class = r.get_u64("stream.test_per_class", 50);
    cfg.stream.blob.separation = r.get_double("stream.separation", 6.0);
    cfg.stream.blob.noise = r.get_double("stream.noise", 1.0);
    cfg.stream.blob.drift = r.get_double("stream.drift", 0.5);
  } else if (stream_kind == "file") {
    cfg.stream.kind = StreamSpec::Kind::File;
    cfg.stream.path = r.get("stream.path", "");
    if (cfg.stream.path.empty()) throw ConfigError("field 'stream.path': required for file streams");
    cfg.stream.file_tasks = static_cast<int>(r.get_int("stream.tasks", 5));
  } else {
    throw ConfigError("field 'stream.kind': expected blob or file, got '" + stream_kind + "'");
  }

  std::string extractor = r.get("model.extractor", "mlp");
  if (extractor == "mlp") {
    cfg.extractor_kind = ExtractorKind::Mlp;
  } else if (extractor == "conv") {
    cfg.extractor_kind = ExtractorKind::SmallConvNet;
  } else {
    throw ConfigError("field 'model.extractor': expected mlp or conv, got '" + extractor + "'");
  }
  cfg.feature_dim = r.get_u64("model.feature_dim", 512);
  cfg.aux_dim = r.get_u64("model.aux_dim", 128);
  cfg.joint_dim = r.get_u64("model.joint_dim", 128);
  cfg.hidden = r.get_list("model.hidden", {256, 256});
  cfg.channels = r.get_list("model.channels", {32, 64});
  if (cfg.feature_dim < 1 || cfg.aux_dim < 1 || cfg.joint_dim < 1) {
    throw ConfigError("field 'model.*_dim': dimensions must be positive");
  }

  std::string retro = r.get("model.retrospector", "gated");
  if (retro == "gated") {
    cfg.retro_kind = RetroKind::Gated;
  } else if (retro == "mlp_projection") {
    cfg.retro_kind = RetroKind::MlpProjection;
  } else if (retro == "mlp_residual") {
    cfg.retro_kind = RetroKind::MlpResidual;
  } else {
    throw ConfigError("field 'model.retrospector': unknown kind '" + retro + "'");
  }

  std::string strat = r.get("strategy.kind", "rfe");
  auto kind = parse_strategy(strat);
  if (!kind) throw ConfigError("field 'strategy.kind': unknown strategy '" + strat + "'");
  cfg.strategy.kind = *kind;
  cfg.strategy.capacity = r.get_u64("strategy.capacity", 0);
  cfg.strategy.alpha = r.get_double("strategy.alpha", 1.0);
  cfg.strategy.end_to_end = r.get_bool("strategy.end_to_end", false);
  cfg.strategy.validate();

  cfg.train.epochs_main = static_cast<int>(r.get_int("train.epochs_main", 40));
  cfg.train.epochs_aux = static_cast<int>(r.get_int("train.epochs_aux", 40));
  cfg.train.epochs_retro = static_cast<int>(r.get_int("train.epochs_retro", 40));
  cfg.train.lr_main = r.get_double("train.lr_main", 5e-4);
  cfg.train.lr_retro = r.get_double("train.lr_retro", 5e-3);
  cfg.train.lr_decay = r.get_double("train.lr_decay", 0.1);
  cfg.train.patience = static_cast<int>(r.get_int("train.patience", 3));
  cfg.train.batch_size = r.get_u64("train.batch_size", 32);
  cfg.train.validate();

  cfg.eval.til = r.get_bool("eval.til", true);
  cfg.eval.cil = r.get_bool("eval.cil", true);
  cfg.eval.rmse = r.get_bool("eval.rmse", false);
  cfg.eval.pca = r.get_bool("eval.pca", false);

  cfg.seed = r.get_u64("run.seed", 1);
  cfg.out_dir = r.get("run.out", "out");
  cfg.train.seed = cfg.seed;
  return cfg;
}

std::string config_hash(const KeyValues& kv) {
  std::string canonical;
  for (const auto& [key, value] : kv) {
    if (key == "run.out") continue;  // output location is not part of the experiment identity
    canonical += key;
    canonical += '=';
    canonical += value;
    canonical += '\n';
  }
  std::uint64_t h = hash_tag(canonical);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TaskStream build_stream(const ExperimentConfig& cfg) {
  TaskStream stream = cfg.stream.kind == StreamSpec::Kind::Blob
                          ? make_blob_stream(cfg.stream.blob, cfg.seed)
                          : split_labeled_file(cfg.stream.path, cfg.stream.file_tasks, cfg.seed);
  if (stream.num_tasks() < 1) throw ConfigError("stream has no tasks");
  Standardizer std_ = Standardizer::fit(stream.task(1).train_x);
  std_.apply_in_place(stream);
  return stream;
}

ModelConfig model_config_for(const ExperimentConfig& cfg, const Shape& input_shape) {
  ModelConfig mc;
  mc.extractor.kind = cfg.extractor_kind;
  mc.extractor.input_shape = input_shape;
  mc.extractor.feature_dim = cfg.feature_dim;
  mc.extractor.hidden = cfg.hidden;
  mc.extractor.channels = cfg.channels;
  mc.aux_dim = cfg.aux_dim;
  mc.joint_dim = cfg.joint_dim;
  mc.retro_kind = cfg.retro_kind;
  return mc;
}

int eval_threads_from_env() {
  const char* env = std::getenv("RFE_THREADS");
  if (!env) return 0;  // auto
  try {
    int n = std::stoi(env);
    return n > 0 ? n : 1;
  } catch (const std::exception&) {
    return 0;
  }
}

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
}

void write_training_log(const std::string& path, const std::vector<EpochRecord>& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  for (const EpochRecord& r : log) {
    os << "stage=" << r.stage << " task=" << r.task << " epoch=" << r.epoch
       << " loss=" << format_g17(r.loss) << " lr=" << format_g17(r.lr) << '\n';
  }
}

void write_predictions_csv(const std::string& path, const std::vector<SampleRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "setting,task_id,sample_index,true_label,pred_label\n";
  for (const SampleRecord& r : records) {
    os << r.setting << ',' << r.task_id << ',' << r.sample_index << ',' << r.true_label << ','
       << r.pred_label << '\n';
  }
}

void write_cil_probabilities_csv(const std::string& path, const EvalOutput& out) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  std::size_t k = out.cil_probabilities.empty() ? 0 : out.cil_probabilities[0].size();
  os << "eval_task,sample_index";
  for (std::size_t i = 0; i < k; ++i) os << ",p" << i;
  os << '\n';
  std::size_t row = 0;
  for (const SampleRecord& r : out.records) {
    if (std::string_view(r.setting) != "CIL") continue;
    os << r.task_id << ',' << r.sample_index;
    for (std::size_t i = 0; i < k; ++i) os << ',' << format_g17(out.cil_probabilities[row][i]);
    os << '\n';
    ++row;
  }
}

std::string snapshot_path(const std::string& dir, int task) {
  return dir + "/task" + std::to_string(task) + ".rfew";
}

void save_extractor_snapshot(FeatureExtractor& extractor, const std::string& path) {
  std::vector<NamedTensor> tensors;
  extractor.visit("f", [&](const std::string& name, Parameter& p) {
    tensors.push_back({name, p.value});
  });
  save_weights(path, tensors);
}

std::unique_ptr<FeatureExtractor> load_extractor_snapshot(const ExperimentConfig& cfg,
                                                          const Shape& input_shape,
                                                          const std::string& path) {
  Rng rng(0);
  auto extractor = make_extractor(model_config_for(cfg, input_shape).extractor, rng);
  std::map<std::string, Tensor> by_name;
  for (NamedTensor& nt : load_weights(path)) by_name[nt.name] = std::move(nt.tensor);
  extractor->visit("f", [&](const std::string& name, Parameter& p) {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      throw InvalidArgument("snapshot '" + path + "' is missing tensor '" + name + "'");
    }
    if (it->second.shape != p.value.shape) {
      throw ConfigError("snapshot tensor '" + name + "' has unexpected shape");
    }
    p.value = std::move(it->second);
  });
  extractor->set_trainable(false);
  return extractor;
}

nlohmann::json manifest_json(const ExperimentConfig& cfg, const KeyValues& canonical,
                             ContinualModel& model) {
  nlohmann::json j;
  j["config_hash"] = config_hash(canonical);
  j["seed"] = cfg.seed;
  j["tasks_learned"] = model.tasks_learned;
  j["strategy"] = {{"kind", strategy_name(cfg.strategy.kind)},
                   {"capacity", cfg.strategy.capacity},
                   {"alpha", cfg.strategy.alpha},
                   {"end_to_end", cfg.strategy.end_to_end}};
  j["model"] = {{"feature_dim", cfg.feature_dim},
                {"aux_dim", cfg.aux_dim},
                {"joint_dim", cfg.joint_dim},
                {"retrospector", retro_kind_name(cfg.retro_kind)}};

  const Shape& input_shape = model.config.extractor.input_shape;
  std::size_t aux_params = aux_extractor_params(input_shape, cfg.aux_dim);
  std::size_t maps = cfg.retro_kind == RetroKind::Gated
                         ? gated_retrospector_params(cfg.feature_dim, cfg.aux_dim, cfg.joint_dim)
                         : mlp_retrospector_params(cfg.feature_dim, cfg.aux_dim);
  nlohmann::json counts;
  counts["extractor"] = model.extractor->param_count();
  std::vector<std::size_t> head_counts;
  for (Affine& h : model.heads) head_counts.push_back(h.param_count());
  counts["heads"] = head_counts;
  counts["per_retrospector"] = {{"total", maps + aux_params},
                                {"aux", aux_params},
                                {"mappings", maps}};
  std::vector<std::size_t> retro_counts;
  for (Retrospector& r : model.retrospectors) retro_counts.push_back(r.param_count());
  counts["retrospectors"] = retro_counts;
  counts["inference_total"] = model.inference_param_count();
  j["param_counts"] = counts;
  return j;
}

void export_pca_groups(const ExperimentConfig& cfg, const ContinualModel& model,
                       const std::vector<std::unique_ptr<FeatureExtractor>>& snapshots,
                       const TaskStream& stream, int eval_task, const std::string& out_path) {
  int n = model.tasks_learned;
  if (eval_task < 1 || eval_task > n) {
    throw InvalidArgument("pca export: task " + std::to_string(eval_task) + " out of range");
  }
  if (static_cast<std::size_t>(eval_task) > snapshots.size() || !snapshots[eval_task - 1]) {
    throw InvalidArgument("pca export: missing snapshot for task " + std::to_string(eval_task));
  }
  const TaskDataset& ds = stream.task(eval_task);
  std::vector<Tensor> original, drifted, rectified;
  bool rect = cfg.strategy.is_rfe_family() && eval_task < n;
  for (const Tensor& x : ds.test_x) {
    {
      Tape tape(false);
      original.push_back(tape.value(snapshots[eval_task - 1]->forward(tape, x)));
    }
    if (rect) {
      RectificationTrace trace = rectify_chain(model, x, eval_task);
      drifted.push_back(trace.features.front());
      rectified.push_back(trace.features.back());
    } else {
      Tape tape(false);
      drifted.push_back(tape.value(model.extract(tape, x)));
    }
  }
  std::vector<const Tensor*> all;
  std::vector<std::string> sources;
  for (const Tensor& v : original) {
    all.push_back(&v);
    sources.push_back("original");
  }
  for (const Tensor& v : drifted) {
    all.push_back(&v);
    sources.push_back("drifted");
  }
  for (const Tensor& v : rectified) {
    all.push_back(&v);
    sources.push_back("rectified");
  }
  PcaResult pca = pca_project(all, 2, cfg.seed);
  write_pca_csv(out_path, sources, pca);
}

}  // namespace

void run_experiment(const ExperimentConfig& cfg, const KeyValues& canonical) {
  ensure_dir(cfg.out_dir);
  TaskStream stream = build_stream(cfg);
  ModelConfig mc = model_config_for(cfg, stream.input_shape);
  ContinualModel model(mc, cfg.seed);
  ContinualTrainer trainer(model, cfg.strategy, cfg.train);

  bool want_snapshots = cfg.eval.rmse || cfg.eval.pca;
  std::string snap_dir = cfg.out_dir + "/snapshots";
  if (want_snapshots) ensure_dir(snap_dir);

  EvalSettings settings;
  settings.til = cfg.eval.til;
  settings.cil = cfg.eval.cil;
  settings.use_rectification = cfg.strategy.is_rfe_family();
  settings.threads = eval_threads_from_env();

  AccuracyMatrix til{"TIL", {}};
  AccuracyMatrix cil{"CIL", {}};
  RmseMatrix drifted{"drifted", {}};
  RmseMatrix rectified{"rectified", {}};
  std::vector<std::unique_ptr<FeatureExtractor>> snapshots;
  EvalOutput last_eval;

  auto after_task = [&](int t) {
    if (want_snapshots) {
      snapshots.push_back(model.extractor->clone());
      snapshots.back()->set_trainable(false);
      save_extractor_snapshot(*snapshots.back(), snapshot_path(snap_dir, t));
    }
    last_eval = evaluate(model, stream, t, settings);
    if (settings.til) til.add_row(last_eval.til_accuracy);
    if (settings.cil) cil.add_row(last_eval.cil_accuracy);
    if (cfg.eval.rmse) {
      drifted.rows.push_back(feature_rmse_row(model, snapshots, stream, t, false));
      if (cfg.strategy.is_rfe_family()) {
        rectified.rows.push_back(feature_rmse_row(model, snapshots, stream, t, true));
      }
    }
  };

  if (cfg.strategy.kind == StrategyKind::Oracle) {
    trainer.learn_oracle(stream);
    after_task(stream.num_tasks());
    // Oracle trains jointly; only the final row exists.
    til.rows.insert(til.rows.begin(), static_cast<std::size_t>(stream.num_tasks()) - 1, {});
    if (settings.cil) {
      cil.rows.insert(cil.rows.begin(), static_cast<std::size_t>(stream.num_tasks()) - 1, {});
    }
  } else {
    for (const TaskDataset& task : stream.tasks) {
      trainer.learn_task(task);
      after_task(task.task_id);
    }
  }

  std::vector<const AccuracyMatrix*> mats;
  if (settings.til) mats.push_back(&til);
  if (settings.cil) mats.push_back(&cil);
  write_accuracy_csv(cfg.out_dir + "/accuracy.csv", mats);
  if (cfg.eval.rmse) {
    std::vector<const RmseMatrix*> rmats = {&drifted};
    if (cfg.strategy.is_rfe_family()) rmats.push_back(&rectified);
    write_rmse_csv(cfg.out_dir + "/rmse.csv", rmats);
  }
  write_predictions_csv(cfg.out_dir + "/predictions.csv", last_eval.records);
  if (settings.cil) {
    write_cil_probabilities_csv(cfg.out_dir + "/cil_probabilities.csv", last_eval);
  }
  write_training_log(cfg.out_dir + "/training_log.txt", trainer.log());
  model.save(cfg.out_dir + "/checkpoint.rfew");
  {
    std::ofstream os(cfg.out_dir + "/manifest.json", std::ios::trunc);
    if (!os) throw IoError("cannot write manifest");
    os << manifest_json(cfg, canonical, model).dump(2) << '\n';
  }
  if (cfg.eval.pca && cfg.strategy.is_rfe_family()) {
    for (int j = 1; j < stream.num_tasks(); ++j) {
      export_pca_groups(cfg, model, snapshots, stream, j,
                        cfg.out_dir + "/pca_task" + std::to_string(j) + ".csv");
    }
  }
}

void eval_checkpoint(const ExperimentConfig& cfg, const KeyValues& canonical,
                     const std::string& checkpoint_path) {
  ensure_dir(cfg.out_dir);
  TaskStream stream = build_stream(cfg);
  ModelConfig mc = model_config_for(cfg, stream.input_shape);
  ContinualModel model = ContinualModel::load(mc, checkpoint_path);
  int n = model.tasks_learned;
  if (n < 1) throw ConfigError("checkpoint has no learned tasks");
  if (n > stream.num_tasks()) {
    throw ConfigError("checkpoint was trained on more tasks than the configured stream");
  }

  EvalSettings settings;
  settings.til = cfg.eval.til;
  settings.cil = cfg.eval.cil;
  settings.use_rectification = cfg.strategy.is_rfe_family();
  settings.threads = eval_threads_from_env();

  EvalOutput out = evaluate(model, stream, n, settings);

  AccuracyMatrix til{"TIL", {}};
  AccuracyMatrix cil{"CIL", {}};
  til.rows.insert(til.rows.begin(), static_cast<std::size_t>(n) - 1, {});
  cil.rows.insert(cil.rows.begin(), static_cast<std::size_t>(n) - 1, {});
  if (settings.til) til.rows.push_back(out.til_accuracy);
  if (settings.cil) cil.rows.push_back(out.cil_accuracy);

  std::vector<const AccuracyMatrix*> mats;
  if (settings.til) mats.push_back(&til);
  if (settings.cil) mats.push_back(&cil);
  write_accuracy_csv(cfg.out_dir + "/accuracy.csv", mats);
  write_predictions_csv(cfg.out_dir + "/predictions.csv", out.records);
  if (settings.cil) write_cil_probabilities_csv(cfg.out_dir + "/cil_probabilities.csv", out);

  if (cfg.eval.rmse || cfg.eval.pca) {
    std::string snap_dir = fs::path(checkpoint_path).parent_path().string() + "/snapshots";
    std::vector<std::unique_ptr<FeatureExtractor>> snapshots;
    for (int t = 1; t <= n; ++t) {
      std::string p = snapshot_path(snap_dir, t);
      if (!fs::exists(p)) {
        throw InvalidArgument("missing extractor snapshot '" + p + "' for task " +
                              std::to_string(t));
      }
      snapshots.push_back(load_extractor_snapshot(cfg, stream.input_shape, p));
    }
    if (cfg.eval.rmse) {
      RmseMatrix drifted{"drifted", {}};
      RmseMatrix rectified{"rectified", {}};
      drifted.rows.insert(drifted.rows.begin(), static_cast<std::size_t>(n) - 1, {});
      drifted.rows.push_back(feature_rmse_row(model, snapshots, stream, n, false));
      std::vector<const RmseMatrix*> rmats = {&drifted};
      if (cfg.strategy.is_rfe_family()) {
        rectified.rows.insert(rectified.rows.begin(), static_cast<std::size_t>(n) - 1, {});
        rectified.rows.push_back(feature_rmse_row(model, snapshots, stream, n, true));
        rmats.push_back(&rectified);
      }
      write_rmse_csv(cfg.out_dir + "/rmse.csv", rmats);
    }
    if (cfg.eval.pca) {
      for (int j = 1; j < n; ++j) {
        export_pca_groups(cfg, model, snapshots, stream, j,
                          cfg.out_dir + "/pca_task" + std::to_string(j) + ".csv");
      }
    }
  }
  (void)canonical;
}

void export_pca_from_run(const ExperimentConfig& cfg, const std::string& run_dir, int eval_task) {
  ensure_dir(cfg.out_dir);
  TaskStream stream = build_stream(cfg);
  ModelConfig mc = model_config_for(cfg, stream.input_shape);
  ContinualModel model = ContinualModel::load(mc, run_dir + "/checkpoint.rfew");
  std::vector<std::unique_ptr<FeatureExtractor>> snapshots;
  for (int t = 1; t <= model.tasks_learned; ++t) {
    std::string p = snapshot_path(run_dir + "/snapshots", t);
    if (!fs::exists(p)) {
      throw InvalidArgument("missing extractor snapshot '" + p + "'");
    }
    snapshots.push_back(load_extractor_snapshot(cfg, stream.input_shape, p));
  }
  export_pca_groups(cfg, model, snapshots, stream, eval_task,
                    cfg.out_dir + "/pca_task" + std::to_string(eval_task) + ".csv");
}

std::string inspect_config(const ExperimentConfig& cfg) {
  TaskStream stream = build_stream(cfg);
  ModelConfig mc = model_config_for(cfg, stream.input_shape);
  Rng rng(0);
  auto extractor = make_extractor(mc.extractor, rng);
  AuxiliaryExtractor aux(mc.extractor.input_shape, cfg.aux_dim, rng);
  Retrospector retro(2, cfg.retro_kind, cfg.feature_dim, cfg.joint_dim, std::move(aux), rng);

  std::size_t aux_params = aux_extractor_params(mc.extractor.input_shape, cfg.aux_dim);
  std::ostringstream os;
  os << "stream: " << stream.num_tasks() << " tasks, input " << shape_str(stream.input_shape)
     << ", " << stream.total_classes() << " classes\n";
  os << "extractor: " << (cfg.extractor_kind == ExtractorKind::Mlp ? "mlp" : "conv")
     << " feature_dim=" << cfg.feature_dim << " params=" << extractor->param_count() << "\n";
  os << "head: per-task params="
     << (cfg.feature_dim * stream.task(1).num_classes() + stream.task(1).num_classes()) << "\n";
  os << "auxiliary extractor: dim(h)=" << cfg.aux_dim << " params=" << aux_params << "\n";
  os << "retrospector (" << retro_kind_name(cfg.retro_kind) << "): d=" << cfg.joint_dim
     << " params=" << retro.param_count() << " (aux " << aux_params << " + mappings "
     << retro.param_count_excl_aux() << ")\n";
  os << "strategy " << strategy_name(cfg.strategy.kind) << ": keep f_prev="
     << (cfg.strategy.keeps_prev_extractor() ? "yes" : "no")
     << " keep P=" << (cfg.strategy.keeps_subset() ? "yes" : "no")
     << " keep B=" << (cfg.strategy.keeps_buffer() ? "yes" : "no")
     << " capacity=" << cfg.strategy.capacity << " alpha=" << cfg.strategy.alpha
     << " end_to_end=" << (cfg.strategy.end_to_end ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace rfe
