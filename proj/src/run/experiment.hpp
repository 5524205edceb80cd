#pragma once

#include <map>
#include <string>

#include "engine/engine.hpp"
#include "metrics/metrics.hpp"

namespace rfe {

struct StreamSpec {
  enum class Kind { Blob, File };
  Kind kind = Kind::Blob;
  BlobStreamConfig blob;
  std::string path;   // file kind
  int file_tasks = 5; // file kind
};

struct EvalFlags {
  bool til = true;
  bool cil = true;
  bool rmse = false;
  bool pca = false;
};

struct ExperimentConfig {
  StreamSpec stream;
  ExtractorKind extractor_kind = ExtractorKind::Mlp;
  std::size_t feature_dim = 512;
  std::size_t aux_dim = 128;
  std::size_t joint_dim = 128;
  std::vector<std::size_t> hidden = {256, 256};
  std::vector<std::size_t> channels = {32, 64};
  RetroKind retro_kind = RetroKind::Gated;
  StrategyConfig strategy;
  TrainConfig train;
  EvalFlags eval;
  std::uint64_t seed = 1;
  std::string out_dir = "out";
};

// Flat sectioned key-value config; keys are "section.key". The exact grammar
// is documented in the README.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_config_text(const std::string& text, const std::string& origin);
KeyValues parse_config_file(const std::string& path);

// Applies a KEY=VALUE override; KEY must be section.key.
void apply_override(KeyValues& kv, const std::string& key, const std::string& value);

// Validates and converts; throws ConfigError naming the offending field.
ExperimentConfig build_config(const KeyValues& kv);

// FNV-1a over the canonical "section.key=value" serialization.
std::string config_hash(const KeyValues& kv);

// Builds the configured stream and applies task-1 standardization.
TaskStream build_stream(const ExperimentConfig& cfg);

ModelConfig model_config_for(const ExperimentConfig& cfg, const Shape& input_shape);

// Executes the full experiment: sequential (or oracle) training, per-task
// evaluation, and all artifacts under cfg.out_dir (metrics CSVs, training
// log, checkpoint, manifest, optional snapshots and PCA exports).
void run_experiment(const ExperimentConfig& cfg, const KeyValues& canonical);

// Re-evaluates a checkpoint against the configured stream without training;
// writes the final-row metrics into cfg.out_dir.
void eval_checkpoint(const ExperimentConfig& cfg, const KeyValues& canonical,
                     const std::string& checkpoint_path);

// PCA export for one evaluated task from a finished run directory.
void export_pca_from_run(const ExperimentConfig& cfg, const std::string& run_dir, int eval_task);

// Parameter counts and strategy-matrix conformance, as printable text.
std::string inspect_config(const ExperimentConfig& cfg);

int eval_threads_from_env();

}  // namespace rfe
