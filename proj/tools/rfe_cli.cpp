// Experiment driver over the librfe C API.
//
// Subcommands: run, eval, export-pca, inspect. Exit codes: 0 ok, 1 runtime
// failure, 2 config error, 3 divergence, 4 I/O error.

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rfe/rfe.h"

namespace {

struct ExperimentCloser {
  void operator()(rfe_experiment_t* e) const { rfe_experiment_close(e); }
};
using ExperimentPtr = std::unique_ptr<rfe_experiment_t, ExperimentCloser>;

int report(rfe_status_t status) {
  if (status != RFE_OK) {
    std::fprintf(stderr, "rfe: %s\n", rfe_last_error());
  }
  return static_cast<int>(status);
}

struct CommonArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "experiment config file")->required();
    cmd->add_option("--override", overrides, "config override KEY=VALUE (repeatable)");
    cmd->add_option("--seed", seed, "random seed")->each([this](const std::string&) {
      seed_set = true;
    });
    cmd->add_option("--out", out, "output directory");
  }

  rfe_status_t open(ExperimentPtr& exp) const {
    rfe_experiment_t* raw = nullptr;
    rfe_status_t st = rfe_experiment_open(config.c_str(), &raw);
    if (st != RFE_OK) return st;
    exp.reset(raw);
    for (const std::string& ov : overrides) {
      std::size_t eq = ov.find('=');
      if (eq == std::string::npos) {
        std::fprintf(stderr, "rfe: override '%s' must be KEY=VALUE\n", ov.c_str());
        return RFE_ERR_CONFIG;
      }
      st = rfe_experiment_override(exp.get(), ov.substr(0, eq).c_str(),
                                   ov.substr(eq + 1).c_str());
      if (st != RFE_OK) return st;
    }
    if (seed_set) {
      st = rfe_experiment_set_seed(exp.get(), seed);
      if (st != RFE_OK) return st;
    }
    if (!out.empty()) {
      st = rfe_experiment_set_out_dir(exp.get(), out.c_str());
      if (st != RFE_OK) return st;
    }
    return RFE_OK;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrospective feature estimation experiments"};
  app.require_subcommand(1);

  CommonArgs run_args, eval_args, pca_args, inspect_args;
  std::string checkpoint, run_dir;
  int eval_task = 1;

  CLI::App* cmd_run = app.add_subcommand("run", "train and evaluate an experiment");
  run_args.attach(cmd_run);

  CLI::App* cmd_eval = app.add_subcommand("eval", "re-evaluate a saved checkpoint");
  eval_args.attach(cmd_eval);
  cmd_eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  CLI::App* cmd_pca = app.add_subcommand("export-pca", "export PCA latent coordinates");
  pca_args.attach(cmd_pca);
  cmd_pca->add_option("--run-dir", run_dir, "finished run directory")->required();
  cmd_pca->add_option("--task", eval_task, "evaluated task id");

  CLI::App* cmd_inspect = app.add_subcommand("inspect", "print parameter counts and strategy");
  inspect_args.attach(cmd_inspect);

  CLI11_PARSE(app, argc, argv);

  ExperimentPtr exp;
  if (cmd_run->parsed()) {
    rfe_status_t st = run_args.open(exp);
    if (st != RFE_OK) return report(st);
    return report(rfe_experiment_run(exp.get()));
  }
  if (cmd_eval->parsed()) {
    rfe_status_t st = eval_args.open(exp);
    if (st != RFE_OK) return report(st);
    return report(rfe_experiment_eval(exp.get(), checkpoint.c_str()));
  }
  if (cmd_pca->parsed()) {
    rfe_status_t st = pca_args.open(exp);
    if (st != RFE_OK) return report(st);
    return report(rfe_experiment_export_pca(exp.get(), run_dir.c_str(), eval_task));
  }
  if (cmd_inspect->parsed()) {
    rfe_status_t st = inspect_args.open(exp);
    if (st != RFE_OK) return report(st);
    char* text = nullptr;
    st = rfe_experiment_inspect(exp.get(), &text);
    if (st == RFE_OK && text) {
      std::fputs(text, stdout);
    }
    rfe_string_free(text);
    return report(st);
  }
  return 1;
}
