#include "rfe/rfe.h"

#include <cstring>
#include <string>

#include "run/experiment.hpp"

// Opaque handle behind rfe_experiment_t: the raw key-value view plus the
// accumulated overrides; the typed config is built per action.
struct rfe_experiment {
  rfe::KeyValues kv;
};

namespace {

thread_local std::string g_last_error;

rfe_status_t fail(rfe_status_t code, const char* what) {
  g_last_error = what;
  return code;
}

template <class Fn>
rfe_status_t guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return RFE_OK;
  } catch (const rfe::ConfigError& e) {
    return fail(RFE_ERR_CONFIG, e.what());
  } catch (const rfe::DivergenceError& e) {
    return fail(RFE_ERR_DIVERGENCE, e.what());
  } catch (const rfe::IoError& e) {
    return fail(RFE_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(RFE_ERR_RUNTIME, e.what());
  }
}

rfe::ExperimentConfig build(const rfe_experiment* exp) { return rfe::build_config(exp->kv); }

}  // namespace

extern "C" {

const char* rfe_version(void) { return "1.0.0"; }

const char* rfe_last_error(void) { return g_last_error.c_str(); }

rfe_status_t rfe_experiment_open(const char* config_path, rfe_experiment_t** out) {
  if (!config_path || !out) return fail(RFE_ERR_RUNTIME, "null argument");
  *out = nullptr;
  return guarded([&] {
    auto* exp = new rfe_experiment{rfe::parse_config_file(config_path)};
    *out = exp;
  });
}

rfe_status_t rfe_experiment_override(rfe_experiment_t* exp, const char* key, const char* value) {
  if (!exp || !key || !value) return fail(RFE_ERR_RUNTIME, "null argument");
  return guarded([&] { rfe::apply_override(exp->kv, key, value); });
}

rfe_status_t rfe_experiment_set_seed(rfe_experiment_t* exp, uint64_t seed) {
  if (!exp) return fail(RFE_ERR_RUNTIME, "null argument");
  return guarded([&] { exp->kv["run.seed"] = std::to_string(seed); });
}

rfe_status_t rfe_experiment_set_out_dir(rfe_experiment_t* exp, const char* dir) {
  if (!exp || !dir) return fail(RFE_ERR_RUNTIME, "null argument");
  return guarded([&] { exp->kv["run.out"] = dir; });
}

rfe_status_t rfe_experiment_run(rfe_experiment_t* exp) {
  if (!exp) return fail(RFE_ERR_RUNTIME, "null argument");
  return guarded([&] { rfe::run_experiment(build(exp), exp->kv); });
}

rfe_status_t rfe_experiment_eval(rfe_experiment_t* exp, const char* checkpoint_path) {
  if (!exp || !checkpoint_path) return fail(RFE_ERR_RUNTIME, "null argument");
  return guarded([&] { rfe::eval_checkpoint(build(exp), exp->kv, checkpoint_path); });
}

rfe_status_t rfe_experiment_export_pca(rfe_experiment_t* exp, const char* run_dir, int eval_task) {
  if (!exp || !run_dir) return fail(RFE_ERR_RUNTIME, "null argument");
  return guarded([&] { rfe::export_pca_from_run(build(exp), run_dir, eval_task); });
}

rfe_status_t rfe_experiment_inspect(rfe_experiment_t* exp, char** out_text) {
  if (!exp || !out_text) return fail(RFE_ERR_RUNTIME, "null argument");
  *out_text = nullptr;
  return guarded([&] {
    std::string report = rfe::inspect_config(build(exp));
    char* buf = static_cast<char*>(std::malloc(report.size() + 1));
    if (!buf) throw std::bad_alloc();
    std::memcpy(buf, report.c_str(), report.size() + 1);
    *out_text = buf;
  });
}

void rfe_string_free(char* s) { std::free(s); }

void rfe_experiment_close(rfe_experiment_t* exp) { delete exp; }

}  // extern "C"
