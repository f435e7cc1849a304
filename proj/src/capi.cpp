#include "mpcn.h"

#include <cstring>
#include <fstream>
#include <string>

#include "mpcn/analysis.hpp"
#include "mpcn/experiment.hpp"

#include <json.hpp>

struct mpcn_config {
  mpcn::ExperimentConfig cfg;
};

struct mpcn_snapshot {
  mpcn::Snapshot snap;
};

struct mpcn_model {
  mpcn::ModelBundle bundle;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

// Runs fn, translating the exception taxonomy into status codes.
template <typename Fn>
mpcn_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return MPCN_OK;
  } catch (const mpcn::UsageError& e) {
    set_error(e.what());
    return MPCN_ERR_USAGE;
  } catch (const mpcn::NumericError& e) {
    set_error(e.what());
    return MPCN_ERR_NUMERIC;
  } catch (const mpcn::DataError& e) {
    set_error(e.what());
    return MPCN_ERR_DATA;
  } catch (const std::exception& e) {
    set_error(e.what());
    return MPCN_ERR_DATA;
  }
}

mpcn_status require(bool ok, const char* msg) {
  if (ok) return MPCN_OK;
  set_error(msg);
  return MPCN_ERR_USAGE;
}

char* dup_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.data(), s.size());
  out[s.size()] = '\0';
  return out;
}

}  // namespace

extern "C" {

const char* mpcn_version(void) { return "1.0.0"; }

const char* mpcn_last_error(void) { return g_last_error.c_str(); }

void mpcn_string_free(char* s) { delete[] s; }

mpcn_config* mpcn_config_create(void) { return new mpcn_config(); }

void mpcn_config_destroy(mpcn_config* cfg) { delete cfg; }

mpcn_status mpcn_config_set(mpcn_config* cfg, const char* key, const char* value) {
  if (mpcn_status s = require(cfg && key && value, "config_set: null argument")) return s;
  return guarded([&] { cfg->cfg.set(key, value); });
}

mpcn_status mpcn_config_get(const mpcn_config* cfg, const char* key, char** value_out) {
  if (mpcn_status s = require(cfg && key && value_out, "config_get: null argument")) return s;
  return guarded([&] { *value_out = dup_string(cfg->cfg.get(key)); });
}

mpcn_status mpcn_config_load_file(mpcn_config* cfg, const char* path) {
  if (mpcn_status s = require(cfg && path, "config_load_file: null argument")) return s;
  return guarded([&] { cfg->cfg.merge_file(path); });
}

mpcn_status mpcn_snapshot_prepare(const char* corpus_path, const mpcn_config* cfg,
                                  mpcn_snapshot** out) {
  if (mpcn_status s = require(corpus_path && cfg && out, "snapshot_prepare: null argument"))
    return s;
  return guarded([&] {
    auto snap = std::make_unique<mpcn_snapshot>();
    snap->snap = mpcn::prepare_dataset(corpus_path, cfg->cfg.prepare_options());
    *out = snap.release();
  });
}

mpcn_status mpcn_snapshot_load(const char* path, mpcn_snapshot** out) {
  if (mpcn_status s = require(path && out, "snapshot_load: null argument")) return s;
  return guarded([&] {
    auto snap = std::make_unique<mpcn_snapshot>();
    snap->snap = mpcn::Snapshot::load(path);
    *out = snap.release();
  });
}

mpcn_status mpcn_snapshot_save(const mpcn_snapshot* snap, const char* path) {
  if (mpcn_status s = require(snap && path, "snapshot_save: null argument")) return s;
  return guarded([&] { snap->snap.save(path); });
}

void mpcn_snapshot_destroy(mpcn_snapshot* snap) { delete snap; }

mpcn_status mpcn_snapshot_stats_json(const mpcn_snapshot* snap, char** json_out) {
  if (mpcn_status s = require(snap && json_out, "snapshot_stats_json: null argument")) return s;
  return guarded([&] { *json_out = dup_string(mpcn::snapshot_stats_json(snap->snap)); });
}

mpcn_status mpcn_model_create(const mpcn_config* cfg, const mpcn_snapshot* snap,
                              mpcn_model** out) {
  if (mpcn_status s = require(cfg && snap && out, "model_create: null argument")) return s;
  return guarded([&] {
    auto model = std::make_unique<mpcn_model>();
    model->bundle = mpcn::ModelBundle::create(cfg->cfg, snap->snap);
    *out = model.release();
  });
}

mpcn_status mpcn_model_load(const char* path, mpcn_model** out) {
  if (mpcn_status s = require(path && out, "model_load: null argument")) return s;
  return guarded([&] {
    auto model = std::make_unique<mpcn_model>();
    model->bundle = mpcn::ModelBundle::load(path);
    *out = model.release();
  });
}

mpcn_status mpcn_model_save(const mpcn_model* model, const char* path) {
  if (mpcn_status s = require(model && path, "model_save: null argument")) return s;
  return guarded([&] { model->bundle.save(path); });
}

void mpcn_model_destroy(mpcn_model* model) { delete model; }

mpcn_status mpcn_train(mpcn_model* model, const mpcn_snapshot* snap, const char* history_path,
                       double* best_dev_mse_out, int* best_epoch_out, int* early_stopped_out) {
  if (mpcn_status s = require(model && snap, "train: null argument")) return s;
  return guarded([&] {
    std::ofstream history;
    std::ostream* history_out = nullptr;
    if (history_path) {
      history.open(history_path, std::ios::trunc);
      if (!history) throw mpcn::DataError(std::string("cannot write history file: ") + history_path);
      history_out = &history;
    }
    mpcn::TrainOutcome outcome = mpcn::train_bundle(model->bundle, snap->snap, history_out);
    if (best_dev_mse_out) *best_dev_mse_out = outcome.result.best_dev_mse;
    if (best_epoch_out) *best_epoch_out = outcome.result.best_epoch;
    if (early_stopped_out) *early_stopped_out = outcome.result.early_stopped ? 1 : 0;
  });
}

mpcn_status mpcn_evaluate(const mpcn_model* model, const mpcn_snapshot* snap, const char* split,
                          double* mse_out, int64_t* count_out) {
  if (mpcn_status s = require(model && snap && split && mse_out, "evaluate: null argument"))
    return s;
  return guarded([&] {
    int64_t n = 0;
    *mse_out = mpcn::evaluate_bundle(model->bundle, snap->snap, split, &n);
    if (count_out) *count_out = n;
  });
}

mpcn_status mpcn_analyze_pointers(const mpcn_model* model, const mpcn_snapshot* snap,
                                  int64_t sample_size, uint64_t seed, char** json_out) {
  if (mpcn_status s = require(model && snap && json_out, "analyze_pointers: null argument"))
    return s;
  return guarded([&] {
    mpcn::PointerBehaviorReport report =
        mpcn::analyze_pointers(model->bundle, snap->snap, sample_size, seed);
    *json_out = dup_string(report.to_json());
  });
}

mpcn_status mpcn_export_affinity(const mpcn_model* model, const mpcn_snapshot* snap,
                                 const char* user_id, const char* item_id,
                                 const char* out_prefix, char** files_json_out) {
  if (mpcn_status s =
          require(model && snap && user_id && item_id && out_prefix, "export_affinity: null argument"))
    return s;
  return guarded([&] {
    std::vector<std::string> files =
        mpcn::export_affinity(model->bundle, snap->snap, user_id, item_id, out_prefix);
    if (files_json_out) {
      nlohmann::json j = files;
      *files_json_out = dup_string(j.dump());
    }
  });
}

}  // extern "C"
