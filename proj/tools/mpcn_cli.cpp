// Command-line driver for the experiment lifecycle. Talks to the library
// exclusively through the C interface in mpcn.h.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mpcn.h"

namespace {

int fail(mpcn_status status) {
  std::cerr << "error: " << mpcn_last_error() << "\n";
  return static_cast<int>(status);
}

// Relative paths resolve under --data-dir / $MPCN_DATA_DIR when given.
std::string resolve_path(const std::string& data_dir, const std::string& path) {
  if (data_dir.empty() || path.empty() || path.front() == '/') return path;
  return data_dir + "/" + path;
}

struct ConfigHandle {
  mpcn_config* cfg = mpcn_config_create();
  ~ConfigHandle() { mpcn_config_destroy(cfg); }
};

struct SnapshotHandle {
  mpcn_snapshot* snap = nullptr;
  ~SnapshotHandle() { mpcn_snapshot_destroy(snap); }
};

struct ModelHandle {
  mpcn_model* model = nullptr;
  ~ModelHandle() { mpcn_model_destroy(model); }
};

struct OwnedString {
  char* s = nullptr;
  ~OwnedString() { mpcn_string_free(s); }
};

mpcn_status apply_kv(mpcn_config* cfg, const std::vector<std::string>& pairs) {
  for (const auto& kv : pairs) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set wants key=value, got '" << kv << "'\n";
      return MPCN_ERR_USAGE;
    }
    if (mpcn_status s = mpcn_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()))
      return s;
  }
  return MPCN_OK;
}

struct TrainFlags {
  std::string config_file;
  std::vector<std::string> sets;
  std::string model;
  std::string precision;
  std::string aggregation;
  int pointers = -1, epochs = -1, batch = -1, d = -1, l = -1, patience = -1, fm_factors = -1;
  double lr = -1, tau = -1, dropout = -1, l2 = -1;
  bool no_gates = false, no_fm = false, no_wlca = false, no_rlca = false;
};

mpcn_status apply_train_flags(mpcn_config* cfg, const TrainFlags& f, const std::string& data_dir) {
  if (!f.config_file.empty())
    if (mpcn_status s = mpcn_config_load_file(cfg, resolve_path(data_dir, f.config_file).c_str()))
      return s;
  if (mpcn_status s = apply_kv(cfg, f.sets)) return s;

  auto set = [&](const char* key, const std::string& value) {
    return mpcn_config_set(cfg, key, value.c_str());
  };
  mpcn_status s = MPCN_OK;
  if (!f.model.empty() && (s = set("model", f.model))) return s;
  if (!f.precision.empty() && (s = set("precision", f.precision))) return s;
  if (!f.aggregation.empty() && (s = set("aggregation", f.aggregation))) return s;
  if (f.pointers >= 0 && (s = set("pointers", std::to_string(f.pointers)))) return s;
  if (f.epochs >= 0 && (s = set("epochs", std::to_string(f.epochs)))) return s;
  if (f.batch >= 0 && (s = set("batch", std::to_string(f.batch)))) return s;
  if (f.d >= 0 && (s = set("d", std::to_string(f.d)))) return s;
  if (f.l >= 0 && (s = set("l", std::to_string(f.l)))) return s;
  if (f.patience >= 0 && (s = set("patience", std::to_string(f.patience)))) return s;
  if (f.fm_factors >= 0 && (s = set("fm_factors", std::to_string(f.fm_factors)))) return s;
  if (f.lr >= 0 && (s = set("lr", std::to_string(f.lr)))) return s;
  if (f.tau >= 0 && (s = set("tau", std::to_string(f.tau)))) return s;
  if (f.dropout >= 0 && (s = set("dropout", std::to_string(f.dropout)))) return s;
  if (f.l2 >= 0 && (s = set("l2", std::to_string(f.l2)))) return s;
  if (f.no_gates && (s = set("gates", "0"))) return s;
  if (f.no_fm && (s = set("fm", "0"))) return s;
  if (f.no_wlca && (s = set("word_coattention", "0"))) return s;
  if (f.no_rlca && (s = set("review_coattention", "0"))) return s;
  return MPCN_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"review-based rating prediction: prepare, train, evaluate, analyze"};
  app.require_subcommand(1);

  std::string data_dir;
  if (const char* env = std::getenv("MPCN_DATA_DIR")) data_dir = env;
  uint64_t seed = 42;
  bool seed_given = false;
  app.add_option("--data-dir", data_dir, "directory for relative data paths ($MPCN_DATA_DIR)");
  app.add_option("--seed", seed, "seed for every seeded stage")->each([&](const std::string&) {
    seed_given = true;
  });

  // prepare
  auto* prepare = app.add_subcommand("prepare", "build a dataset snapshot from a corpus");
  std::string corpus_path, prepare_out;
  int k_core = -1, min_count = -1, max_reviews = -1, max_review_tokens = -1;
  bool prepare_json = false;
  prepare->add_option("corpus", corpus_path, "JSON-lines corpus path")->required();
  prepare->add_option("--out", prepare_out, "snapshot output path")->required();
  prepare->add_option("--k-core", k_core, "k-core threshold (default 5)");
  prepare->add_option("--min-count", min_count, "vocabulary frequency threshold (default 10)");
  prepare->add_option("--max-reviews", max_reviews, "reviews kept per user/item (default 20)");
  prepare->add_option("--max-review-tokens", max_review_tokens,
                      "tokens kept per review (default 30)");
  prepare->add_flag("--json", prepare_json, "print the stats report as JSON");

  // train
  auto* train = app.add_subcommand("train", "train a model on a snapshot");
  std::string train_snapshot, train_out, history_path;
  bool no_history = false;
  TrainFlags flags;
  train->add_option("snapshot", train_snapshot, "snapshot path")->required();
  train->add_option("--out", train_out, "checkpoint output path")->required();
  auto* hist_opt = train->add_option("--history", history_path, "training history JSONL path");
  train->add_flag("--no-history", no_history, "skip writing a history file")->excludes(hist_opt);
  train->add_option("--model", flags.model, "mpcn|mf|fm|mlp (default mpcn)");
  train->add_option("--config", flags.config_file, "key=value configuration file");
  train->add_option("--set", flags.sets, "override a single configuration key (key=value)");
  train->add_option("--precision", flags.precision, "f32|f64");
  train->add_option("--pointers", flags.pointers, "pointer heads");
  train->add_option("--epochs", flags.epochs, "epoch budget");
  train->add_option("--patience", flags.patience, "early-stopping patience");
  train->add_option("--batch", flags.batch, "batch size");
  train->add_option("--d", flags.d, "embedding width");
  train->add_option("--l", flags.l, "co-attention feed-forward depth");
  train->add_option("--aggregation", flags.aggregation, "concat|additive|neural");
  train->add_option("--lr", flags.lr, "learning rate");
  train->add_option("--tau", flags.tau, "pointer temperature");
  train->add_option("--dropout", flags.dropout, "dropout rate");
  train->add_option("--l2", flags.l2, "L2 strength");
  train->add_option("--fm-factors", flags.fm_factors, "factorization machine factors");
  train->add_flag("--no-gates", flags.no_gates, "disable the review gates");
  train->add_flag("--no-fm", flags.no_fm, "inner product instead of the FM layer");
  train->add_flag("--no-wlca", flags.no_wlca, "disable word-level co-attention");
  train->add_flag("--no-rlca", flags.no_rlca, "disable review-level co-attention");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on dev and test");
  std::string eval_snapshot, eval_ckpt;
  bool eval_json = false;
  eval->add_option("snapshot", eval_snapshot, "snapshot path")->required();
  eval->add_option("checkpoint", eval_ckpt, "checkpoint path")->required();
  eval->add_flag("--json", eval_json, "JSON output");

  // analyze-pointers
  auto* analyze = app.add_subcommand("analyze-pointers", "multi-pointer behavior report");
  std::string an_snapshot, an_ckpt, an_out;
  int64_t an_sample = 1000;
  analyze->add_option("snapshot", an_snapshot, "snapshot path")->required();
  analyze->add_option("checkpoint", an_ckpt, "checkpoint path")->required();
  analyze->add_option("--sample", an_sample, "test examples to sample (default 1000)");
  analyze->add_option("--out", an_out, "write the JSON report here instead of stdout");

  // export-affinity
  auto* exporta = app.add_subcommand("export-affinity", "per-head review affinity matrices");
  std::string ex_snapshot, ex_ckpt, ex_user, ex_item, ex_prefix;
  exporta->add_option("snapshot", ex_snapshot, "snapshot path")->required();
  exporta->add_option("checkpoint", ex_ckpt, "checkpoint path")->required();
  exporta->add_option("--user", ex_user, "user id")->required();
  exporta->add_option("--item", ex_item, "item id")->required();
  exporta->add_option("--out", ex_prefix, "output path prefix")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  }

  if (*prepare) {
    ConfigHandle cfg;
    auto set_int = [&](const char* key, int v) {
      return v < 0 ? MPCN_OK : mpcn_config_set(cfg.cfg, key, std::to_string(v).c_str());
    };
    if (mpcn_status s = mpcn_config_set(cfg.cfg, "seed", std::to_string(seed).c_str()))
      return fail(s);
    if (mpcn_status s = set_int("k_core", k_core)) return fail(s);
    if (mpcn_status s = set_int("min_count", min_count)) return fail(s);
    if (mpcn_status s = set_int("max_reviews", max_reviews)) return fail(s);
    if (mpcn_status s = set_int("max_review_tokens", max_review_tokens)) return fail(s);

    SnapshotHandle snap;
    if (mpcn_status s = mpcn_snapshot_prepare(resolve_path(data_dir, corpus_path).c_str(),
                                              cfg.cfg, &snap.snap))
      return fail(s);
    if (mpcn_status s =
            mpcn_snapshot_save(snap.snap, resolve_path(data_dir, prepare_out).c_str()))
      return fail(s);
    OwnedString stats;
    if (mpcn_status s = mpcn_snapshot_stats_json(snap.snap, &stats.s)) return fail(s);
    if (prepare_json)
      std::cout << stats.s << "\n";
    else
      std::cout << "snapshot written to " << prepare_out << "\nstats: " << stats.s << "\n";
    return 0;
  }

  if (*train) {
    ConfigHandle cfg;
    if (mpcn_status s = apply_train_flags(cfg.cfg, flags, data_dir)) return fail(s);
    // an explicit global --seed outranks config files and --set pairs
    if (seed_given)
      if (mpcn_status s = mpcn_config_set(cfg.cfg, "seed", std::to_string(seed).c_str()))
        return fail(s);

    SnapshotHandle snap;
    if (mpcn_status s =
            mpcn_snapshot_load(resolve_path(data_dir, train_snapshot).c_str(), &snap.snap))
      return fail(s);
    ModelHandle model;
    if (mpcn_status s = mpcn_model_create(cfg.cfg, snap.snap, &model.model)) return fail(s);

    std::string resolved_history;
    const char* history_arg = nullptr;
    if (!no_history) {
      resolved_history = history_path.empty() ? resolve_path(data_dir, train_out) + ".history.jsonl"
                                              : resolve_path(data_dir, history_path);
      history_arg = resolved_history.c_str();
    }
    double best_dev = 0;
    int best_epoch = 0, early = 0;
    if (mpcn_status s =
            mpcn_train(model.model, snap.snap, history_arg, &best_dev, &best_epoch, &early))
      return fail(s);
    if (mpcn_status s = mpcn_model_save(model.model, resolve_path(data_dir, train_out).c_str()))
      return fail(s);

    double test_mse = -1;
    int64_t test_n = 0;
    mpcn_status ts = mpcn_evaluate(model.model, snap.snap, "test", &test_mse, &test_n);
    OwnedString model_name;
    mpcn_config_get(cfg.cfg, "model", &model_name.s);
    std::cout << std::setprecision(17) << "model=" << model_name.s << " dev_mse=" << best_dev
              << " test_mse=";
    if (ts == MPCN_OK)
      std::cout << test_mse;
    else
      std::cout << "n/a";
    std::cout << " best_epoch=" << best_epoch << " early_stopped=" << early << "\n";
    if (history_arg) std::cout << "history: " << resolved_history << "\n";
    std::cout << "checkpoint: " << train_out << "\n";
    return 0;
  }

  if (*eval) {
    SnapshotHandle snap;
    if (mpcn_status s =
            mpcn_snapshot_load(resolve_path(data_dir, eval_snapshot).c_str(), &snap.snap))
      return fail(s);
    ModelHandle model;
    if (mpcn_status s = mpcn_model_load(resolve_path(data_dir, eval_ckpt).c_str(), &model.model))
      return fail(s);
    double dev_mse = 0, test_mse = 0;
    int64_t dev_n = 0, test_n = 0;
    if (mpcn_status s = mpcn_evaluate(model.model, snap.snap, "dev", &dev_mse, &dev_n))
      return fail(s);
    if (mpcn_status s = mpcn_evaluate(model.model, snap.snap, "test", &test_mse, &test_n))
      return fail(s);
    if (eval_json) {
      std::cout << std::setprecision(17) << "{\"dev_mse\":" << dev_mse << ",\"dev_n\":" << dev_n
                << ",\"test_mse\":" << test_mse << ",\"test_n\":" << test_n << "}\n";
    } else {
      std::cout << std::setprecision(17) << "dev_mse=" << dev_mse << " (" << dev_n
                << " examples)\ntest_mse=" << test_mse << " (" << test_n << " examples)\n";
    }
    return 0;
  }

  if (*analyze) {
    SnapshotHandle snap;
    if (mpcn_status s = mpcn_snapshot_load(resolve_path(data_dir, an_snapshot).c_str(), &snap.snap))
      return fail(s);
    ModelHandle model;
    if (mpcn_status s = mpcn_model_load(resolve_path(data_dir, an_ckpt).c_str(), &model.model))
      return fail(s);
    OwnedString json;
    if (mpcn_status s = mpcn_analyze_pointers(model.model, snap.snap, an_sample, seed, &json.s))
      return fail(s);
    if (an_out.empty()) {
      std::cout << json.s << "\n";
    } else {
      std::ofstream f(resolve_path(data_dir, an_out), std::ios::trunc);
      if (!f) {
        std::cerr << "error: cannot write " << an_out << "\n";
        return 2;
      }
      f << json.s << "\n";
      std::cout << "report written to " << an_out << "\n";
    }
    return 0;
  }

  if (*exporta) {
    SnapshotHandle snap;
    if (mpcn_status s = mpcn_snapshot_load(resolve_path(data_dir, ex_snapshot).c_str(), &snap.snap))
      return fail(s);
    ModelHandle model;
    if (mpcn_status s = mpcn_model_load(resolve_path(data_dir, ex_ckpt).c_str(), &model.model))
      return fail(s);
    OwnedString files;
    if (mpcn_status s =
            mpcn_export_affinity(model.model, snap.snap, ex_user.c_str(), ex_item.c_str(),
                                 resolve_path(data_dir, ex_prefix).c_str(), &files.s))
      return fail(s);
    std::cout << "written: " << files.s << "\n";
    return 0;
  }

  std::cerr << "usage error: no subcommand given\n";
  return 1;
}
