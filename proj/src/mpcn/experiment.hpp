#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mpcn/baselines.hpp"
#include "mpcn/data.hpp"
#include "mpcn/model.hpp"
#include "mpcn/trainer.hpp"

namespace mpcn {

// Every hyperparameter and ablation switch, serializable as key=value lines
// ('#' starts a comment). Unknown keys are usage errors.
struct ExperimentConfig {
  std::string model = "mpcn";     // mpcn|mf|fm|mlp
  std::string precision = "f32";  // f32|f64
  int d = 50;
  int pointers = 3;
  int l = 1;
  std::string aggregation = "neural";  // concat|additive|neural
  bool gates = true;
  bool fm = true;
  bool word_coattention = true;
  bool review_coattention = true;
  int fm_factors = 10;
  double tau = 1.0;
  double dropout = 0.2;
  double l2 = 1e-6;
  double lr = 1e-3;
  int epochs = 20;
  int patience = 5;
  int batch = 128;
  uint64_t seed = 42;
  bool mf_biases = true;
  int k_core = 5;
  int min_count = 10;
  int max_reviews = 20;
  int max_review_tokens = 30;

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  static ExperimentConfig parse(const std::string& text);
  void merge_file(const std::string& path);
  std::string serialize() const;

  void validate() const;
  MpcnConfig mpcn_config() const;
  TrainConfig train_config() const;
  PrepareOptions prepare_options() const;
};

// A constructed model of either precision, together with the shape facts
// needed to rebuild and validate it against a snapshot.
class ModelBundle {
 public:
  ExperimentConfig config;
  std::map<std::string, std::string> meta;
  std::unique_ptr<RatingModel<float>> f32;
  std::unique_ptr<RatingModel<double>> f64;

  static ModelBundle create(const ExperimentConfig& cfg, const Snapshot& snap);
  static ModelBundle load(const std::string& path);
  void save(const std::string& path) const;

  bool is_f64() const { return f64 != nullptr; }
  void check_compatible(const Snapshot& snap) const;

  int64_t meta_i64(const std::string& key) const;
  double meta_f64(const std::string& key) const;

  template <typename T>
  RatingModel<T>& model();
  template <typename T>
  const RatingModel<T>& model() const;

  // The mpcn core when this bundle wraps one; null otherwise.
  template <typename T>
  const MpcnModel<T>* mpcn() const;
};

std::vector<ExampleRef> make_examples(const Snapshot& snap, const std::vector<int64_t>& indices);

struct TrainOutcome {
  TrainResult result;
  double test_mse = -1;  // -1 when the snapshot has no test split
};

TrainOutcome train_bundle(ModelBundle& bundle, const Snapshot& snap, std::ostream* history_out);

// split is one of train|dev|test.
double evaluate_bundle(const ModelBundle& bundle, const Snapshot& snap, const std::string& split,
                       int64_t* n_out = nullptr);

std::string snapshot_stats_json(const Snapshot& snap);

}  // namespace mpcn
