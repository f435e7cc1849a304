#pragma once

#include <iosfwd>
#include <limits>
#include <vector>

#include "mpcn/rating_model.hpp"

namespace mpcn {

struct TrainConfig {
  double lr = 1e-3;
  int max_epochs = 20;
  int patience = 5;
  double l2 = 1e-6;
  int batch_size = 128;
  uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_mse = 0;
  double dev_mse = 0;
  double wall_ms = 0;
  double lr = 0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int best_epoch = -1;
  double best_dev_mse = std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

// Strict-improvement early stopping: any epoch that does not lower the best
// dev value counts against the patience budget.
struct EarlyStopper {
  explicit EarlyStopper(int patience_epochs) : patience(patience_epochs) {}
  int patience;
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int since_best = 0;

  bool observe(int epoch, double dev_value) {
    if (dev_value < best) {
      best = dev_value;
      best_epoch = epoch;
      since_best = 0;
      return true;
    }
    ++since_best;
    return false;
  }
  bool should_stop() const { return since_best >= patience; }
};

// Adam with bias correction. Moments are laid out in parameter-store order;
// a non-finite gradient aborts the run naming the offending parameter.
template <typename T>
class Adam {
 public:
  Adam(const ParamStore<T>& store, double lr, double beta1, double beta2, double eps);
  void step(ParamStore<T>& store, const std::vector<Tensor<T>>& grads);
  int64_t steps() const { return steps_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  int64_t steps_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// Mean squared error in evaluation mode (dropout off, pointers deterministic).
template <typename T>
double evaluate_mse(const RatingModel<T>& model, const std::vector<ExampleRef>& examples);

// Epoch loop: shuffled batches, mean-squared-error loss with L2 pulled into
// the gradients, per-epoch dev evaluation, early stopping after `patience`
// epochs without strict improvement. The model ends up holding the best-dev
// parameters. One JSON history line per epoch goes to history_out when set.
template <typename T>
TrainResult train_model(RatingModel<T>& model, const std::vector<ExampleRef>& train_examples,
                        const std::vector<ExampleRef>& dev_examples, const TrainConfig& cfg,
                        std::ostream* history_out);

void write_history_line(std::ostream& out, const EpochStats& s);

}  // namespace mpcn
