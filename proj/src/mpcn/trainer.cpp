#include "mpcn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "mpcn/data.hpp"

namespace mpcn {

void TrainConfig::validate() const {
  if (lr <= 0) throw UsageError("train config: learning rate must be positive");
  if (max_epochs < 1) throw UsageError("train config: epoch budget must be positive");
  if (patience < 1) throw UsageError("train config: patience must be positive");
  if (patience > max_epochs)
    throw UsageError("train config: patience " + std::to_string(patience) +
                     " exceeds epoch budget " + std::to_string(max_epochs));
  if (l2 < 0) throw UsageError("train config: l2 must be non-negative");
  if (batch_size < 1) throw UsageError("train config: batch size must be positive");
}

template <typename T>
Adam<T>::Adam(const ParamStore<T>& store, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (size_t i = 0; i < store.count(); ++i) {
    m_.push_back(Tensor<T>::zeros(store.value(i).shape()));
    v_.push_back(Tensor<T>::zeros(store.value(i).shape()));
  }
}

template <typename T>
void Adam<T>::step(ParamStore<T>& store, const std::vector<Tensor<T>>& grads) {
  if (grads.size() != store.count())
    throw UsageError("adam: gradient count does not match parameter count");
  for (size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].all_finite())
      throw NumericError("adam: non-finite gradient for parameter '" + store.name(i) +
                         "' at step " + std::to_string(steps_ + 1));
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (size_t i = 0; i < grads.size(); ++i) {
    Tensor<T>& theta = store.value(i);
    const Tensor<T>& g = grads[i];
    Tensor<T>& m = m_[i];
    Tensor<T>& v = v_[i];
    for (int64_t e = 0; e < theta.numel(); ++e) {
      double ge = static_cast<double>(g.at(e));
      double me = beta1_ * static_cast<double>(m.at(e)) + (1.0 - beta1_) * ge;
      double ve = beta2_ * static_cast<double>(v.at(e)) + (1.0 - beta2_) * ge * ge;
      m.at(e) = static_cast<T>(me);
      v.at(e) = static_cast<T>(ve);
      double update = lr_ * (me / bc1) / (std::sqrt(ve / bc2) + eps_);
      theta.at(e) = static_cast<T>(static_cast<double>(theta.at(e)) - update);
    }
  }
}

template <typename T>
double evaluate_mse(const RatingModel<T>& model, const std::vector<ExampleRef>& examples) {
  if (examples.empty()) throw DataError("evaluate_mse: no examples to score");
  double total = 0;
  for (const ExampleRef& ex : examples) {
    Tape<T> tape;
    auto leaves = model.params().register_leaves(tape, false);
    Var<T> pred = model.predict(tape, leaves, ex, RngState(0), false);
    double p = static_cast<double>(tape.value(pred).at(0));
    double diff = p - ex.rating;
    total += diff * diff;
  }
  return total / static_cast<double>(examples.size());
}

void write_history_line(std::ostream& out, const EpochStats& s) {
  out << "{\"epoch\":" << s.epoch << ",\"train_mse\":" << std::setprecision(17) << s.train_mse
      << ",\"dev_mse\":" << std::setprecision(17) << s.dev_mse << ",\"wall_ms\":"
      << std::setprecision(6) << s.wall_ms << ",\"lr\":" << std::setprecision(17) << s.lr
      << "}\n";
}

template <typename T>
TrainResult train_model(RatingModel<T>& model, const std::vector<ExampleRef>& train_examples,
                        const std::vector<ExampleRef>& dev_examples, const TrainConfig& cfg,
                        std::ostream* history_out) {
  cfg.validate();
  if (train_examples.empty()) throw DataError("train: training set is empty");
  if (dev_examples.empty())
    throw DataError("train: development set is empty; early stopping needs one");

  Adam<T> opt(model.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
  RngState base(cfg.seed);
  RngState shuffle_rng = base.fork(0x5u);

  TrainResult res;
  std::vector<Tensor<T>> best_values;
  EarlyStopper stopper(cfg.patience);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    auto t0 = std::chrono::steady_clock::now();
    auto batches = make_batches(static_cast<int64_t>(train_examples.size()), cfg.batch_size,
                                shuffle_rng);
    double sq_err_total = 0;
    RngState epoch_rng = base.fork(static_cast<uint64_t>(epoch));

    for (const auto& batch : batches) {
      Tape<T> tape;
      auto leaves = model.params().register_leaves(tape, true);
      Var<T> sum_sq;
      bool first = true;
      for (int64_t bi : batch) {
        const ExampleRef& ex = train_examples[static_cast<size_t>(bi)];
        RngState ex_rng = epoch_rng.fork(static_cast<uint64_t>(ex.key));
        Var<T> pred = model.predict(tape, leaves, ex, ex_rng, true);
        double pv = static_cast<double>(tape.value(pred).at(0));
        double diff_v = pv - ex.rating;
        sq_err_total += diff_v * diff_v;
        Var<T> diff = sub(pred, tape.constant(Tensor<T>::scalar(static_cast<T>(ex.rating))));
        Var<T> sq = hadamard(diff, diff);
        sum_sq = first ? sq : add(sum_sq, sq);
        first = false;
      }
      Var<T> loss = scale(sum_sq, 1.0 / static_cast<double>(batch.size()));
      tape.backward(loss);

      std::vector<Tensor<T>> grads;
      grads.reserve(leaves.size());
      for (size_t i = 0; i < leaves.size(); ++i) {
        Tensor<T> g = tape.grad(leaves[i]);
        if (cfg.l2 > 0) {
          const Tensor<T>& theta = model.params().value(i);
          const T two_l2 = static_cast<T>(2.0 * cfg.l2);
          for (int64_t e = 0; e < g.numel(); ++e) g.at(e) += two_l2 * theta.at(e);
        }
        grads.push_back(std::move(g));
      }
      opt.step(model.params(), grads);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_mse = sq_err_total / static_cast<double>(train_examples.size());
    stats.dev_mse = evaluate_mse(model, dev_examples);
    stats.lr = cfg.lr;
    stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                        .count();
    res.history.push_back(stats);
    if (history_out) write_history_line(*history_out, stats);

    if (stopper.observe(epoch, stats.dev_mse)) {
      res.best_dev_mse = stopper.best;
      res.best_epoch = epoch;
      best_values = model.params().clone_values();
    } else if (stopper.should_stop()) {
      res.early_stopped = true;
      break;
    }
  }

  // reported metrics always come from the best dev epoch
  model.params().assign_values(best_values);
  return res;
}

#define MPCN_INSTANTIATE_TRAINER(T)                                                         \
  template class Adam<T>;                                                                   \
  template double evaluate_mse<T>(const RatingModel<T>&, const std::vector<ExampleRef>&);   \
  template TrainResult train_model<T>(RatingModel<T>&, const std::vector<ExampleRef>&,      \
                                      const std::vector<ExampleRef>&, const TrainConfig&,   \
                                      std::ostream*);

MPCN_INSTANTIATE_TRAINER(float)
MPCN_INSTANTIATE_TRAINER(double)

#undef MPCN_INSTANTIATE_TRAINER

}  // namespace mpcn
