#pragma once

#include "mpcn/rating_model.hpp"

namespace mpcn {

// Interaction-only baselines. All share the embedding width d and resolve
// users/items by table index; an index outside the tables is an error rather
// than a silent cold-start prediction.

// Inner product plus optional user/item biases and the global rating mean.
template <typename T>
class MfModel : public RatingModel<T> {
 public:
  MfModel(int32_t users, int32_t items, int d, double global_mean, bool biases, RngState init_rng);
  const char* kind() const override { return "mf"; }
  ParamStore<T>& params() override { return params_; }
  using RatingModel<T>::params;
  Var<T> predict(Tape<T>& tape, const std::vector<Var<T>>& leaves, const ExampleRef& ex,
                 RngState rng, bool training) const override;

 private:
  int32_t users_, items_;
  bool biases_;
  double global_mean_;
  ParamStore<T> params_;
};

// Factorization machine over the concatenated user/item embeddings.
template <typename T>
class FmBaselineModel : public RatingModel<T> {
 public:
  FmBaselineModel(int32_t users, int32_t items, int d, int factors, double global_mean,
                  RngState init_rng);
  const char* kind() const override { return "fm"; }
  ParamStore<T>& params() override { return params_; }
  using RatingModel<T>::params;
  Var<T> predict(Tape<T>& tape, const std::vector<Var<T>>& leaves, const ExampleRef& ex,
                 RngState rng, bool training) const override;

 private:
  int32_t users_, items_;
  int d_;
  ParamStore<T> params_;
};

// Pyramid 2d -> d -> d/2 -> 1; ReLU on the hidden layers, linear head.
template <typename T>
class MlpModel : public RatingModel<T> {
 public:
  MlpModel(int32_t users, int32_t items, int d, double global_mean, double dropout_rate,
           RngState init_rng);
  const char* kind() const override { return "mlp"; }
  ParamStore<T>& params() override { return params_; }
  using RatingModel<T>::params;
  Var<T> predict(Tape<T>& tape, const std::vector<Var<T>>& leaves, const ExampleRef& ex,
                 RngState rng, bool training) const override;

 private:
  int32_t users_, items_;
  int d_;
  double dropout_rate_;
  ParamStore<T> params_;
};

}  // namespace mpcn
