#include "mpcn/baselines.hpp"

#include <cmath>

#include "mpcn/model.hpp"

namespace mpcn {

namespace {

void check_index(int32_t idx, int32_t count, const char* what) {
  if (idx < 0 || idx >= count)
    throw DataError(std::string("unknown ") + what + " index " + std::to_string(idx) +
                    " (table holds " + std::to_string(count) + ")");
}

// Row `idx` of a [n x d] table as a rank-1 variable with gradient routed back
// into the table.
template <typename T>
Var<T> table_row(Var<T> table, int32_t idx, int64_t d) {
  int32_t ids[1] = {idx};
  uint8_t mask[1] = {1};
  return reshape(embed_lookup(table, std::span<const int32_t>(ids, 1),
                              std::span<const uint8_t>(mask, 1)),
                 {d});
}

template <typename T>
Tensor<T> glorot(RngState& rng, int64_t fan_in, int64_t fan_out) {
  T limit = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
  return Tensor<T>::uniform({fan_in, fan_out}, rng, -limit, limit);
}

}  // namespace

// --- MF ---------------------------------------------------------------------------

template <typename T>
MfModel<T>::MfModel(int32_t users, int32_t items, int d, double global_mean, bool biases,
                    RngState init_rng)
    : users_(users), items_(items), biases_(biases), global_mean_(global_mean) {
  if (users < 1 || items < 1 || d < 1) throw UsageError("mf: empty user/item tables");
  params_.add("mf.P", Tensor<T>::normal({users, d}, init_rng, T(0), T(0.1)));
  params_.add("mf.Q", Tensor<T>::normal({items, d}, init_rng, T(0), T(0.1)));
  if (biases_) {
    params_.add("mf.bu", Tensor<T>::zeros({users, 1}));
    params_.add("mf.bi", Tensor<T>::zeros({items, 1}));
  }
}

template <typename T>
Var<T> MfModel<T>::predict(Tape<T>& tape, const std::vector<Var<T>>& leaves, const ExampleRef& ex,
                           RngState, bool) const {
  check_index(ex.user, users_, "user");
  check_index(ex.item, items_, "item");
  const int64_t d = tape.value(leaves[0]).dim(1);
  Var<T> p = table_row(leaves[static_cast<size_t>(params_.index_of("mf.P"))], ex.user, d);
  Var<T> q = table_row(leaves[static_cast<size_t>(params_.index_of("mf.Q"))], ex.item, d);
  Var<T> pred = sum_all(hadamard(p, q));
  if (biases_) {
    Var<T> bu = table_row(leaves[static_cast<size_t>(params_.index_of("mf.bu"))], ex.user, 1);
    Var<T> bi = table_row(leaves[static_cast<size_t>(params_.index_of("mf.bi"))], ex.item, 1);
    pred = add(add(pred, bu), bi);
  }
  return add(pred, tape.constant(Tensor<T>::scalar(static_cast<T>(global_mean_))));
}

// --- FM baseline --------------------------------------------------------------------

template <typename T>
FmBaselineModel<T>::FmBaselineModel(int32_t users, int32_t items, int d, int factors,
                                    double global_mean, RngState init_rng)
    : users_(users), items_(items), d_(d) {
  if (users < 1 || items < 1 || d < 1) throw UsageError("fm: empty user/item tables");
  if (factors < 1) throw UsageError("fm: factor count must be positive");
  params_.add("fmb.P", Tensor<T>::normal({users, d}, init_rng, T(0), T(0.1)));
  params_.add("fmb.Q", Tensor<T>::normal({items, d}, init_rng, T(0), T(0.1)));
  params_.add("fmb.w0", Tensor<T>::scalar(static_cast<T>(global_mean)));
  params_.add("fmb.w", Tensor<T>::zeros({2 * d}));
  params_.add("fmb.V", Tensor<T>::normal({2 * d, factors}, init_rng, T(0), T(0.05)));
}

template <typename T>
Var<T> FmBaselineModel<T>::predict(Tape<T>& tape, const std::vector<Var<T>>& leaves,
                                   const ExampleRef& ex, RngState, bool) const {
  check_index(ex.user, users_, "user");
  check_index(ex.item, items_, "item");
  (void)tape;
  Var<T> p = table_row(leaves[static_cast<size_t>(params_.index_of("fmb.P"))], ex.user, d_);
  Var<T> q = table_row(leaves[static_cast<size_t>(params_.index_of("fmb.Q"))], ex.item, d_);
  Var<T> x = concat1d(std::vector<Var<T>>{p, q});
  return fm_layer(x, leaves[static_cast<size_t>(params_.index_of("fmb.w0"))],
                  leaves[static_cast<size_t>(params_.index_of("fmb.w"))],
                  leaves[static_cast<size_t>(params_.index_of("fmb.V"))]);
}

// --- MLP ---------------------------------------------------------------------------

template <typename T>
MlpModel<T>::MlpModel(int32_t users, int32_t items, int d, double global_mean,
                      double dropout_rate, RngState init_rng)
    : users_(users), items_(items), d_(d), dropout_rate_(dropout_rate) {
  if (users < 1 || items < 1 || d < 2) throw UsageError("mlp: embedding width must be at least 2");
  const int64_t h1 = d, h2 = std::max<int64_t>(1, d / 2);
  params_.add("mlp.P", Tensor<T>::normal({users, d}, init_rng, T(0), T(0.1)));
  params_.add("mlp.Q", Tensor<T>::normal({items, d}, init_rng, T(0), T(0.1)));
  params_.add("mlp.L0.W", glorot<T>(init_rng, 2 * d, h1));
  params_.add("mlp.L0.b", Tensor<T>::zeros({h1}));
  params_.add("mlp.L1.W", glorot<T>(init_rng, h1, h2));
  params_.add("mlp.L1.b", Tensor<T>::zeros({h2}));
  params_.add("mlp.out.W", glorot<T>(init_rng, h2, 1));
  params_.add("mlp.out.b", Tensor<T>::scalar(static_cast<T>(global_mean)));
}

template <typename T>
Var<T> MlpModel<T>::predict(Tape<T>& tape, const std::vector<Var<T>>& leaves,
                            const ExampleRef& ex, RngState rng, bool training) const {
  check_index(ex.user, users_, "user");
  check_index(ex.item, items_, "item");
  (void)tape;
  Var<T> p = table_row(leaves[static_cast<size_t>(params_.index_of("mlp.P"))], ex.user, d_);
  Var<T> q = table_row(leaves[static_cast<size_t>(params_.index_of("mlp.Q"))], ex.item, d_);
  Var<T> x = reshape(concat1d(std::vector<Var<T>>{p, q}), {1, 2 * static_cast<int64_t>(d_)});
  for (int layer = 0; layer < 2; ++layer) {
    std::string base = "mlp.L" + std::to_string(layer);
    Var<T> w = leaves[static_cast<size_t>(params_.index_of(base + ".W"))];
    Var<T> b = leaves[static_cast<size_t>(params_.index_of(base + ".b"))];
    x = relu(add_rowvec(matmul(x, w), b));
    x = dropout(x, dropout_rate_, training, rng);
  }
  Var<T> w_out = leaves[static_cast<size_t>(params_.index_of("mlp.out.W"))];
  Var<T> b_out = leaves[static_cast<size_t>(params_.index_of("mlp.out.b"))];
  return add(reshape(matmul(x, w_out), {1}), b_out);
}

#define MPCN_INSTANTIATE_BASELINES(T) \
  template class MfModel<T>;          \
  template class FmBaselineModel<T>;  \
  template class MlpModel<T>;

MPCN_INSTANTIATE_BASELINES(float)
MPCN_INSTANTIATE_BASELINES(double)

#undef MPCN_INSTANTIATE_BASELINES

}  // namespace mpcn
