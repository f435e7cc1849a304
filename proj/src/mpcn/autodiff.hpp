#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mpcn/rng.hpp"
#include "mpcn/tensor.hpp"

namespace mpcn {

// Reverse-mode engine. A Tape records every operation of one forward pass in
// topological order; backward() sweeps the record once, accumulating
// gradients additively into every requires-grad node. Single-threaded per
// tape; independent tapes may run concurrently over shared immutable
// parameter tensors.

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int32_t id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

enum class Reduce { Max, Mean, Sum };

template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  const Tensor<T>& value(Var<T> v) const;
  bool requires_grad(Var<T> v) const;
  // Gradient of the last backward() w.r.t. v; zeros if v was unreachable.
  Tensor<T> grad(Var<T> v) const;

  void backward(Var<T> loss);

  int64_t size() const { return static_cast<int64_t>(nodes_.size()); }

  // --- internal surface used by the op implementations ---
  using BackwardFn = std::function<void(Tape<T>&, int32_t self)>;
  Var<T> add_node(Tensor<T> value, bool requires_grad, BackwardFn backward);
  Tensor<T>& grad_buffer(int32_t id);
  const Tensor<T>& node_grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].grad; }
  bool node_has_grad(int32_t id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;  // empty until a contribution arrives
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// --- operations -------------------------------------------------------------

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
template <typename T>
Var<T> transpose2d(Var<T> x);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> hadamard(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> x, double c);

// X[m x n] + row-broadcast b[n]
template <typename T>
Var<T> add_rowvec(Var<T> x, Var<T> b);
// X[m x n] with row i scaled by v[i]
template <typename T>
Var<T> mul_colvec(Var<T> x, Var<T> v);

template <typename T>
Var<T> sigmoid(Var<T> x);
template <typename T>
Var<T> tanh_op(Var<T> x);
template <typename T>
Var<T> relu(Var<T> x);

// axis is the reduced dimension. Rank-1 with axis 0 yields a scalar; rank-2
// yields a vector over the surviving dimension. Max routes its gradient to
// the lowest-index maximum of each slice.
template <typename T>
Var<T> reduce(Var<T> x, int axis, Reduce kind);
template <typename T>
Var<T> sum_all(Var<T> x);

// Stable softmax along `axis` (max-subtraction). Rank-1: axis 0. Rank-2:
// axis 1 normalizes each row, axis 0 each column.
template <typename T>
Var<T> softmax(Var<T> x, int axis);
// Adds -1e9 to positions where mask01 is zero before normalizing; errors if
// every position is masked.
template <typename T>
Var<T> masked_softmax1d(Var<T> x, const Tensor<T>& mask01);

template <typename T>
Var<T> concat1d(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> stack_rows(const std::vector<Var<T>>& rows);
template <typename T>
Var<T> reshape(Var<T> x, Shape new_shape);

// Rows of the embedding table selected by ids; rows with mask 0 come out as
// zeros and receive no gradient.
template <typename T>
Var<T> embed_lookup(Var<T> table, std::span<const int32_t> ids, std::span<const uint8_t> mask);

// [(g*r) x d] -> [g x d], summing each consecutive block of r rows.
template <typename T>
Var<T> group_sum_rows(Var<T> x, int64_t group_rows);

// Inverted dropout: kept units scaled by 1/(1-rate) during training,
// identity otherwise.
template <typename T>
Var<T> dropout(Var<T> x, double rate, bool training, RngState& rng);

template <typename T>
Tensor<T> gumbel_noise_tensor(RngState& rng, int64_t k);

// Straight-through Gumbel-Softmax over rank-1 logits. Training draws Gumbel
// noise from rng; evaluation disables noise so the forward is the argmax
// one-hot. hard=true discretizes the forward output; the backward pass always
// uses the soft softmax Jacobian of (logits+noise)/tau.
template <typename T>
Var<T> st_gumbel_softmax(Var<T> logits, double tau, RngState& rng, bool hard, bool training);
template <typename T>
Var<T> st_gumbel_softmax_with_noise(Var<T> logits, const Tensor<T>& noise, double tau, bool hard);

using Tape32 = Tape<float>;
using Tape64 = Tape<double>;

}  // namespace mpcn
