#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mpcn/autodiff.hpp"
#include "mpcn/data.hpp"
#include "mpcn/params.hpp"
#include "mpcn/rating_model.hpp"

namespace mpcn {

enum class Aggregation { Concat, Additive, Neural };

Aggregation aggregation_from_string(const std::string& s);
const char* aggregation_to_string(Aggregation a);

struct MpcnConfig {
  int d = 50;           // embedding width
  int n_p = 3;          // pointer heads
  int l = 1;            // co-attention feed-forward depth, 0..2
  Aggregation aggregation = Aggregation::Neural;
  bool use_gates = true;
  bool use_fm = true;
  bool use_word_coattention = true;    // off: pointed review embeddings used directly
  bool use_review_coattention = true;  // off: one word-level pass over the whole banks
  int fm_factors = 10;
  double tau = 1.0;
  double dropout_rate = 0.2;

  void validate() const;
  // Pointer-head output count after ablation switches.
  int effective_heads() const {
    if (use_review_coattention) return n_p;
    return use_word_coattention ? 1 : 0;
  }
  // Width of each side's final representation.
  int side_dim() const {
    return aggregation == Aggregation::Concat ? (effective_heads() + 1) * d : d;
  }
};

enum class PointerMode { Hard, Soft };

struct HeadTrace {
  int32_t user_review = -1;
  int32_t item_review = -1;
  std::vector<double> affinity;       // ld x ld row-major; empty unless requested
  std::vector<double> word_affinity;  // lw x lw; empty unless requested
};

struct PointerTrace {
  std::vector<HeadTrace> heads;
  bool fallback = false;  // one side had no usable reviews
  int32_t ld = 0;
  int32_t lw = 0;
};

// Factorization machine output: bias + linear term + pairwise interactions,
// computed through the O(nk) sum-of-squares identity.
template <typename T>
Var<T> fm_layer(Var<T> x, Var<T> w0, Var<T> w, Var<T> factors);

// Review pointers from a masked affinity matrix: user pointer from the
// per-row maxima, item pointer from the per-column maxima, each through the
// straight-through Gumbel-Softmax. Errors if every entry is masked.
template <typename T>
std::pair<Var<T>, Var<T>> select_pointers(Var<T> masked_affinity, double tau, RngState& rng,
                                          bool hard, bool training);

// sigmoid(x W_g + b_g) ⊙ tanh(x W_c + b_c), with rows whose mask is zero
// forced back to zero (the biases would otherwise leak into padded rows).
template <typename T>
Var<T> review_gate(Var<T> x, Var<T> w_gate, Var<T> b_gate, Var<T> w_cand, Var<T> b_cand,
                   const Tensor<T>& row_mask01);

template <typename T>
struct WordCoattention {
  Var<T> a_repr;    // [d]
  Var<T> b_repr;    // [d]
  Var<T> affinity;  // [rows_a x rows_b]
};

// Word-by-word affinity fa M fb^T; each side is attended by the softmax of
// its mean affinity over the other side's unmasked words, and the attention
// mixes the raw (untransformed) rows. Masked positions are excluded from
// both the mean and the softmax.
template <typename T>
WordCoattention<T> word_coattention(Var<T> a_words, Var<T> b_words, Var<T> fa, Var<T> fb,
                                    Var<T> m, const Tensor<T>& mask_a, const Tensor<T>& mask_b);

template <typename T>
class MpcnModel : public RatingModel<T> {
 public:
  MpcnModel(const MpcnConfig& cfg, int32_t vocab_size, int32_t max_reviews, int32_t max_tokens,
            double rating_mean, RngState init_rng);

  const char* kind() const override { return "mpcn"; }
  ParamStore<T>& params() override { return params_; }
  using RatingModel<T>::params;
  const MpcnConfig& config() const { return cfg_; }

  struct ForwardOptions {
    bool training = false;
    PointerMode pointer_mode = PointerMode::Hard;
    bool want_affinity = false;
    bool want_word_affinity = false;
  };

  Var<T> forward(Tape<T>& tape, const std::vector<Var<T>>& leaves, const ReviewBank& user_bank,
                 const ReviewBank& item_bank, RngState rng, const ForwardOptions& opts,
                 PointerTrace* trace) const;

  Var<T> predict(Tape<T>& tape, const std::vector<Var<T>>& leaves, const ExampleRef& ex,
                 RngState rng, bool training) const override;

 private:
  struct Side;

  Side encode_side(const std::vector<Var<T>>& leaves, const ReviewBank& bank) const;
  Var<T> apply_ff(Var<T> x, const std::string& prefix, const std::vector<Var<T>>& leaves,
                  RngState& rng, bool training) const;
  std::pair<Var<T>, Var<T>> word_attend(Tape<T>& tape, const std::vector<Var<T>>& leaves,
                                        Var<T> a_words, Var<T> b_words, const Tensor<T>& mask_a,
                                        const Tensor<T>& mask_b, RngState& rng,
                                        const ForwardOptions& opts, HeadTrace* trace) const;

  Var<T> leaf_of(const std::vector<Var<T>>& leaves, const std::string& name) const;

  MpcnConfig cfg_;
  int32_t vocab_size_;
  int32_t ld_;
  int32_t lw_;
  ParamStore<T> params_;
};

}  // namespace mpcn
