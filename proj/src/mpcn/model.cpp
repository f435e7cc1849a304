#include "mpcn/model.hpp"

#include <cmath>

namespace mpcn {

Aggregation aggregation_from_string(const std::string& s) {
  if (s == "concat") return Aggregation::Concat;
  if (s == "additive") return Aggregation::Additive;
  if (s == "neural") return Aggregation::Neural;
  throw UsageError("unknown aggregation scheme: '" + s + "' (want concat|additive|neural)");
}

const char* aggregation_to_string(Aggregation a) {
  switch (a) {
    case Aggregation::Concat: return "concat";
    case Aggregation::Additive: return "additive";
    case Aggregation::Neural: return "neural";
  }
  return "?";
}

void MpcnConfig::validate() const {
  if (d < 1) throw UsageError("mpcn config: embedding width must be positive");
  if (n_p < 1) throw UsageError("mpcn config: pointer count must be at least 1");
  if (l < 0 || l > 2) throw UsageError("mpcn config: feed-forward depth must be 0, 1 or 2");
  if (fm_factors < 1) throw UsageError("mpcn config: fm factor count must be positive");
  if (tau <= 0) throw UsageError("mpcn config: tau must be positive");
  if (dropout_rate < 0 || dropout_rate >= 1)
    throw UsageError("mpcn config: dropout rate must lie in [0,1)");
}

// --- factorization machine -----------------------------------------------------------

template <typename T>
Var<T> fm_layer(Var<T> x, Var<T> w0, Var<T> w, Var<T> factors) {
  Var<T> linear = sum_all(hadamard(w, x));
  Var<T> vx = mul_colvec(factors, x);       // row i: x_i * v_i
  Var<T> col_sums = reduce(vx, 0, Reduce::Sum);
  Var<T> squared_sum = sum_all(hadamard(col_sums, col_sums));
  Var<T> sum_squares = sum_all(hadamard(vx, vx));
  Var<T> pairwise = scale(sub(squared_sum, sum_squares), 0.5);
  return add(add(w0, linear), pairwise);
}

// --- pointer selection ---------------------------------------------------------------

template <typename T>
std::pair<Var<T>, Var<T>> select_pointers(Var<T> masked_affinity, double tau, RngState& rng,
                                          bool hard, bool training) {
  Tape<T>& tape = *masked_affinity.tape;
  const Tensor<T>& sv = tape.value(masked_affinity);
  if (sv.rank() != 2)
    throw DimensionError("select_pointers: affinity must be rank 2, got " +
                         shape_str(sv.shape()));
  T mx = sv.at(0);
  for (int64_t i = 1; i < sv.numel(); ++i) mx = std::max(mx, sv.at(i));
  if (mx <= T(-1e8)) throw NumericError("select_pointers: affinity matrix fully masked");
  Var<T> pooled_user = reduce(masked_affinity, 1, Reduce::Max);
  Var<T> pooled_item = reduce(masked_affinity, 0, Reduce::Max);
  Var<T> p_user = st_gumbel_softmax(pooled_user, tau, rng, hard, training);
  Var<T> p_item = st_gumbel_softmax(pooled_item, tau, rng, hard, training);
  return {p_user, p_item};
}

// --- review gating ---------------------------------------------------------------------

template <typename T>
Var<T> review_gate(Var<T> x, Var<T> w_gate, Var<T> b_gate, Var<T> w_cand, Var<T> b_cand,
                   const Tensor<T>& row_mask01) {
  Tape<T>& tape = *x.tape;
  Var<T> gate = sigmoid(add_rowvec(matmul(x, w_gate), b_gate));
  Var<T> cand = tanh_op(add_rowvec(matmul(x, w_cand), b_cand));
  return mul_colvec(hadamard(gate, cand), tape.constant(row_mask01));
}

// --- word-level co-attention -------------------------------------------------------------

template <typename T>
WordCoattention<T> word_coattention(Var<T> a_words, Var<T> b_words, Var<T> fa, Var<T> fb,
                                    Var<T> m, const Tensor<T>& mask_a, const Tensor<T>& mask_b) {
  Tape<T>& tape = *a_words.tape;
  const int64_t rows_a = tape.value(a_words).dim(0);
  const int64_t rows_b = tape.value(b_words).dim(0);
  const int64_t d = tape.value(a_words).dim(1);

  int64_t cnt_a = 0, cnt_b = 0;
  for (int64_t i = 0; i < mask_a.numel(); ++i) cnt_a += mask_a.at(i) != T(0) ? 1 : 0;
  for (int64_t i = 0; i < mask_b.numel(); ++i) cnt_b += mask_b.at(i) != T(0) ? 1 : 0;
  if (cnt_a == 0 || cnt_b == 0)
    throw NumericError("word co-attention: a side has no usable tokens");

  WordCoattention<T> out;
  out.affinity = matmul(matmul(fa, m), transpose2d(fb));

  // per a-word mean affinity over unmasked b-words, softmaxed over a-words
  Var<T> col = tape.constant(mask_b.reshaped({rows_b, 1}));
  Var<T> mean_a =
      scale(reshape(matmul(out.affinity, col), {rows_a}), 1.0 / static_cast<double>(cnt_b));
  Var<T> att_a = masked_softmax1d(mean_a, mask_a);
  out.a_repr = reshape(matmul(reshape(att_a, {1, rows_a}), a_words), {d});

  Var<T> row = tape.constant(mask_a.reshaped({1, rows_a}));
  Var<T> mean_b =
      scale(reshape(matmul(row, out.affinity), {rows_b}), 1.0 / static_cast<double>(cnt_a));
  Var<T> att_b = masked_softmax1d(mean_b, mask_b);
  out.b_repr = reshape(matmul(reshape(att_b, {1, rows_b}), b_words), {d});
  return out;
}

// --- model ----------------------------------------------------------------------------

template <typename T>
MpcnModel<T>::MpcnModel(const MpcnConfig& cfg, int32_t vocab_size, int32_t max_reviews,
                        int32_t max_tokens, double rating_mean, RngState init_rng)
    : cfg_(cfg), vocab_size_(vocab_size), ld_(max_reviews), lw_(max_tokens) {
  cfg_.validate();
  if (vocab_size < 2) throw UsageError("mpcn: vocabulary must hold the reserved tokens");
  const int64_t d = cfg_.d;

  auto glorot = [&](int64_t fan_in, int64_t fan_out) {
    T limit = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
    return Tensor<T>::uniform({fan_in, fan_out}, init_rng, -limit, limit);
  };

  params_.add("embed.W",
              Tensor<T>::uniform({vocab_size, d}, init_rng, T(-0.05), T(0.05)));
  if (cfg_.use_gates) {
    params_.add("gate.Wg", glorot(d, d));
    params_.add("gate.bg", Tensor<T>::zeros({d}));
    params_.add("gate.Wu", glorot(d, d));
    params_.add("gate.bu", Tensor<T>::zeros({d}));
  }
  if (cfg_.use_review_coattention) {
    for (int h = 0; h < cfg_.n_p; ++h) {
      std::string head = "rlca.h" + std::to_string(h);
      params_.add(head + ".M", glorot(d, d));
      for (int j = 0; j < cfg_.l; ++j) {
        params_.add(head + ".F" + std::to_string(j) + ".W", glorot(d, d));
        params_.add(head + ".F" + std::to_string(j) + ".b", Tensor<T>::zeros({d}));
      }
    }
  }
  if (cfg_.use_word_coattention) {
    params_.add("wlca.M", glorot(d, d));
    for (int j = 0; j < cfg_.l; ++j) {
      params_.add("wlca.F" + std::to_string(j) + ".W", glorot(d, d));
      params_.add("wlca.F" + std::to_string(j) + ".b", Tensor<T>::zeros({d}));
    }
  }
  if (cfg_.aggregation == Aggregation::Neural) {
    int64_t in = static_cast<int64_t>(cfg_.effective_heads() + 1) * d;
    params_.add("agg.W", glorot(in, d));
    params_.add("agg.b", Tensor<T>::zeros({d}));
  }
  if (cfg_.use_fm) {
    int64_t n = 2 * static_cast<int64_t>(cfg_.side_dim());
    params_.add("fm.w0", Tensor<T>::scalar(static_cast<T>(rating_mean)));
    params_.add("fm.w", Tensor<T>::zeros({n}));
    params_.add("fm.V", Tensor<T>::normal({n, cfg_.fm_factors}, init_rng, T(0), T(0.05)));
  }
}

template <typename T>
Var<T> MpcnModel<T>::leaf_of(const std::vector<Var<T>>& leaves, const std::string& name) const {
  int idx = params_.index_of(name);
  if (idx < 0) throw UsageError("mpcn forward: missing parameter leaf " + name);
  return leaves[static_cast<size_t>(idx)];
}

namespace {

template <typename T>
Tensor<T> mask_vector(std::span<const uint8_t> mask) {
  Tensor<T> out({static_cast<int64_t>(mask.size())});
  for (size_t i = 0; i < mask.size(); ++i) out.at(static_cast<int64_t>(i)) = mask[i] ? T(1) : T(0);
  return out;
}

}  // namespace

template <typename T>
struct MpcnModel<T>::Side {
  const ReviewBank* bank = nullptr;
  Var<T> words;      // [ld*lw x d], masked tokens zero
  Var<T> reviews;    // [ld x d]
  Var<T> stacked;    // [ld x lw*d]
  Var<T> sum_embed;  // [d]
  bool has_any = false;
};

template <typename T>
typename MpcnModel<T>::Side MpcnModel<T>::encode_side(const std::vector<Var<T>>& leaves,
                                                      const ReviewBank& bank) const {
  if (bank.max_reviews != ld_ || bank.max_tokens != lw_)
    throw DimensionError("mpcn forward: bank caps " + std::to_string(bank.max_reviews) + "x" +
                         std::to_string(bank.max_tokens) + " do not match model " +
                         std::to_string(ld_) + "x" + std::to_string(lw_));
  Side side;
  side.bank = &bank;
  side.has_any = bank.any_review();
  Var<T> table = leaf_of(leaves, "embed.W");
  side.words = embed_lookup(table, bank.all_tokens(), bank.all_word_mask());
  Var<T> sums = group_sum_rows(side.words, lw_);
  if (cfg_.use_gates) {
    Tensor<T> row_mask = mask_vector<T>(bank.review_mask);
    side.reviews = review_gate(sums, leaf_of(leaves, "gate.Wg"), leaf_of(leaves, "gate.bg"),
                               leaf_of(leaves, "gate.Wu"), leaf_of(leaves, "gate.bu"), row_mask);
  } else {
    side.reviews = sums;
  }
  side.stacked = reshape(side.words, {ld_, static_cast<int64_t>(lw_) * cfg_.d});
  side.sum_embed = reduce(side.words, 0, Reduce::Sum);
  return side;
}

template <typename T>
Var<T> MpcnModel<T>::apply_ff(Var<T> x, const std::string& prefix,
                              const std::vector<Var<T>>& leaves, RngState& rng,
                              bool training) const {
  for (int j = 0; j < cfg_.l; ++j) {
    std::string base = prefix + std::to_string(j);
    x = tanh_op(add_rowvec(matmul(x, leaf_of(leaves, base + ".W")),
                           leaf_of(leaves, base + ".b")));
    x = dropout(x, cfg_.dropout_rate, training, rng);
  }
  return x;
}

template <typename T>
std::pair<Var<T>, Var<T>> MpcnModel<T>::word_attend(Tape<T>& tape,
                                                    const std::vector<Var<T>>& leaves,
                                                    Var<T> a_words, Var<T> b_words,
                                                    const Tensor<T>& mask_a,
                                                    const Tensor<T>& mask_b, RngState& rng,
                                                    const ForwardOptions& opts,
                                                    HeadTrace* trace) const {
  Var<T> fa = apply_ff(a_words, "wlca.F", leaves, rng, opts.training);
  Var<T> fb = apply_ff(b_words, "wlca.F", leaves, rng, opts.training);
  WordCoattention<T> wc =
      word_coattention(a_words, b_words, fa, fb, leaf_of(leaves, "wlca.M"), mask_a, mask_b);
  if (trace && opts.want_word_affinity)
    trace->word_affinity = tape.value(wc.affinity).to_doubles();
  return {wc.a_repr, wc.b_repr};
}

template <typename T>
Var<T> MpcnModel<T>::forward(Tape<T>& tape, const std::vector<Var<T>>& leaves,
                             const ReviewBank& user_bank, const ReviewBank& item_bank,
                             RngState rng, const ForwardOptions& opts,
                             PointerTrace* trace) const {
  const int64_t d = cfg_.d;
  Side u = encode_side(leaves, user_bank);
  Side b = encode_side(leaves, item_bank);
  const bool both = u.has_any && b.has_any;
  const bool hard = opts.pointer_mode == PointerMode::Hard;

  if (trace) {
    trace->heads.clear();
    trace->fallback = false;
    trace->ld = ld_;
    trace->lw = lw_;
  }

  std::vector<Var<T>> a_outs, b_outs;

  if (cfg_.use_review_coattention) {
    if (!both) {
      // one side is empty: pointers cannot be matched, the prediction rests
      // on the sum embeddings
      if (trace) trace->fallback = true;
      int32_t ua = u.has_any ? u.bank->first_unmasked() : 0;
      int32_t ib = b.has_any ? b.bank->first_unmasked() : 0;
      for (int h = 0; h < cfg_.n_p; ++h) {
        a_outs.push_back(tape.constant(Tensor<T>::zeros({d})));
        b_outs.push_back(tape.constant(Tensor<T>::zeros({d})));
        if (trace) {
          HeadTrace ht;
          ht.user_review = ua;
          ht.item_review = ib;
          if (opts.want_affinity)
            ht.affinity.assign(static_cast<size_t>(ld_) * ld_, -1e9);
          trace->heads.push_back(std::move(ht));
        }
      }
    } else {
      // review-pair validity mask shared by all heads
      Tensor<T> pair_mask({ld_, ld_});
      Tensor<T> neg_pair({ld_, ld_});
      for (int64_t i = 0; i < ld_; ++i)
        for (int64_t j = 0; j < ld_; ++j) {
          bool ok = user_bank.review_mask[static_cast<size_t>(i)] &&
                    item_bank.review_mask[static_cast<size_t>(j)];
          pair_mask.at2(i, j) = ok ? T(1) : T(0);
          neg_pair.at2(i, j) = ok ? T(0) : T(-1e9);
        }
      Var<T> pair_mask_v = tape.constant(pair_mask);
      Var<T> neg_pair_v = tape.constant(neg_pair);

      for (int h = 0; h < cfg_.n_p; ++h) {
        RngState head_rng = rng.fork(static_cast<uint64_t>(h));
        std::string head = "rlca.h" + std::to_string(h);
        Var<T> fa = apply_ff(u.reviews, head + ".F", leaves, head_rng, opts.training);
        Var<T> fb = apply_ff(b.reviews, head + ".F", leaves, head_rng, opts.training);
        Var<T> affinity = matmul(matmul(fa, leaf_of(leaves, head + ".M")), transpose2d(fb));
        Var<T> masked = add(hadamard(affinity, pair_mask_v), neg_pair_v);

        auto [p_a, p_b] =
            select_pointers(masked, cfg_.tau, head_rng, hard, opts.training);
        int32_t idx_a = static_cast<int32_t>(
            argmax_lowest_t(tape.value(p_a).data(), ld_));
        int32_t idx_b = static_cast<int32_t>(
            argmax_lowest_t(tape.value(p_b).data(), ld_));

        Var<T> a_sel = reshape(matmul(reshape(p_a, {1, ld_}), u.stacked), {lw_, d});
        Var<T> b_sel = reshape(matmul(reshape(p_b, {1, ld_}), b.stacked), {lw_, d});

        HeadTrace ht;
        ht.user_review = idx_a;
        ht.item_review = idx_b;
        if (trace && opts.want_affinity) ht.affinity = tape.value(masked).to_doubles();

        if (cfg_.use_word_coattention) {
          Tensor<T> wm_a = mask_vector<T>(user_bank.review_word_mask(idx_a));
          Tensor<T> wm_b = mask_vector<T>(item_bank.review_word_mask(idx_b));
          auto [ao, bo] = word_attend(tape, leaves, a_sel, b_sel, wm_a, wm_b, head_rng, opts,
                                      trace ? &ht : nullptr);
          a_outs.push_back(ao);
          b_outs.push_back(bo);
        } else {
          // pointed review embeddings stand in for the word-level outputs
          a_outs.push_back(reshape(matmul(reshape(p_a, {1, ld_}), u.reviews), {d}));
          b_outs.push_back(reshape(matmul(reshape(p_b, {1, ld_}), b.reviews), {d}));
        }
        if (trace) trace->heads.push_back(std::move(ht));
      }
    }
  } else if (cfg_.use_word_coattention) {
    // flat variant: one word-level pass over the full banks
    if (both) {
      RngState flat_rng = rng.fork(0);
      Tensor<T> wm_a = mask_vector<T>(user_bank.all_word_mask());
      Tensor<T> wm_b = mask_vector<T>(item_bank.all_word_mask());
      HeadTrace ht;
      auto [ao, bo] = word_attend(tape, leaves, u.words, b.words, wm_a, wm_b, flat_rng, opts,
                                  trace ? &ht : nullptr);
      a_outs.push_back(ao);
      b_outs.push_back(bo);
      if (trace) trace->heads.push_back(std::move(ht));
    } else {
      if (trace) trace->fallback = true;
      a_outs.push_back(tape.constant(Tensor<T>::zeros({d})));
      b_outs.push_back(tape.constant(Tensor<T>::zeros({d})));
    }
  }

  // aggregation; the sum embedding rides along in every scheme
  auto aggregate = [&](std::vector<Var<T>> outs, Var<T> sum_embed, RngState& agg_rng) {
    outs.push_back(sum_embed);
    switch (cfg_.aggregation) {
      case Aggregation::Concat:
        return concat1d(outs);
      case Aggregation::Additive: {
        Var<T> acc = outs[0];
        for (size_t i = 1; i < outs.size(); ++i) acc = add(acc, outs[i]);
        return acc;
      }
      case Aggregation::Neural: {
        Var<T> cat = concat1d(outs);
        int64_t in = tape.value(cat).dim(0);
        Var<T> z = reshape(matmul(reshape(cat, {1, in}), leaf_of(leaves, "agg.W")), {d});
        z = add(z, leaf_of(leaves, "agg.b"));
        return dropout(relu(z), cfg_.dropout_rate, opts.training, agg_rng);
      }
    }
    throw UsageError("unknown aggregation scheme");
  };
  RngState agg_rng = rng.fork(0x9000);
  Var<T> a_f = aggregate(std::move(a_outs), u.sum_embed, agg_rng);
  Var<T> b_f = aggregate(std::move(b_outs), b.sum_embed, agg_rng);

  if (cfg_.use_fm) {
    Var<T> x = concat1d(std::vector<Var<T>>{a_f, b_f});
    return fm_layer(x, leaf_of(leaves, "fm.w0"), leaf_of(leaves, "fm.w"),
                    leaf_of(leaves, "fm.V"));
  }
  return sum_all(hadamard(a_f, b_f));
}

template <typename T>
Var<T> MpcnModel<T>::predict(Tape<T>& tape, const std::vector<Var<T>>& leaves,
                             const ExampleRef& ex, RngState rng, bool training) const {
  if (!ex.user_bank || !ex.item_bank)
    throw UsageError("mpcn predict: example lacks review banks");
  ForwardOptions opts;
  opts.training = training;
  opts.pointer_mode = PointerMode::Hard;
  return forward(tape, leaves, *ex.user_bank, *ex.item_bank, rng, opts, nullptr);
}

#define MPCN_INSTANTIATE_MODEL(T)                                                      \
  template Var<T> fm_layer<T>(Var<T>, Var<T>, Var<T>, Var<T>);                         \
  template std::pair<Var<T>, Var<T>> select_pointers<T>(Var<T>, double, RngState&, bool, \
                                                        bool);                         \
  template Var<T> review_gate<T>(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>, const Tensor<T>&); \
  template WordCoattention<T> word_coattention<T>(Var<T>, Var<T>, Var<T>, Var<T>, Var<T>,   \
                                                  const Tensor<T>&, const Tensor<T>&);      \
  template class MpcnModel<T>;

MPCN_INSTANTIATE_MODEL(float)
MPCN_INSTANTIATE_MODEL(double)

#undef MPCN_INSTANTIATE_MODEL

}  // namespace mpcn
