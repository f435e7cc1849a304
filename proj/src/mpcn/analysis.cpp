#include "mpcn/analysis.hpp"

#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mpcn {

namespace {

double pct(int64_t n, int64_t total) {
  return total == 0 ? 0.0 : 100.0 * static_cast<double>(n) / static_cast<double>(total);
}

}  // namespace

double PointerBehaviorReport::pct_all_unique() const { return pct(n_all_unique, sample_size); }
double PointerBehaviorReport::pct_one_repeated() const { return pct(n_one_repeated, sample_size); }
double PointerBehaviorReport::pct_all_repeated() const { return pct(n_all_repeated, sample_size); }
double PointerBehaviorReport::pct_one_to_many() const { return pct(n_one_to_many, sample_size); }

std::string PointerBehaviorReport::to_json() const {
  nlohmann::ordered_json j;
  j["n_p"] = n_p;
  j["sample_size"] = sample_size;
  j["counts"] = {{"all_unique", n_all_unique},
                 {"one_repeated", n_one_repeated},
                 {"all_repeated", n_all_repeated},
                 {"one_to_many", n_one_to_many}};
  j["percent"] = {{"all_unique", pct_all_unique()},
                  {"one_repeated", pct_one_repeated()},
                  {"all_repeated", pct_all_repeated()},
                  {"one_to_many", pct_one_to_many()}};
  return j.dump();
}

PairClassification classify_pointer_pairs(const std::vector<std::pair<int32_t, int32_t>>& pairs) {
  if (pairs.size() < 2)
    throw UsageError("pointer behavior needs at least two pointer heads");
  PairClassification c;

  std::set<int32_t> users, items;
  for (const auto& p : pairs) {
    users.insert(p.first);
    items.insert(p.second);
  }
  c.all_unique = users.size() == pairs.size() && items.size() == pairs.size();

  c.all_repeated = true;
  for (const auto& p : pairs) c.all_repeated = c.all_repeated && p == pairs[0];

  c.one_repeated = !c.all_unique && !c.all_repeated;

  for (size_t i = 0; i < pairs.size() && !c.one_to_many; ++i)
    for (size_t j = i + 1; j < pairs.size() && !c.one_to_many; ++j) {
      bool same_user_diff_item =
          pairs[i].first == pairs[j].first && pairs[i].second != pairs[j].second;
      bool same_item_diff_user =
          pairs[i].second == pairs[j].second && pairs[i].first != pairs[j].first;
      c.one_to_many = same_user_diff_item || same_item_diff_user;
    }
  return c;
}

namespace {

template <typename T>
PointerTrace trace_eval_forward(const MpcnModel<T>& model, const ReviewBank& user_bank,
                                const ReviewBank& item_bank, bool want_affinity) {
  Tape<T> tape;
  auto leaves = model.params().register_leaves(tape, false);
  typename MpcnModel<T>::ForwardOptions opts;
  opts.training = false;
  opts.pointer_mode = PointerMode::Hard;
  opts.want_affinity = want_affinity;
  PointerTrace trace;
  model.forward(tape, leaves, user_bank, item_bank, RngState(0), opts, &trace);
  return trace;
}

template <typename T>
PointerBehaviorReport analyze_typed(const MpcnModel<T>& model, const Snapshot& snap,
                                    int64_t sample_size, uint64_t seed) {
  if (model.config().n_p < 2)
    throw UsageError("analyze-pointers: needs a model with at least 2 pointers, got " +
                     std::to_string(model.config().n_p));
  if (!model.config().use_review_coattention)
    throw UsageError("analyze-pointers: the model has no review-level pointer stage");
  if (snap.split.test.empty()) throw DataError("analyze-pointers: snapshot has no test split");

  std::vector<int64_t> test_idx = snap.split.test;
  RngState rng(seed);
  for (int64_t i = static_cast<int64_t>(test_idx.size()) - 1; i > 0; --i) {
    int64_t j = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(i + 1)));
    std::swap(test_idx[static_cast<size_t>(i)], test_idx[static_cast<size_t>(j)]);
  }
  if (sample_size < 1) throw UsageError("analyze-pointers: sample size must be positive");
  if (static_cast<int64_t>(test_idx.size()) > sample_size) test_idx.resize(sample_size);

  PointerBehaviorReport report;
  report.n_p = model.config().n_p;
  report.sample_size = static_cast<int64_t>(test_idx.size());
  for (int64_t idx : test_idx) {
    const Interaction& ix = snap.interactions[static_cast<size_t>(idx)];
    const ReviewBank& ub = snap.user_banks[static_cast<size_t>(snap.user_of(ix.user_id))];
    const ReviewBank& ib = snap.item_banks[static_cast<size_t>(snap.item_of(ix.item_id))];
    PointerTrace trace = trace_eval_forward(model, ub, ib, false);
    std::vector<std::pair<int32_t, int32_t>> pairs;
    for (const auto& h : trace.heads) pairs.emplace_back(h.user_review, h.item_review);
    PairClassification c = classify_pointer_pairs(pairs);
    report.n_all_unique += c.all_unique ? 1 : 0;
    report.n_one_repeated += c.one_repeated ? 1 : 0;
    report.n_all_repeated += c.all_repeated ? 1 : 0;
    report.n_one_to_many += c.one_to_many ? 1 : 0;
  }
  return report;
}

}  // namespace

PointerBehaviorReport analyze_pointers(const ModelBundle& bundle, const Snapshot& snap,
                                       int64_t sample_size, uint64_t seed) {
  bundle.check_compatible(snap);
  if (bundle.is_f64()) {
    const MpcnModel<double>* m = bundle.mpcn<double>();
    if (!m) throw UsageError("analyze-pointers: checkpoint is not an mpcn model");
    return analyze_typed(*m, snap, sample_size, seed);
  }
  const MpcnModel<float>* m = bundle.mpcn<float>();
  if (!m) throw UsageError("analyze-pointers: checkpoint is not an mpcn model");
  return analyze_typed(*m, snap, sample_size, seed);
}

namespace {

std::string review_text_of(const Snapshot& snap, const ReviewBank& bank, int32_t slot) {
  if (slot < 0 || slot >= bank.max_reviews) return "";
  int64_t src = bank.source[static_cast<size_t>(slot)];
  if (src < 0) return "";
  return snap.interactions[static_cast<size_t>(src)].review_text;
}

template <typename T>
std::vector<std::string> export_typed(const MpcnModel<T>& model, const Snapshot& snap,
                                      const std::string& user_id, const std::string& item_id,
                                      const std::string& out_prefix) {
  const ReviewBank& ub = snap.user_banks[static_cast<size_t>(snap.user_of(user_id))];
  const ReviewBank& ib = snap.item_banks[static_cast<size_t>(snap.item_of(item_id))];
  PointerTrace trace = trace_eval_forward(model, ub, ib, true);

  std::vector<std::string> written;
  for (size_t h = 0; h < trace.heads.size(); ++h) {
    std::string path = out_prefix + ".head" + std::to_string(h) + ".csv";
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("cannot write affinity csv: " + path);
    f << std::setprecision(17);
    const auto& a = trace.heads[h].affinity;
    for (int32_t r = 0; r < trace.ld; ++r) {
      for (int32_t c = 0; c < trace.ld; ++c) {
        if (c) f << ",";
        f << a[static_cast<size_t>(r) * trace.ld + c];
      }
      f << "\n";
    }
    if (!f) throw DataError("short write to affinity csv: " + path);
    written.push_back(path);
  }

  nlohmann::ordered_json j;
  j["user_id"] = user_id;
  j["item_id"] = item_id;
  j["fallback"] = trace.fallback;
  j["pointers"] = nlohmann::json::array();
  for (const auto& h : trace.heads) {
    nlohmann::ordered_json p;
    p["pa"] = h.user_review;
    p["pb"] = h.item_review;
    p["user_review_text"] = review_text_of(snap, ub, h.user_review);
    p["item_review_text"] = review_text_of(snap, ib, h.item_review);
    j["pointers"].push_back(p);
  }
  std::string jpath = out_prefix + ".pointers.json";
  std::ofstream jf(jpath, std::ios::trunc);
  if (!jf) throw DataError("cannot write pointer sidecar: " + jpath);
  jf << j.dump(2) << "\n";
  written.push_back(jpath);
  return written;
}

}  // namespace

std::vector<std::string> export_affinity(const ModelBundle& bundle, const Snapshot& snap,
                                         const std::string& user_id, const std::string& item_id,
                                         const std::string& out_prefix) {
  bundle.check_compatible(snap);
  if (bundle.is_f64()) {
    const MpcnModel<double>* m = bundle.mpcn<double>();
    if (!m) throw UsageError("export-affinity: checkpoint is not an mpcn model");
    return export_typed(*m, snap, user_id, item_id, out_prefix);
  }
  const MpcnModel<float>* m = bundle.mpcn<float>();
  if (!m) throw UsageError("export-affinity: checkpoint is not an mpcn model");
  return export_typed(*m, snap, user_id, item_id, out_prefix);
}

}  // namespace mpcn
