#include "mpcn/experiment.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace mpcn {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw UsageError("config: key '" + key + "' wants an integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw UsageError("config: key '" + key + "' wants an unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw UsageError("config: key '" + key + "' wants a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw UsageError("config: key '" + key + "' wants a boolean, got '" + v + "'");
}

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

const std::vector<std::string>& ExperimentConfig::keys() {
  static const std::vector<std::string> k = {
      "model",     "precision",  "d",
      "pointers",  "l",          "aggregation",
      "gates",     "fm",         "word_coattention",
      "review_coattention",      "fm_factors",
      "tau",       "dropout",    "l2",
      "lr",        "epochs",     "patience",
      "batch",     "seed",       "mf_biases",
      "k_core",    "min_count",  "max_reviews",
      "max_review_tokens"};
  return k;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  if (key == "model") model = value;
  else if (key == "precision") precision = value;
  else if (key == "d") d = parse_int(key, value);
  else if (key == "pointers") pointers = parse_int(key, value);
  else if (key == "l") l = parse_int(key, value);
  else if (key == "aggregation") aggregation = value;
  else if (key == "gates") gates = parse_bool(key, value);
  else if (key == "fm") fm = parse_bool(key, value);
  else if (key == "word_coattention") word_coattention = parse_bool(key, value);
  else if (key == "review_coattention") review_coattention = parse_bool(key, value);
  else if (key == "fm_factors") fm_factors = parse_int(key, value);
  else if (key == "tau") tau = parse_double(key, value);
  else if (key == "dropout") dropout = parse_double(key, value);
  else if (key == "l2") l2 = parse_double(key, value);
  else if (key == "lr") lr = parse_double(key, value);
  else if (key == "epochs") epochs = parse_int(key, value);
  else if (key == "patience") patience = parse_int(key, value);
  else if (key == "batch") batch = parse_int(key, value);
  else if (key == "seed") seed = parse_u64(key, value);
  else if (key == "mf_biases") mf_biases = parse_bool(key, value);
  else if (key == "k_core") k_core = parse_int(key, value);
  else if (key == "min_count") min_count = parse_int(key, value);
  else if (key == "max_reviews") max_reviews = parse_int(key, value);
  else if (key == "max_review_tokens") max_review_tokens = parse_int(key, value);
  else throw UsageError("config: unknown key '" + key + "'");
}

std::string ExperimentConfig::get(const std::string& key) const {
  if (key == "model") return model;
  if (key == "precision") return precision;
  if (key == "d") return std::to_string(d);
  if (key == "pointers") return std::to_string(pointers);
  if (key == "l") return std::to_string(l);
  if (key == "aggregation") return aggregation;
  if (key == "gates") return gates ? "1" : "0";
  if (key == "fm") return fm ? "1" : "0";
  if (key == "word_coattention") return word_coattention ? "1" : "0";
  if (key == "review_coattention") return review_coattention ? "1" : "0";
  if (key == "fm_factors") return std::to_string(fm_factors);
  if (key == "tau") return fmt_double(tau);
  if (key == "dropout") return fmt_double(dropout);
  if (key == "l2") return fmt_double(l2);
  if (key == "lr") return fmt_double(lr);
  if (key == "epochs") return std::to_string(epochs);
  if (key == "patience") return std::to_string(patience);
  if (key == "batch") return std::to_string(batch);
  if (key == "seed") return std::to_string(seed);
  if (key == "mf_biases") return mf_biases ? "1" : "0";
  if (key == "k_core") return std::to_string(k_core);
  if (key == "min_count") return std::to_string(min_count);
  if (key == "max_reviews") return std::to_string(max_reviews);
  if (key == "max_review_tokens") return std::to_string(max_review_tokens);
  throw UsageError("config: unknown key '" + key + "'");
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

void ExperimentConfig::merge_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string t = trim(line);
    if (t.empty()) continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected key = value");
    set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
}

std::string ExperimentConfig::serialize() const {
  std::ostringstream os;
  for (const auto& k : keys()) os << k << " = " << get(k) << "\n";
  return os.str();
}

void ExperimentConfig::validate() const {
  if (model != "mpcn" && model != "mf" && model != "fm" && model != "mlp")
    throw UsageError("config: unknown model '" + model + "' (want mpcn|mf|fm|mlp)");
  if (precision != "f32" && precision != "f64")
    throw UsageError("config: unknown precision '" + precision + "' (want f32|f64)");
  if (model == "mpcn") mpcn_config().validate();
  train_config().validate();
  if (k_core < 1) throw UsageError("config: k_core must be at least 1");
  if (min_count < 1) throw UsageError("config: min_count must be at least 1");
  if (max_reviews < 1 || max_review_tokens < 1)
    throw UsageError("config: review bank caps must be positive");
}

MpcnConfig ExperimentConfig::mpcn_config() const {
  MpcnConfig c;
  c.d = d;
  c.n_p = pointers;
  c.l = l;
  c.aggregation = aggregation_from_string(aggregation);
  c.use_gates = gates;
  c.use_fm = fm;
  c.use_word_coattention = word_coattention;
  c.use_review_coattention = review_coattention;
  c.fm_factors = fm_factors;
  c.tau = tau;
  c.dropout_rate = dropout;
  return c;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig c;
  c.lr = lr;
  c.max_epochs = epochs;
  c.patience = patience;
  c.l2 = l2;
  c.batch_size = batch;
  c.seed = seed;
  return c;
}

PrepareOptions ExperimentConfig::prepare_options() const {
  PrepareOptions o;
  o.k_core = k_core;
  o.min_count = min_count;
  o.max_reviews = max_reviews;
  o.max_tokens = max_review_tokens;
  o.seed = seed;
  return o;
}

// --- ModelBundle ----------------------------------------------------------------------

namespace {

template <typename T>
std::unique_ptr<RatingModel<T>> build_model(const ExperimentConfig& cfg, int32_t users,
                                            int32_t items, int32_t vocab, int32_t max_reviews,
                                            int32_t max_tokens, double rating_mean) {
  RngState init_rng = RngState(cfg.seed).fork(0x1217);
  if (cfg.model == "mpcn")
    return std::make_unique<MpcnModel<T>>(cfg.mpcn_config(), vocab, max_reviews, max_tokens,
                                          rating_mean, init_rng);
  if (cfg.model == "mf")
    return std::make_unique<MfModel<T>>(users, items, cfg.d, rating_mean, cfg.mf_biases, init_rng);
  if (cfg.model == "fm")
    return std::make_unique<FmBaselineModel<T>>(users, items, cfg.d, cfg.fm_factors, rating_mean,
                                                init_rng);
  if (cfg.model == "mlp")
    return std::make_unique<MlpModel<T>>(users, items, cfg.d, rating_mean, cfg.dropout, init_rng);
  throw UsageError("unknown model '" + cfg.model + "' (want mpcn|mf|fm|mlp)");
}

}  // namespace

ModelBundle ModelBundle::create(const ExperimentConfig& cfg, const Snapshot& snap) {
  cfg.validate();
  ModelBundle b;
  b.config = cfg;
  b.meta["users"] = std::to_string(snap.user_count());
  b.meta["items"] = std::to_string(snap.item_count());
  b.meta["vocab"] = std::to_string(snap.vocab.size());
  b.meta["max_reviews"] = std::to_string(snap.max_reviews);
  b.meta["max_review_tokens"] = std::to_string(snap.max_tokens);
  b.meta["rating_mean"] = fmt_double(snap.train_rating_mean);
  if (cfg.precision == "f64")
    b.f64 = build_model<double>(cfg, snap.user_count(), snap.item_count(), snap.vocab.size(),
                                snap.max_reviews, snap.max_tokens, snap.train_rating_mean);
  else
    b.f32 = build_model<float>(cfg, snap.user_count(), snap.item_count(), snap.vocab.size(),
                               snap.max_reviews, snap.max_tokens, snap.train_rating_mean);
  return b;
}

int64_t ModelBundle::meta_i64(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw DataError("checkpoint metadata lacks key '" + key + "'");
  return std::stoll(it->second);
}

double ModelBundle::meta_f64(const std::string& key) const {
  auto it = meta.find(key);
  if (it == meta.end()) throw DataError("checkpoint metadata lacks key '" + key + "'");
  return std::stod(it->second);
}

ModelBundle ModelBundle::load(const std::string& path) {
  CheckpointInfo info = read_checkpoint_info(path);
  ModelBundle b;
  b.config = ExperimentConfig::parse(info.config_text);
  b.meta = info.meta;
  if (b.config.model != info.model_kind)
    throw DataError("checkpoint " + path + ": header kind '" + info.model_kind +
                    "' disagrees with config model '" + b.config.model + "'");
  auto users = static_cast<int32_t>(b.meta_i64("users"));
  auto items = static_cast<int32_t>(b.meta_i64("items"));
  auto vocab = static_cast<int32_t>(b.meta_i64("vocab"));
  auto mr = static_cast<int32_t>(b.meta_i64("max_reviews"));
  auto mt = static_cast<int32_t>(b.meta_i64("max_review_tokens"));
  double mean = b.meta_f64("rating_mean");
  if (b.config.precision == "f64") {
    b.f64 = build_model<double>(b.config, users, items, vocab, mr, mt, mean);
    load_checkpoint_values(path, b.f64->params());
  } else {
    b.f32 = build_model<float>(b.config, users, items, vocab, mr, mt, mean);
    load_checkpoint_values(path, b.f32->params());
  }
  return b;
}

void ModelBundle::save(const std::string& path) const {
  if (f64)
    save_checkpoint(path, f64->kind(), config.serialize(), meta, f64->params());
  else if (f32)
    save_checkpoint(path, f32->kind(), config.serialize(), meta, f32->params());
  else
    throw UsageError("model bundle is empty");
}

void ModelBundle::check_compatible(const Snapshot& snap) const {
  auto expect = [&](const std::string& key, int64_t actual) {
    int64_t stored = meta_i64(key);
    if (stored != actual)
      throw DataError("checkpoint/snapshot mismatch: " + key + " is " + std::to_string(stored) +
                      " in the checkpoint but " + std::to_string(actual) + " in the snapshot");
  };
  expect("users", snap.user_count());
  expect("items", snap.item_count());
  expect("vocab", snap.vocab.size());
  expect("max_reviews", snap.max_reviews);
  expect("max_review_tokens", snap.max_tokens);
}

template <>
RatingModel<float>& ModelBundle::model<float>() {
  if (!f32) throw UsageError("bundle holds no f32 model");
  return *f32;
}
template <>
RatingModel<double>& ModelBundle::model<double>() {
  if (!f64) throw UsageError("bundle holds no f64 model");
  return *f64;
}
template <>
const RatingModel<float>& ModelBundle::model<float>() const {
  if (!f32) throw UsageError("bundle holds no f32 model");
  return *f32;
}
template <>
const RatingModel<double>& ModelBundle::model<double>() const {
  if (!f64) throw UsageError("bundle holds no f64 model");
  return *f64;
}

template <>
const MpcnModel<float>* ModelBundle::mpcn<float>() const {
  return dynamic_cast<const MpcnModel<float>*>(f32.get());
}
template <>
const MpcnModel<double>* ModelBundle::mpcn<double>() const {
  return dynamic_cast<const MpcnModel<double>*>(f64.get());
}

// --- example assembly and runs -----------------------------------------------------------

std::vector<ExampleRef> make_examples(const Snapshot& snap, const std::vector<int64_t>& indices) {
  std::vector<ExampleRef> out;
  out.reserve(indices.size());
  for (int64_t i : indices) {
    const Interaction& ix = snap.interactions[static_cast<size_t>(i)];
    ExampleRef ex;
    ex.user = snap.user_of(ix.user_id);
    ex.item = snap.item_of(ix.item_id);
    ex.user_bank = &snap.user_banks[static_cast<size_t>(ex.user)];
    ex.item_bank = &snap.item_banks[static_cast<size_t>(ex.item)];
    ex.rating = ix.rating;
    ex.key = i;
    out.push_back(ex);
  }
  return out;
}

namespace {

template <typename T>
TrainOutcome train_typed(RatingModel<T>& model, const ExperimentConfig& cfg, const Snapshot& snap,
                         std::ostream* history_out) {
  auto train_ex = make_examples(snap, snap.split.train);
  auto dev_ex = make_examples(snap, snap.split.dev);
  TrainOutcome out;
  out.result = train_model(model, train_ex, dev_ex, cfg.train_config(), history_out);
  if (!snap.split.test.empty())
    out.test_mse = evaluate_mse(model, make_examples(snap, snap.split.test));
  return out;
}

}  // namespace

TrainOutcome train_bundle(ModelBundle& bundle, const Snapshot& snap, std::ostream* history_out) {
  bundle.check_compatible(snap);
  TrainOutcome out = bundle.is_f64()
                         ? train_typed(*bundle.f64, bundle.config, snap, history_out)
                         : train_typed(*bundle.f32, bundle.config, snap, history_out);
  bundle.meta["best_epoch"] = std::to_string(out.result.best_epoch);
  bundle.meta["best_dev_mse"] = fmt_double(out.result.best_dev_mse);
  bundle.meta["early_stopped"] = out.result.early_stopped ? "1" : "0";
  bundle.meta["epochs_run"] = std::to_string(out.result.history.size());
  return out;
}

double evaluate_bundle(const ModelBundle& bundle, const Snapshot& snap, const std::string& split,
                       int64_t* n_out) {
  bundle.check_compatible(snap);
  const std::vector<int64_t>* idx = nullptr;
  if (split == "train") idx = &snap.split.train;
  else if (split == "dev") idx = &snap.split.dev;
  else if (split == "test") idx = &snap.split.test;
  else throw UsageError("evaluate: unknown split '" + split + "' (want train|dev|test)");
  auto examples = make_examples(snap, *idx);
  if (n_out) *n_out = static_cast<int64_t>(examples.size());
  return bundle.is_f64() ? evaluate_mse(*bundle.f64, examples)
                         : evaluate_mse(*bundle.f32, examples);
}

std::string snapshot_stats_json(const Snapshot& snap) {
  nlohmann::ordered_json j;
  j["users"] = snap.user_count();
  j["items"] = snap.item_count();
  j["interactions"] = snap.interactions.size();
  j["vocab"] = snap.vocab.size();
  j["train"] = snap.split.train.size();
  j["dev"] = snap.split.dev.size();
  j["test"] = snap.split.test.size();
  j["k_core"] = snap.k_core;
  j["min_count"] = snap.min_count;
  j["max_reviews"] = snap.max_reviews;
  j["max_review_tokens"] = snap.max_tokens;
  j["parse_skipped"] = snap.parse_skipped;
  j["seed"] = snap.seed;
  j["format_version"] = Snapshot::kFormatVersion;
  return j.dump();
}

}  // namespace mpcn
