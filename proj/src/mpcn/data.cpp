#include "mpcn/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "mpcn/wire.hpp"

namespace mpcn {

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

const char* pick_key(const nlohmann::json& j, const char* a, const char* b) {
  if (j.contains(a)) return a;
  if (j.contains(b)) return b;
  return nullptr;
}

bool parse_line(const std::string& line, Interaction& out) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded() || !j.is_object()) return false;

  const char* ku = pick_key(j, "user_id", "reviewerID");
  const char* ki = pick_key(j, "item_id", "asin");
  const char* kr = pick_key(j, "rating", "overall");
  const char* kt = pick_key(j, "review_text", "reviewText");
  const char* ks = pick_key(j, "timestamp", "unixReviewTime");
  if (!ku || !ki || !kr || !kt || !ks) return false;

  if (!j[ku].is_string() || !j[ki].is_string() || !j[kr].is_number() || !j[kt].is_string() ||
      !j[ks].is_number_integer())
    return false;

  out.user_id = j[ku].get<std::string>();
  out.item_id = j[ki].get<std::string>();
  out.rating = j[kr].get<double>();
  out.review_text = j[kt].get<std::string>();
  out.timestamp = j[ks].get<int64_t>();
  if (out.user_id.empty() || out.item_id.empty()) return false;
  if (!std::isfinite(out.rating)) return false;
  return true;
}

}  // namespace

ParseResult parse_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open corpus file: " + path);
  ParseResult res;
  std::string line;
  int64_t total = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++total;
    Interaction ix;
    if (parse_line(line, ix)) {
      res.interactions.push_back(std::move(ix));
    } else {
      ++res.skipped;
    }
  }
  if (total > 0 && res.skipped * 10 > total)
    throw DataError("corpus " + path + ": " + std::to_string(res.skipped) + " of " +
                    std::to_string(total) + " lines malformed (over 10%)");
  return res;
}

std::vector<Interaction> k_core_filter(std::vector<Interaction> interactions, int k) {
  if (k < 1) throw UsageError("k_core_filter: k must be at least 1, got " + std::to_string(k));
  const int64_t n = static_cast<int64_t>(interactions.size());
  std::unordered_map<std::string, int64_t> ucount, icount;
  for (const auto& ix : interactions) {
    ++ucount[ix.user_id];
    ++icount[ix.item_id];
  }
  std::vector<uint8_t> removed(static_cast<size_t>(n), 0);
  bool changed = true;
  while (changed) {
    changed = false;
    for (int64_t i = 0; i < n; ++i) {
      if (removed[static_cast<size_t>(i)]) continue;
      const auto& ix = interactions[static_cast<size_t>(i)];
      if (ucount[ix.user_id] < k || icount[ix.item_id] < k) {
        removed[static_cast<size_t>(i)] = 1;
        --ucount[ix.user_id];
        --icount[ix.item_id];
        changed = true;
      }
    }
  }
  std::vector<Interaction> out;
  out.reserve(interactions.size());
  for (int64_t i = 0; i < n; ++i)
    if (!removed[static_cast<size_t>(i)]) out.push_back(std::move(interactions[static_cast<size_t>(i)]));
  return out;
}

DatasetSplit time_split(const std::vector<Interaction>& interactions) {
  std::unordered_map<std::string, std::vector<int64_t>> per_user;
  for (int64_t i = 0; i < static_cast<int64_t>(interactions.size()); ++i)
    per_user[interactions[static_cast<size_t>(i)].user_id].push_back(i);

  DatasetSplit split;
  for (auto& [user, idxs] : per_user) {
    // stable sort keeps input order among equal timestamps
    std::stable_sort(idxs.begin(), idxs.end(), [&](int64_t a, int64_t b) {
      return interactions[static_cast<size_t>(a)].timestamp <
             interactions[static_cast<size_t>(b)].timestamp;
    });
    if (idxs.size() < 3) {
      for (int64_t i : idxs) split.train.push_back(i);
      continue;
    }
    split.test.push_back(idxs.back());
    split.dev.push_back(idxs[idxs.size() - 2]);
    for (size_t i = 0; i + 2 < idxs.size(); ++i) split.train.push_back(idxs[i]);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.dev.begin(), split.dev.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

Vocabulary build_vocab(const std::vector<Interaction>& interactions,
                       const std::vector<int64_t>& train_indices, int min_count) {
  std::unordered_map<std::string, int64_t> counts;
  for (int64_t i : train_indices)
    for (auto& tok : tokenize(interactions[static_cast<size_t>(i)].review_text)) ++counts[tok];

  std::vector<std::pair<std::string, int64_t>> kept;
  for (auto& [tok, c] : counts)
    if (c >= min_count) kept.emplace_back(tok, c);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocabulary v;
  v.id_to_token = {"<pad>", "<unk>"};
  for (auto& [tok, c] : kept) {
    v.token_to_id[tok] = v.size();
    v.id_to_token.push_back(tok);
  }
  return v;
}

void ReviewBank::init(std::string owner, int32_t n_reviews_cap, int32_t n_tokens_cap) {
  owner_id = std::move(owner);
  max_reviews = n_reviews_cap;
  max_tokens = n_tokens_cap;
  tokens.assign(static_cast<size_t>(max_reviews) * max_tokens, Vocabulary::kPad);
  review_mask.assign(static_cast<size_t>(max_reviews), 0);
  word_mask.assign(static_cast<size_t>(max_reviews) * max_tokens, 0);
  source.assign(static_cast<size_t>(max_reviews), -1);
}

int32_t ReviewBank::num_reviews() const {
  int32_t n = 0;
  for (uint8_t m : review_mask) n += m ? 1 : 0;
  return n;
}

bool ReviewBank::any_review() const { return num_reviews() > 0; }

std::span<const int32_t> ReviewBank::review_tokens(int32_t r) const {
  return {tokens.data() + static_cast<size_t>(r) * max_tokens, static_cast<size_t>(max_tokens)};
}

std::span<const uint8_t> ReviewBank::review_word_mask(int32_t r) const {
  return {word_mask.data() + static_cast<size_t>(r) * max_tokens, static_cast<size_t>(max_tokens)};
}

int32_t ReviewBank::first_unmasked() const {
  for (int32_t r = 0; r < max_reviews; ++r)
    if (review_mask[static_cast<size_t>(r)]) return r;
  return -1;
}

int32_t Snapshot::user_of(const std::string& id) const {
  auto it = user_index.find(id);
  if (it == user_index.end()) throw DataError("unknown user id: " + id);
  return it->second;
}

int32_t Snapshot::item_of(const std::string& id) const {
  auto it = item_index.find(id);
  if (it == item_index.end()) throw DataError("unknown item id: " + id);
  return it->second;
}

void Snapshot::rebuild_index() {
  user_index.clear();
  item_index.clear();
  for (int32_t i = 0; i < user_count(); ++i) user_index[user_ids[static_cast<size_t>(i)]] = i;
  for (int32_t i = 0; i < item_count(); ++i) item_index[item_ids[static_cast<size_t>(i)]] = i;
}

namespace {

// Fills one bank from the owner's train interactions, newest first.
void fill_bank(ReviewBank& bank, std::vector<int64_t> owned,
               const std::vector<Interaction>& interactions, const Vocabulary& vocab) {
  std::stable_sort(owned.begin(), owned.end(), [&](int64_t a, int64_t b) {
    return interactions[static_cast<size_t>(a)].timestamp >
           interactions[static_cast<size_t>(b)].timestamp;
  });
  int32_t slot = 0;
  for (int64_t idx : owned) {
    if (slot >= bank.max_reviews) break;
    auto toks = tokenize(interactions[static_cast<size_t>(idx)].review_text);
    if (toks.empty()) continue;  // nothing to encode; leave the slot for a real review
    int32_t n = std::min<int32_t>(static_cast<int32_t>(toks.size()), bank.max_tokens);
    for (int32_t t = 0; t < n; ++t) {
      size_t pos = static_cast<size_t>(slot) * bank.max_tokens + t;
      bank.tokens[pos] = vocab.lookup(toks[static_cast<size_t>(t)]);
      bank.word_mask[pos] = 1;
    }
    bank.review_mask[static_cast<size_t>(slot)] = 1;
    bank.source[static_cast<size_t>(slot)] = idx;
    ++slot;
  }
}

}  // namespace

void build_banks(Snapshot& snap) {
  std::unordered_map<std::string, std::vector<int64_t>> per_user, per_item;
  for (int64_t i : snap.split.train) {
    per_user[snap.interactions[static_cast<size_t>(i)].user_id].push_back(i);
    per_item[snap.interactions[static_cast<size_t>(i)].item_id].push_back(i);
  }
  snap.user_banks.assign(static_cast<size_t>(snap.user_count()), {});
  snap.item_banks.assign(static_cast<size_t>(snap.item_count()), {});
  for (int32_t u = 0; u < snap.user_count(); ++u) {
    auto& bank = snap.user_banks[static_cast<size_t>(u)];
    bank.init(snap.user_ids[static_cast<size_t>(u)], snap.max_reviews, snap.max_tokens);
    auto it = per_user.find(bank.owner_id);
    if (it != per_user.end()) fill_bank(bank, it->second, snap.interactions, snap.vocab);
  }
  for (int32_t i = 0; i < snap.item_count(); ++i) {
    auto& bank = snap.item_banks[static_cast<size_t>(i)];
    bank.init(snap.item_ids[static_cast<size_t>(i)], snap.max_reviews, snap.max_tokens);
    auto it = per_item.find(bank.owner_id);
    if (it != per_item.end()) fill_bank(bank, it->second, snap.interactions, snap.vocab);
  }
}

Snapshot prepare_dataset(const std::string& corpus_path, const PrepareOptions& opts) {
  ParseResult parsed = parse_corpus(corpus_path);
  if (parsed.interactions.empty())
    throw DataError("corpus " + corpus_path + " holds no usable interactions");

  Snapshot snap;
  snap.seed = opts.seed;
  snap.k_core = opts.k_core;
  snap.min_count = opts.min_count;
  snap.max_reviews = opts.max_reviews;
  snap.max_tokens = opts.max_tokens;

  snap.parse_skipped = parsed.skipped;
  snap.interactions = k_core_filter(std::move(parsed.interactions), opts.k_core);
  if (snap.interactions.empty())
    throw DataError("corpus " + corpus_path + ": no interactions survive the " +
                    std::to_string(opts.k_core) + "-core filter");
  snap.split = time_split(snap.interactions);
  snap.vocab = build_vocab(snap.interactions, snap.split.train, opts.min_count);

  std::map<std::string, int32_t> users, items;  // ordered: ids come out sorted
  for (const auto& ix : snap.interactions) {
    users.emplace(ix.user_id, 0);
    items.emplace(ix.item_id, 0);
  }
  for (auto& [id, _] : users) snap.user_ids.push_back(id);
  for (auto& [id, _] : items) snap.item_ids.push_back(id);
  snap.rebuild_index();

  build_banks(snap);

  double sum = 0;
  for (int64_t i : snap.split.train) sum += snap.interactions[static_cast<size_t>(i)].rating;
  snap.train_rating_mean =
      snap.split.train.empty() ? 0.0 : sum / static_cast<double>(snap.split.train.size());
  return snap;
}

std::vector<std::vector<int64_t>> make_batches(int64_t count, int64_t batch_size, RngState& rng) {
  if (batch_size < 1) throw UsageError("make_batches: batch size must be positive");
  std::vector<int64_t> order(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) order[static_cast<size_t>(i)] = i;
  for (int64_t i = count - 1; i > 0; --i) {
    int64_t j = static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(i + 1)));
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  std::vector<std::vector<int64_t>> batches;
  for (int64_t start = 0; start < count; start += batch_size) {
    int64_t end = std::min(count, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

// --- snapshot serialization (little-endian binary) ---------------------------------

namespace {

using wire::Reader;
using wire::put_bytes;
using wire::put_f64;
using wire::put_i32;
using wire::put_i64;
using wire::put_str;
using wire::put_u32;
using wire::put_u64;

void put_bank(std::string& out, const ReviewBank& bank) {
  put_str(out, bank.owner_id);
  for (uint8_t m : bank.review_mask) out.push_back(static_cast<char>(m));
  for (uint8_t m : bank.word_mask) out.push_back(static_cast<char>(m));
  for (int32_t t : bank.tokens) put_i32(out, t);
  for (int64_t s : bank.source) put_i64(out, s);
}

ReviewBank get_bank(Reader& r, int32_t max_reviews, int32_t max_tokens) {
  ReviewBank bank;
  std::string owner = r.get_str();
  bank.init(std::move(owner), max_reviews, max_tokens);
  for (auto& m : bank.review_mask) m = r.get_u8();
  for (auto& m : bank.word_mask) m = r.get_u8();
  for (auto& t : bank.tokens) t = r.get_i32();
  for (auto& s : bank.source) s = r.get_i64();
  return bank;
}

constexpr char kSnapshotMagic[9] = "MPCNSNAP";

}  // namespace

void Snapshot::save(const std::string& path) const {
  std::string out;
  put_bytes(out, kSnapshotMagic, 8);
  put_u32(out, kFormatVersion);
  put_u64(out, seed);
  put_i32(out, k_core);
  put_i32(out, min_count);
  put_i32(out, max_reviews);
  put_i32(out, max_tokens);
  put_f64(out, train_rating_mean);
  put_i64(out, parse_skipped);

  put_u32(out, static_cast<uint32_t>(vocab.id_to_token.size() - 2));
  for (size_t i = 2; i < vocab.id_to_token.size(); ++i) put_str(out, vocab.id_to_token[i]);

  put_u64(out, interactions.size());
  for (const auto& ix : interactions) {
    put_str(out, ix.user_id);
    put_str(out, ix.item_id);
    put_f64(out, ix.rating);
    put_i64(out, ix.timestamp);
    put_str(out, ix.review_text);
  }
  for (const auto* part : {&split.train, &split.dev, &split.test}) {
    put_u64(out, part->size());
    for (int64_t i : *part) put_i64(out, i);
  }
  put_u64(out, user_ids.size());
  for (const auto& id : user_ids) put_str(out, id);
  put_u64(out, item_ids.size());
  for (const auto& id : item_ids) put_str(out, id);
  for (const auto& bank : user_banks) put_bank(out, bank);
  for (const auto& bank : item_banks) put_bank(out, bank);

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write snapshot file: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("short write to snapshot file: " + path);
}

Snapshot Snapshot::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open snapshot file: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  std::string buf = ss.str();

  Reader r(buf);
  r.need(8);
  if (std::memcmp(buf.data(), kSnapshotMagic, 8) != 0)
    throw DataError("not a snapshot file: " + path);
  r.pos = 8;
  Snapshot snap;
  uint32_t version = r.get_u32();
  if (version != kFormatVersion)
    throw DataError("snapshot " + path + " has format version " + std::to_string(version) +
                    ", expected " + std::to_string(kFormatVersion));
  snap.seed = r.get_u64();
  snap.k_core = r.get_i32();
  snap.min_count = r.get_i32();
  snap.max_reviews = r.get_i32();
  snap.max_tokens = r.get_i32();
  snap.train_rating_mean = r.get_f64();
  snap.parse_skipped = r.get_i64();

  uint32_t vocab_extra = r.get_u32();
  snap.vocab.id_to_token = {"<pad>", "<unk>"};
  for (uint32_t i = 0; i < vocab_extra; ++i) {
    std::string tok = r.get_str();
    snap.vocab.token_to_id[tok] = snap.vocab.size();
    snap.vocab.id_to_token.push_back(std::move(tok));
  }

  uint64_t n_ix = r.get_u64();
  snap.interactions.resize(n_ix);
  for (auto& ix : snap.interactions) {
    ix.user_id = r.get_str();
    ix.item_id = r.get_str();
    ix.rating = r.get_f64();
    ix.timestamp = r.get_i64();
    ix.review_text = r.get_str();
  }
  for (auto* part : {&snap.split.train, &snap.split.dev, &snap.split.test}) {
    uint64_t n = r.get_u64();
    part->resize(n);
    for (auto& i : *part) i = r.get_i64();
  }
  uint64_t n_users = r.get_u64();
  snap.user_ids.resize(n_users);
  for (auto& id : snap.user_ids) id = r.get_str();
  uint64_t n_items = r.get_u64();
  snap.item_ids.resize(n_items);
  for (auto& id : snap.item_ids) id = r.get_str();
  for (uint64_t i = 0; i < n_users; ++i)
    snap.user_banks.push_back(get_bank(r, snap.max_reviews, snap.max_tokens));
  for (uint64_t i = 0; i < n_items; ++i)
    snap.item_banks.push_back(get_bank(r, snap.max_reviews, snap.max_tokens));
  snap.rebuild_index();

  // cross-reference integrity of the decoded payload
  const int64_t n_interactions = static_cast<int64_t>(snap.interactions.size());
  for (const auto* part : {&snap.split.train, &snap.split.dev, &snap.split.test})
    for (int64_t idx : *part)
      if (idx < 0 || idx >= n_interactions)
        throw DataError("snapshot " + path + ": split references interaction " +
                        std::to_string(idx) + " of " + std::to_string(n_interactions));
  for (const auto* banks : {&snap.user_banks, &snap.item_banks})
    for (const auto& bank : *banks) {
      for (int64_t src : bank.source)
        if (src < -1 || src >= n_interactions)
          throw DataError("snapshot " + path + ": bank for '" + bank.owner_id +
                          "' references interaction " + std::to_string(src));
      for (int32_t tok : bank.tokens)
        if (tok < 0 || tok >= snap.vocab.size())
          throw DataError("snapshot " + path + ": bank for '" + bank.owner_id +
                          "' holds token id " + std::to_string(tok) + " outside the vocabulary");
    }
  return snap;
}

}  // namespace mpcn
