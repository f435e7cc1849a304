#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mpcn/data.hpp"
#include "support/fixtures.hpp"

using namespace mpcn;

namespace {

std::string write_file(const std::string& dir, const std::string& name, const std::string& body) {
  std::string path = dir + "/" + name;
  std::ofstream f(path, std::ios::trunc);
  f << body;
  return path;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Repeated full rescans until nothing changes: the reference k-core.
std::vector<Interaction> k_core_bruteforce(std::vector<Interaction> ix, int k) {
  bool changed = true;
  while (changed) {
    std::map<std::string, int> uc, ic;
    for (const auto& i : ix) {
      ++uc[i.user_id];
      ++ic[i.item_id];
    }
    std::vector<Interaction> kept;
    for (const auto& i : ix)
      if (uc[i.user_id] >= k && ic[i.item_id] >= k) kept.push_back(i);
    changed = kept.size() != ix.size();
    ix = std::move(kept);
  }
  return ix;
}

std::string key_of(const Interaction& i) {
  return i.user_id + "|" + i.item_id + "|" + std::to_string(i.timestamp) + "|" + i.review_text;
}

}  // namespace

TEST_CASE("tokenize: lowercase alphanumeric runs") {
  auto t = tokenize("Great espresso-machine, 10/10!!");
  REQUIRE(t.size() == 5);
  CHECK(t[0] == "great");
  CHECK(t[1] == "espresso");
  CHECK(t[2] == "machine");
  CHECK(t[3] == "10");
  CHECK(t[4] == "10");
  CHECK(tokenize("...").empty());
  CHECK(tokenize("").empty());
}

TEST_CASE("parse_corpus: happy path, aliases, malformed lines") {
  std::string dir = fixtures::temp_dir();

  auto empty = parse_corpus(write_file(dir, "empty.jsonl", ""));
  CHECK(empty.interactions.empty());
  CHECK(empty.skipped == 0);

  std::string three =
      R"({"user_id":"u","item_id":"i","rating":4.0,"review_text":"good","timestamp":1}
{"reviewerID":"u2","asin":"i2","overall":3.0,"reviewText":"ok","unixReviewTime":2}
{"user_id":"u3","item_id":"i3","rating":5.0,"review_text":"nice","timestamp":3}
)";
  auto parsed = parse_corpus(write_file(dir, "three.jsonl", three));
  REQUIRE(parsed.interactions.size() == 3);
  CHECK(parsed.skipped == 0);
  CHECK(parsed.interactions[1].user_id == "u2");
  CHECK(parsed.interactions[1].rating == 3.0);
  CHECK(parsed.interactions[1].timestamp == 2);

  // one line missing its rating: skipped and counted (10 good lines keep the
  // malformed share under the 10% format gate)
  std::ostringstream body;
  for (int i = 0; i < 10; ++i)
    body << R"({"user_id":"u)" << i
         << R"(","item_id":"i","rating":4.0,"review_text":"x","timestamp":1})"
         << "\n";
  body << R"({"user_id":"u","item_id":"i","review_text":"no rating","timestamp":1})" << "\n";
  auto skipped = parse_corpus(write_file(dir, "skip.jsonl", body.str()));
  CHECK(skipped.interactions.size() == 10);
  CHECK(skipped.skipped == 1);

  // over 10% malformed is a format error
  std::string mostly_bad = R"(not json at all
{"user_id":"u","item_id":"i","rating":4.0,"review_text":"x","timestamp":1}
)";
  CHECK_THROWS_AS(parse_corpus(write_file(dir, "bad.jsonl", mostly_bad)), DataError);

  CHECK_THROWS_AS(parse_corpus(dir + "/does_not_exist.jsonl"), DataError);
}

TEST_CASE("k_core_filter: fixpoints, cascades, brute-force oracle") {
  auto ix = [](const char* u, const char* i) {
    Interaction x;
    x.user_id = u;
    x.item_id = i;
    x.rating = 4;
    x.timestamp = 1;
    return x;
  };

  // all degrees already >= k: unchanged
  std::vector<Interaction> dense;
  for (const char* u : {"a", "b"})
    for (const char* i : {"x", "y"}) dense.push_back(ix(u, i));
  CHECK(k_core_filter(dense, 2).size() == 4);

  // single interaction with k=5 vanishes
  CHECK(k_core_filter({ix("a", "x")}, 5).empty());
  CHECK_THROWS_AS(k_core_filter({ix("a", "x")}, 0), UsageError);

  // chain where one removal cascades
  std::vector<Interaction> chain = {ix("u1", "a"), ix("u1", "b"), ix("u2", "b"), ix("u2", "c"),
                                    ix("u3", "c"), ix("u3", "a"), ix("u4", "a")};
  auto fast = k_core_filter(chain, 2);
  auto slow = k_core_bruteforce(chain, 2);
  REQUIRE(fast.size() == slow.size());

  // 50 random bipartite instances up to 200 interactions, exact match
  RngState rng(314);
  for (int inst = 0; inst < 50; ++inst) {
    int n_users = 3 + static_cast<int>(rng.uniform_int(12));
    int n_items = 3 + static_cast<int>(rng.uniform_int(12));
    int n_edges = 10 + static_cast<int>(rng.uniform_int(191));
    int k = 1 + static_cast<int>(rng.uniform_int(5));
    std::vector<Interaction> inst_ix;
    for (int e = 0; e < n_edges; ++e) {
      Interaction x;
      x.user_id = "u" + std::to_string(rng.uniform_int(n_users));
      x.item_id = "i" + std::to_string(rng.uniform_int(n_items));
      x.rating = 3;
      x.timestamp = e;
      inst_ix.push_back(x);
    }
    auto a = k_core_filter(inst_ix, k);
    auto b = k_core_bruteforce(inst_ix, k);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(key_of(a[i]) == key_of(b[i]));
  }
}

TEST_CASE("time_split: per-user last/penultimate and degenerate users") {
  std::vector<Interaction> ix;
  auto push = [&](const char* u, int64_t ts) {
    Interaction x;
    x.user_id = u;
    x.item_id = "i" + std::to_string(ts);
    x.rating = 3;
    x.timestamp = ts;
    ix.push_back(x);
  };
  push("u1", 2);
  push("u1", 3);  // test (latest)
  push("u1", 1);
  push("u2", 10);  // both u2 rows go to train: fewer than 3 interactions
  push("u2", 11);

  DatasetSplit split = time_split(ix);
  REQUIRE(split.test.size() == 1);
  REQUIRE(split.dev.size() == 1);
  CHECK(ix[static_cast<size_t>(split.test[0])].timestamp == 3);
  CHECK(ix[static_cast<size_t>(split.dev[0])].timestamp == 2);
  CHECK(split.train.size() == 3);

  // timestamp ties break by input order: the later line wins the test slot
  std::vector<Interaction> tied;
  push("u3", 5);
  tied.push_back(ix.back());
  ix.pop_back();
  push("u3", 5);
  tied.push_back(ix.back());
  ix.pop_back();
  push("u3", 5);
  tied.push_back(ix.back());
  ix.pop_back();
  tied[0].item_id = "first";
  tied[1].item_id = "second";
  tied[2].item_id = "third";
  DatasetSplit tsplit = time_split(tied);
  CHECK(tied[static_cast<size_t>(tsplit.test[0])].item_id == "third");
  CHECK(tied[static_cast<size_t>(tsplit.dev[0])].item_id == "second");
}

TEST_CASE("build_vocab: the frequency threshold is inclusive") {
  std::vector<Interaction> ix;
  Interaction x;
  x.user_id = "u";
  x.item_id = "i";
  x.rating = 4;
  x.timestamp = 1;

  x.review_text = "good good";
  ix.push_back(x);
  Vocabulary tiny = build_vocab(ix, {0}, 10);
  CHECK(tiny.size() == 2);  // reserved ids only
  CHECK(tiny.lookup("good") == Vocabulary::kUnk);

  // "ten" appears exactly 10 times, "nine" exactly 9
  std::ostringstream text;
  for (int i = 0; i < 10; ++i) text << "ten ";
  for (int i = 0; i < 9; ++i) text << "nine ";
  x.review_text = text.str();
  std::vector<Interaction> ix2 = {x};
  Vocabulary v = build_vocab(ix2, {0}, 10);
  CHECK(v.lookup("ten") == 2);
  CHECK(v.lookup("nine") == Vocabulary::kUnk);
  CHECK(v.size() == 3);
}

TEST_CASE("banks: caps, ordering, masks, empty owners") {
  std::vector<Interaction> ix;
  for (int r = 0; r < 25; ++r) {
    Interaction x;
    x.user_id = "u";
    x.item_id = "i" + std::to_string(r);
    x.rating = 4;
    x.timestamp = 100 + r;
    x.review_text = "tok" + std::to_string(r) + " common words here";
    ix.push_back(x);
  }
  // a 45-token review that must truncate to 30
  {
    Interaction x;
    x.user_id = "u";
    x.item_id = "long";
    x.rating = 4;
    x.timestamp = 1000;
    std::ostringstream t;
    for (int w = 0; w < 45; ++w) t << "w" << w << " ";
    x.review_text = t.str();
    ix.push_back(x);
  }

  Snapshot snap;
  snap.max_reviews = 20;
  snap.max_tokens = 30;
  snap.interactions = ix;
  for (int64_t i = 0; i < static_cast<int64_t>(ix.size()); ++i) snap.split.train.push_back(i);
  snap.vocab = build_vocab(snap.interactions, snap.split.train, 1);
  snap.user_ids = {"u"};
  for (const auto& i : ix)
    if (std::find(snap.item_ids.begin(), snap.item_ids.end(), i.item_id) == snap.item_ids.end())
      snap.item_ids.push_back(i.item_id);
  std::sort(snap.item_ids.begin(), snap.item_ids.end());
  snap.rebuild_index();
  build_banks(snap);

  const ReviewBank& bank = snap.user_banks[0];
  CHECK(bank.num_reviews() == 20);  // 26 candidate reviews capped at 20
  // newest first: slot 0 is the t=1000 long review, truncated to 30 tokens
  CHECK(bank.source[0] == 25);
  int words0 = 0;
  for (int t = 0; t < bank.max_tokens; ++t) words0 += bank.review_word_mask(0)[t] ? 1 : 0;
  CHECK(words0 == 30);
  // next-newest afterwards
  CHECK(snap.interactions[static_cast<size_t>(bank.source[1])].timestamp == 124);

  // all-PAD outside the mask
  for (int r = 0; r < bank.max_reviews; ++r)
    for (int t = 0; t < bank.max_tokens; ++t)
      if (!bank.review_word_mask(r)[t])
        CHECK(bank.tokens[static_cast<size_t>(r) * bank.max_tokens + t] == Vocabulary::kPad);

  // owner with no training reviews: all-PAD bank, no review bits set
  ReviewBank empty_bank;
  empty_bank.init("ghost", 20, 30);
  CHECK_FALSE(empty_bank.any_review());
  CHECK(empty_bank.first_unmasked() == -1);
}

TEST_CASE("prepared snapshot: leakage, token ranges, byte determinism") {
  std::string dir = fixtures::temp_dir();
  std::string corpus = fixtures::write_fixture_corpus(dir);

  PrepareOptions opts;
  opts.k_core = 5;
  opts.min_count = 1;
  opts.seed = 42;
  Snapshot snap = prepare_dataset(corpus, opts);

  CHECK(snap.interactions.size() == 20);
  CHECK(snap.split.dev.size() == 4);
  CHECK(snap.split.test.size() == 4);

  // no dev/test interaction may appear in any bank (provenance check)
  std::set<int64_t> eval_idx(snap.split.dev.begin(), snap.split.dev.end());
  eval_idx.insert(snap.split.test.begin(), snap.split.test.end());
  auto scan_banks = [&](const std::vector<ReviewBank>& banks) {
    for (const auto& bank : banks)
      for (int64_t src : bank.source)
        if (src >= 0) CHECK(eval_idx.count(src) == 0);
  };
  scan_banks(snap.user_banks);
  scan_banks(snap.item_banks);

  // and by content: bank rows re-encode only train reviews
  std::set<int64_t> train_idx(snap.split.train.begin(), snap.split.train.end());
  for (const auto& bank : snap.user_banks)
    for (int64_t src : bank.source)
      if (src >= 0) CHECK(train_idx.count(src) == 1);

  // all token ids in range, PAD only at masked positions
  for (const auto& banks : {snap.user_banks, snap.item_banks})
    for (const auto& bank : banks)
      for (size_t p = 0; p < bank.tokens.size(); ++p) {
        CHECK(bank.tokens[p] >= 0);
        CHECK(bank.tokens[p] < snap.vocab.size());
        if (!bank.word_mask[p]) CHECK(bank.tokens[p] == Vocabulary::kPad);
      }

  // same inputs, same seed: byte-identical snapshot files
  std::string p1 = dir + "/snap1.bin";
  std::string p2 = dir + "/snap2.bin";
  snap.save(p1);
  Snapshot again = prepare_dataset(corpus, opts);
  again.save(p2);
  CHECK(slurp(p1) == slurp(p2));

  // round trip preserves everything observable
  Snapshot loaded = Snapshot::load(p1);
  CHECK(loaded.vocab.size() == snap.vocab.size());
  CHECK(loaded.interactions.size() == snap.interactions.size());
  CHECK(loaded.split.train == snap.split.train);
  CHECK(loaded.user_banks[0].tokens == snap.user_banks[0].tokens);
  CHECK(loaded.train_rating_mean == snap.train_rating_mean);
  std::string p3 = dir + "/snap3.bin";
  loaded.save(p3);
  CHECK(slurp(p1) == slurp(p3));

  CHECK_THROWS_AS(Snapshot::load(corpus), DataError);  // not a snapshot file
}

TEST_CASE("prepare_dataset: malformed-line count is carried into the snapshot") {
  std::string dir = fixtures::temp_dir();
  std::ostringstream body;
  body << fixtures::fixture_corpus_text();
  body << "this line is not json\n";
  std::string corpus = write_file(dir, "with_bad.jsonl", body.str());
  PrepareOptions opts;
  opts.k_core = 5;
  opts.min_count = 1;
  Snapshot snap = prepare_dataset(corpus, opts);
  CHECK(snap.parse_skipped == 1);
  std::string path = dir + "/skip.snap";
  snap.save(path);
  CHECK(Snapshot::load(path).parse_skipped == 1);
}

TEST_CASE("prepare_dataset: empty or collapsing corpora are errors") {
  std::string dir = fixtures::temp_dir();
  PrepareOptions opts;
  opts.k_core = 5;
  CHECK_THROWS_AS(prepare_dataset(write_file(dir, "none.jsonl", ""), opts), DataError);

  // a single interaction cannot survive a 5-core
  std::string one =
      R"({"user_id":"u","item_id":"i","rating":4.0,"review_text":"x","timestamp":1})";
  CHECK_THROWS_AS(prepare_dataset(write_file(dir, "one.jsonl", one + "\n"), opts), DataError);
}

TEST_CASE("make_batches: sizes, determinism, permutation property") {
  RngState rng(6);
  auto batches = make_batches(300, 128, rng);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 128);
  CHECK(batches[1].size() == 128);
  CHECK(batches[2].size() == 44);

  RngState r1(9), r2(9);
  CHECK(make_batches(50, 8, r1) == make_batches(50, 8, r2));

  std::set<int64_t> seen;
  for (const auto& b : batches)
    for (int64_t i : b) seen.insert(i);
  CHECK(seen.size() == 300);
  CHECK(*seen.begin() == 0);
  CHECK(*seen.rbegin() == 299);

  CHECK_THROWS_AS(make_batches(10, 0, rng), UsageError);
}
