#pragma once

// Shared test fixtures: a 20-line hand-written corpus, temp-path helpers,
// and programmatic bank/snapshot builders for small model tests.

#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpcn/data.hpp"

namespace fixtures {

inline std::string temp_dir() {
  static int counter = 0;
  const char* base = std::getenv("TMPDIR");
  std::string dir = std::string(base ? base : "/tmp") + "/mpcn_test_" +
                    std::to_string(getpid()) + "_" + std::to_string(counter++);
  std::string cmd = "mkdir -p " + dir;
  if (std::system(cmd.c_str()) != 0) throw std::runtime_error("cannot create temp dir " + dir);
  return dir;
}

// 20 interactions over 4 users and 4 items; every user has 5, every item 5,
// so a 5-core keeps everything. Review texts are unique per line. Two lines
// use the alias field names.
inline const char* fixture_corpus_text() {
  return R"({"user_id":"u1","item_id":"a","rating":5.0,"review_text":"great espresso machine fast heating one","timestamp":100}
{"user_id":"u1","item_id":"b","rating":4.0,"review_text":"good grinder consistent grounds two","timestamp":200}
{"user_id":"u1","item_id":"c","rating":3.0,"review_text":"average kettle slow boil three","timestamp":300}
{"user_id":"u1","item_id":"d","rating":2.0,"review_text":"weak blender struggles with ice four","timestamp":400}
{"user_id":"u1","item_id":"a","rating":5.0,"review_text":"still love this espresso maker five","timestamp":500}
{"user_id":"u2","item_id":"a","rating":4.0,"review_text":"solid espresso shots every morning six","timestamp":110}
{"user_id":"u2","item_id":"b","rating":5.0,"review_text":"grinder works perfectly for espresso seven","timestamp":210}
{"user_id":"u2","item_id":"c","rating":2.0,"review_text":"kettle lid feels flimsy eight","timestamp":310}
{"user_id":"u2","item_id":"d","rating":3.0,"review_text":"blender okay for smoothies nine","timestamp":410}
{"reviewerID":"u2","asin":"d","overall":5.0,"reviewText":"blender smoothie result is wonderful ten","unixReviewTime":510}
{"user_id":"u3","item_id":"a","rating":3.0,"review_text":"espresso machine drips a little eleven","timestamp":120}
{"user_id":"u3","item_id":"b","rating":4.0,"review_text":"grinder quiet and quick twelve","timestamp":220}
{"user_id":"u3","item_id":"c","rating":5.0,"review_text":"kettle boils fast love it thirteen","timestamp":320}
{"user_id":"u3","item_id":"d","rating":4.0,"review_text":"blender crushes ice well fourteen","timestamp":420}
{"reviewerID":"u3","asin":"b","overall":3.0,"reviewText":"grinder clogs with oily beans fifteen","unixReviewTime":520}
{"user_id":"u4","item_id":"a","rating":2.0,"review_text":"espresso machine broke after a month sixteen","timestamp":130}
{"user_id":"u4","item_id":"b","rating":3.0,"review_text":"grinder louder than expected seventeen","timestamp":230}
{"user_id":"u4","item_id":"c","rating":4.0,"review_text":"kettle looks great on the counter eighteen","timestamp":330}
{"user_id":"u4","item_id":"d","rating":5.0,"review_text":"blender is a beast love the power nineteen","timestamp":430}
{"user_id":"u4","item_id":"c","rating":3.0,"review_text":"kettle handle gets warm twenty","timestamp":530}
)";
}

inline std::string write_fixture_corpus(const std::string& dir) {
  std::string path = dir + "/fixture_corpus.jsonl";
  std::ofstream f(path, std::ios::trunc);
  f << fixture_corpus_text();
  return path;
}

// Bank with the given token rows (each row one review); masks derived from
// the rows, remaining slots padded.
inline mpcn::ReviewBank make_bank(const std::string& owner,
                                  const std::vector<std::vector<int32_t>>& reviews,
                                  int32_t max_reviews, int32_t max_tokens) {
  mpcn::ReviewBank bank;
  bank.init(owner, max_reviews, max_tokens);
  for (size_t r = 0; r < reviews.size() && r < static_cast<size_t>(max_reviews); ++r) {
    if (reviews[r].empty()) continue;
    bank.review_mask[r] = 1;
    for (size_t t = 0; t < reviews[r].size() && t < static_cast<size_t>(max_tokens); ++t) {
      bank.tokens[r * max_tokens + t] = reviews[r][t];
      bank.word_mask[r * max_tokens + t] = 1;
    }
  }
  return bank;
}

// Random bank over a vocabulary: n_reviews rows of 1..max_tokens tokens.
inline mpcn::ReviewBank random_bank(const std::string& owner, int32_t n_reviews,
                                    int32_t max_reviews, int32_t max_tokens, int32_t vocab_size,
                                    mpcn::RngState& rng) {
  std::vector<std::vector<int32_t>> reviews;
  for (int32_t r = 0; r < n_reviews; ++r) {
    int32_t len = 1 + static_cast<int32_t>(rng.uniform_int(static_cast<uint64_t>(max_tokens)));
    std::vector<int32_t> row;
    for (int32_t t = 0; t < len; ++t)
      row.push_back(2 + static_cast<int32_t>(rng.uniform_int(static_cast<uint64_t>(vocab_size - 2))));
    reviews.push_back(std::move(row));
  }
  return make_bank(owner, reviews, max_reviews, max_tokens);
}

}  // namespace fixtures
