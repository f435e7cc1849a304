#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mpcn/error.hpp"
#include "mpcn/rng.hpp"

namespace mpcn {

struct Interaction {
  std::string user_id;
  std::string item_id;
  double rating = 0;
  std::string review_text;
  int64_t timestamp = 0;
};

struct ParseResult {
  std::vector<Interaction> interactions;
  int64_t skipped = 0;  // malformed lines
};

// Lowercased alphanumeric runs; everything else separates tokens.
std::vector<std::string> tokenize(const std::string& text);

// One JSON object per line. Accepts user_id/item_id/rating/review_text/
// timestamp or the reviewerID/asin/overall/reviewText/unixReviewTime aliases.
// Malformed lines are skipped and counted; more than 10% malformed is a
// format error.
ParseResult parse_corpus(const std::string& path);

// Maximal subset in which every user and item keeps at least k interactions.
std::vector<Interaction> k_core_filter(std::vector<Interaction> interactions, int k);

struct DatasetSplit {
  std::vector<int64_t> train, dev, test;  // indices into the interaction list
};

// Per user: chronologically last interaction to test, penultimate to dev,
// rest to train. Users with fewer than three interactions contribute to
// train only. Timestamp ties break by input order.
DatasetSplit time_split(const std::vector<Interaction>& interactions);

struct Vocabulary {
  static constexpr int32_t kPad = 0;
  static constexpr int32_t kUnk = 1;

  std::vector<std::string> id_to_token;  // [0]="<pad>", [1]="<unk>"
  std::unordered_map<std::string, int32_t> token_to_id;

  int32_t size() const { return static_cast<int32_t>(id_to_token.size()); }
  int32_t lookup(const std::string& token) const {
    auto it = token_to_id.find(token);
    return it == token_to_id.end() ? kUnk : it->second;
  }
};

// Tokens counted over training reviews only; kept if they appear at least
// min_count times. Ids ordered by descending count, ties lexicographic.
Vocabulary build_vocab(const std::vector<Interaction>& interactions,
                       const std::vector<int64_t>& train_indices, int min_count);

struct ReviewBank {
  std::string owner_id;
  int32_t max_reviews = 20;
  int32_t max_tokens = 30;
  std::vector<int32_t> tokens;       // max_reviews * max_tokens, PAD-filled
  std::vector<uint8_t> review_mask;  // max_reviews
  std::vector<uint8_t> word_mask;    // max_reviews * max_tokens
  std::vector<int64_t> source;       // interaction index per slot, -1 if padded

  void init(std::string owner, int32_t n_reviews_cap, int32_t n_tokens_cap);
  int32_t num_reviews() const;
  bool any_review() const;
  std::span<const int32_t> all_tokens() const { return tokens; }
  std::span<const uint8_t> all_word_mask() const { return word_mask; }
  std::span<const int32_t> review_tokens(int32_t r) const;
  std::span<const uint8_t> review_word_mask(int32_t r) const;
  int32_t first_unmasked() const;  // -1 if none
};

struct PrepareOptions {
  int k_core = 5;
  int min_count = 10;
  int max_reviews = 20;
  int max_tokens = 30;
  uint64_t seed = 42;
};

struct Snapshot {
  static constexpr uint32_t kFormatVersion = 1;

  uint64_t seed = 0;
  int32_t k_core = 5;
  int32_t min_count = 10;
  int32_t max_reviews = 20;
  int32_t max_tokens = 30;
  double train_rating_mean = 0;
  int64_t parse_skipped = 0;  // malformed corpus lines dropped during prepare

  std::vector<Interaction> interactions;
  DatasetSplit split;
  Vocabulary vocab;

  std::vector<std::string> user_ids, item_ids;  // sorted ascending
  std::vector<ReviewBank> user_banks, item_banks;

  std::unordered_map<std::string, int32_t> user_index, item_index;

  int32_t user_count() const { return static_cast<int32_t>(user_ids.size()); }
  int32_t item_count() const { return static_cast<int32_t>(item_ids.size()); }
  int32_t user_of(const std::string& id) const;
  int32_t item_of(const std::string& id) const;
  void rebuild_index();

  void save(const std::string& path) const;
  static Snapshot load(const std::string& path);
};

// Full preparation pipeline: parse, k-core filter, time split, vocabulary,
// review banks. Banks hold training reviews only, newest first, truncated to
// the configured caps; reviews that tokenize to nothing are dropped.
Snapshot prepare_dataset(const std::string& corpus_path, const PrepareOptions& opts);

// (Re)build banks for an already split snapshot.
void build_banks(Snapshot& snap);

// Shuffled index batches for one epoch; the final partial batch is kept.
std::vector<std::vector<int64_t>> make_batches(int64_t count, int64_t batch_size, RngState& rng);

}  // namespace mpcn
