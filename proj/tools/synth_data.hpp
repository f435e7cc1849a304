#pragma once

// Synthetic review-corpus generator for demos and end-to-end checks. Ratings
// come from a planted taste/quality structure and review texts carry the
// matching topic and sentiment words, so text genuinely predicts ratings.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace synth {

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}
  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }
  uint64_t uniform_int(uint64_t n) {
    uint64_t bound = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= bound);
    return x % n;
  }
  double normal() {
    double u1 = uniform(), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  uint64_t state_;
};

struct CorpusSpec {
  int users = 250;
  int items = 150;
  int interactions_per_user = 20;
  int topics = 6;
  uint64_t seed = 7;
};

inline const std::vector<std::vector<std::string>>& topic_words() {
  static const std::vector<std::vector<std::string>> words = {
      {"coffee", "espresso", "roast", "brew", "beans", "mug", "caffeine"},
      {"game", "controller", "console", "rpg", "puzzle", "levels", "multiplayer"},
      {"phone", "case", "charger", "battery", "screen", "cable", "adapter"},
      {"novel", "story", "chapters", "author", "plot", "characters", "ending"},
      {"guitar", "strings", "amp", "pedal", "tone", "pickup", "chords"},
      {"kitchen", "blender", "knife", "pan", "oven", "recipe", "dough"},
  };
  return words;
}

inline const std::vector<std::vector<std::string>>& sentiment_words() {
  // index 0 -> rating 1 ... index 4 -> rating 5
  static const std::vector<std::vector<std::string>> words = {
      {"terrible", "broken", "refund", "awful", "waste", "disappointed"},
      {"poor", "flimsy", "weak", "annoying", "regret", "mediocre"},
      {"okay", "average", "decent", "acceptable", "fine", "passable"},
      {"good", "solid", "reliable", "pleased", "comfortable", "works"},
      {"excellent", "amazing", "perfect", "love", "fantastic", "wonderful"},
  };
  return words;
}

inline const std::vector<std::string>& filler_words() {
  static const std::vector<std::string> words = {
      "the", "this", "it", "and", "with", "for", "after", "week", "using", "bought",
      "arrived", "price", "quality", "product", "really", "very", "also", "still",
      "would", "recommend", "day", "time", "first", "second", "pretty", "much"};
  return words;
}

struct Interaction {
  int user;
  int item;
  int rating;  // 1..5
  std::string text;
  int64_t timestamp;
};

inline std::vector<Interaction> generate(const CorpusSpec& spec) {
  Rng rng(spec.seed);
  const auto& topics = topic_words();
  const int n_topics = std::min<int>(spec.topics, static_cast<int>(topics.size()));

  // users like a primary and a secondary topic; items belong to one topic
  // and carry a quality offset
  std::vector<int> user_topic_a(spec.users), user_topic_b(spec.users);
  std::vector<double> user_bias(spec.users);
  for (int u = 0; u < spec.users; ++u) {
    user_topic_a[u] = static_cast<int>(rng.uniform_int(n_topics));
    user_topic_b[u] = static_cast<int>(rng.uniform_int(n_topics));
    user_bias[u] = 0.4 * rng.normal();
  }
  std::vector<int> item_topic(spec.items);
  std::vector<double> item_quality(spec.items);
  for (int i = 0; i < spec.items; ++i) {
    item_topic[i] = static_cast<int>(rng.uniform_int(n_topics));
    item_quality[i] = 0.9 * rng.normal();
  }

  std::vector<Interaction> out;
  out.reserve(static_cast<size_t>(spec.users) * spec.interactions_per_user);
  int64_t ts = 1'200'000'000;
  for (int u = 0; u < spec.users; ++u) {
    for (int k = 0; k < spec.interactions_per_user; ++k) {
      int item = static_cast<int>(rng.uniform_int(spec.items));
      double affinity = 0.0;
      if (item_topic[item] == user_topic_a[u]) affinity += 0.9;
      if (item_topic[item] == user_topic_b[u]) affinity += 0.45;
      double raw = 3.1 + item_quality[item] + affinity + user_bias[u] + 0.35 * rng.normal();
      int rating = static_cast<int>(std::lround(raw));
      rating = std::max(1, std::min(5, rating));

      std::ostringstream text;
      const auto& topic = topics[static_cast<size_t>(item_topic[item])];
      const auto& sentiment = sentiment_words()[static_cast<size_t>(rating - 1)];
      const auto& filler = filler_words();
      int n_words = 14 + static_cast<int>(rng.uniform_int(14));
      for (int w = 0; w < n_words; ++w) {
        if (w) text << " ";
        double pick = rng.uniform();
        if (pick < 0.30)
          text << topic[rng.uniform_int(topic.size())];
        else if (pick < 0.62)
          text << sentiment[rng.uniform_int(sentiment.size())];
        else
          text << filler[rng.uniform_int(filler.size())];
      }
      ts += 3600 + static_cast<int64_t>(rng.uniform_int(7200));
      out.push_back({u, item, rating, text.str(), ts});
    }
  }
  return out;
}

inline void write_jsonl(const std::vector<Interaction>& interactions, std::ostream& out) {
  for (const auto& ix : interactions) {
    out << "{\"user_id\":\"u" << ix.user << "\",\"item_id\":\"i" << ix.item
        << "\",\"rating\":" << ix.rating << ".0,\"review_text\":\"" << ix.text
        << "\",\"timestamp\":" << ix.timestamp << "}\n";
  }
}

inline void write_jsonl_file(const std::vector<Interaction>& interactions,
                             const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  f << std::nounitbuf;
  write_jsonl(interactions, f);
}

}  // namespace synth
