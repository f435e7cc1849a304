#pragma once

#include <string>
#include <vector>

#include "mpcn/experiment.hpp"

namespace mpcn {

// Classification of the pointer pairs of one evaluated example:
//   all_unique   - no review index repeats on either side
//   all_repeated - every head picked the same (user, item) pair
//   one_repeated - everything in between
// The three form a partition. one_to_many overlaps them: some review on one
// side was matched with at least two distinct reviews on the other.
struct PointerBehaviorReport {
  int n_p = 0;
  int64_t sample_size = 0;
  int64_t n_all_unique = 0;
  int64_t n_one_repeated = 0;
  int64_t n_all_repeated = 0;
  int64_t n_one_to_many = 0;

  double pct_all_unique() const;
  double pct_one_repeated() const;
  double pct_all_repeated() const;
  double pct_one_to_many() const;

  std::string to_json() const;
};

struct PairClassification {
  bool all_unique = false;
  bool all_repeated = false;
  bool one_repeated = false;
  bool one_to_many = false;
};

PairClassification classify_pointer_pairs(const std::vector<std::pair<int32_t, int32_t>>& pairs);

// Deterministic-evaluation forwards over a seeded sample of the test split.
PointerBehaviorReport analyze_pointers(const ModelBundle& bundle, const Snapshot& snap,
                                       int64_t sample_size, uint64_t seed);

// One CSV per head (<prefix>.head<h>.csv, masked entries -1e9) plus a
// <prefix>.pointers.json sidecar with the selected indices and review texts.
// Returns the paths written.
std::vector<std::string> export_affinity(const ModelBundle& bundle, const Snapshot& snap,
                                         const std::string& user_id, const std::string& item_id,
                                         const std::string& out_prefix);

}  // namespace mpcn
