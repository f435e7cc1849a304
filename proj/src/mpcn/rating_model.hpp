#pragma once

#include <string>
#include <vector>

#include "mpcn/autodiff.hpp"
#include "mpcn/data.hpp"
#include "mpcn/params.hpp"

namespace mpcn {

// One training/evaluation example resolved against the snapshot tables.
struct ExampleRef {
  int32_t user = -1;
  int32_t item = -1;
  const ReviewBank* user_bank = nullptr;  // null for interaction-only models
  const ReviewBank* item_bank = nullptr;
  double rating = 0;
  int64_t key = 0;  // stable id used to derive the per-example rng stream
};

// Common surface the trainer drives. Parameters live in a ParamStore whose
// registration order is the checkpoint order; predict() consumes the leaves
// produced by ParamStore::register_leaves on the current tape.
template <typename T>
class RatingModel {
 public:
  virtual ~RatingModel() = default;
  virtual const char* kind() const = 0;
  virtual ParamStore<T>& params() = 0;
  const ParamStore<T>& params() const { return const_cast<RatingModel*>(this)->params(); }
  virtual Var<T> predict(Tape<T>& tape, const std::vector<Var<T>>& leaves, const ExampleRef& ex,
                         RngState rng, bool training) const = 0;
};

}  // namespace mpcn
