#pragma once

#include <map>
#include <string>
#include <vector>

#include "mpcn/autodiff.hpp"
#include "mpcn/tensor.hpp"

namespace mpcn {

// Named trainable arrays in fixed registration order. The order defines the
// checkpoint layout and the optimizer state layout.
template <typename T>
class ParamStore {
 public:
  int add(const std::string& name, Tensor<T> value);
  int index_of(const std::string& name) const;  // -1 if absent

  size_t count() const { return names_.size(); }
  const std::string& name(size_t i) const { return names_[i]; }
  Tensor<T>& value(size_t i) { return values_[i]; }
  const Tensor<T>& value(size_t i) const { return values_[i]; }
  Tensor<T>& value(const std::string& name);
  const Tensor<T>& value(const std::string& name) const;

  // One leaf per parameter, in order.
  std::vector<Var<T>> register_leaves(Tape<T>& tape, bool requires_grad) const;

  std::vector<Tensor<T>> clone_values() const;
  void assign_values(const std::vector<Tensor<T>>& values);

  int64_t total_elements() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::map<std::string, int> index_;
};

// Checkpoint: versioned header, model kind, element width, config text,
// free-form metadata, then the parameter arrays in store order.
struct CheckpointInfo {
  std::string model_kind;
  int dtype_bytes = 0;  // 4 or 8
  std::string config_text;
  std::map<std::string, std::string> meta;
};

template <typename T>
void save_checkpoint(const std::string& path, const std::string& model_kind,
                     const std::string& config_text,
                     const std::map<std::string, std::string>& meta, const ParamStore<T>& store);

CheckpointInfo read_checkpoint_info(const std::string& path);

// Loads parameter values into an already-shaped store; names, order and
// shapes must match exactly. Values convert if the stored element width
// differs from T.
template <typename T>
void load_checkpoint_values(const std::string& path, ParamStore<T>& store);

}  // namespace mpcn
