#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mpcn/error.hpp"
#include "mpcn/rng.hpp"

namespace mpcn {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Dense row-major tensor. Copies are shallow handles onto shared storage;
// use clone() for an independent buffer. Ops never mutate their inputs, and
// a tensor participating in a live Tape must not be mutated by the caller.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)),
        storage_(std::make_shared<std::vector<T>>(shape_numel(shape_), T(0))) {}

  Tensor(Shape shape, std::vector<T> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value);
  static Tensor scalar(T value) { return Tensor({1}, {value}); }
  static Tensor uniform(Shape shape, RngState& rng, T lo, T hi);
  static Tensor normal(Shape shape, RngState& rng, T mean, T stddev);

  const Shape& shape() const { return shape_; }
  int64_t rank() const { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return storage_ ? static_cast<int64_t>(storage_->size()) : 0; }
  bool empty() const { return !storage_; }

  T* data() { return storage_->data(); }
  const T* data() const { return storage_->data(); }

  T& at(int64_t i) { return (*storage_)[static_cast<size_t>(i)]; }
  T at(int64_t i) const { return (*storage_)[static_cast<size_t>(i)]; }
  T& at2(int64_t r, int64_t c) { return (*storage_)[static_cast<size_t>(r * shape_[1] + c)]; }
  T at2(int64_t r, int64_t c) const { return (*storage_)[static_cast<size_t>(r * shape_[1] + c)]; }

  // Shares storage; total element count must be preserved.
  Tensor reshaped(Shape new_shape) const;
  Tensor clone() const;

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    const T* src = data();
    U* dst = out.data();
    for (int64_t i = 0; i < numel(); ++i) dst[i] = static_cast<U>(src[i]);
    return out;
  }

  std::vector<double> to_doubles() const;

  bool all_finite() const;
  // Throws NumericError naming `op` if any element is NaN or infinite.
  void check_finite(const char* op) const;

  void fill(T value);

  bool requires_grad = false;

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> storage_;
};

int64_t argmax_lowest(const double* v, int64_t n);

template <typename T>
int64_t argmax_lowest_t(const T* v, int64_t n) {
  int64_t best = 0;
  for (int64_t i = 1; i < n; ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

}  // namespace mpcn
