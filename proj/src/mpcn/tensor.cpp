#include "mpcn/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mpcn {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d <= 0) throw DimensionError("tensor shape has non-positive extent " + shape_str(s));
    n *= d;
  }
  return n;
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
  if (shape_numel(shape_) != static_cast<int64_t>(values.size()))
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape_));
  storage_ = std::make_shared<std::vector<T>>(std::move(values));
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor out(std::move(shape));
  out.fill(value);
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, RngState& rng, T lo, T hi) {
  Tensor out(std::move(shape));
  T* p = out.data();
  for (int64_t i = 0; i < out.numel(); ++i)
    p[i] = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::normal(Shape shape, RngState& rng, T mean, T stddev) {
  Tensor out(std::move(shape));
  T* p = out.data();
  for (int64_t i = 0; i < out.numel(); ++i)
    p[i] = static_cast<T>(rng.normal(static_cast<double>(mean), static_cast<double>(stddev)));
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != numel())
    throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(new_shape));
  Tensor out;
  out.shape_ = std::move(new_shape);
  out.storage_ = storage_;
  return out;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor out;
  out.shape_ = shape_;
  out.storage_ = std::make_shared<std::vector<T>>(*storage_);
  out.requires_grad = requires_grad;
  return out;
}

template <typename T>
std::vector<double> Tensor<T>::to_doubles() const {
  std::vector<double> out(static_cast<size_t>(numel()));
  for (int64_t i = 0; i < numel(); ++i) out[static_cast<size_t>(i)] = static_cast<double>(at(i));
  return out;
}

template <typename T>
bool Tensor<T>::all_finite() const {
  const T* p = data();
  for (int64_t i = 0; i < numel(); ++i)
    if (!std::isfinite(static_cast<double>(p[i]))) return false;
  return true;
}

template <typename T>
void Tensor<T>::check_finite(const char* op) const {
  if (!all_finite())
    throw NumericError(std::string(op) + ": non-finite value in output of shape " + shape_str(shape_));
}

template <typename T>
void Tensor<T>::fill(T value) {
  T* p = data();
  for (int64_t i = 0; i < numel(); ++i) p[i] = value;
}

int64_t argmax_lowest(const double* v, int64_t n) { return argmax_lowest_t(v, n); }

template class Tensor<float>;
template class Tensor<double>;

}  // namespace mpcn
