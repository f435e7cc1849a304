#pragma once

#include <cmath>
#include <cstdint>

namespace mpcn {

// Splittable splitmix64 generator. All draws are derived from integer
// arithmetic only, so a given seed and call sequence produces the same
// stream on every platform.
class RngState {
 public:
  explicit RngState(uint64_t seed = 0) : state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ull;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform on the open interval (0,1); never returns 0 or 1, so logs of
  // draws (and logs of their complements) stay finite.
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) via rejection.
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) return 0;
    uint64_t bound = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= bound);
    return x % n;
  }

  // Box-Muller; consumes two uniforms per call.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derive an independent stream without advancing this one.
  RngState fork(uint64_t stream) const {
    uint64_t z = state_ + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return RngState(z ^ (z >> 31));
  }

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
};

}  // namespace mpcn
