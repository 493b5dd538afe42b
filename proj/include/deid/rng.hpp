#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace deid {

uint64_t fnv1a64(std::string_view s);

// splitmix64 finalizer; bijective on 64-bit values.
uint64_t mix64(uint64_t x);

// Sub-seed for a named stage of a run. Every stage draws its randomness
// from derive_seed(master, stage_name), so stages can be rerun or
// reordered without disturbing one another's streams.
uint64_t derive_seed(uint64_t master, std::string_view stage);

// mt19937_64 plus explicit distribution code. The engine's raw 64-bit
// output is pinned by the standard; the standard distributions are not,
// so everything downstream of next_u64() is implemented here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1) with 53 random mantissa bits
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // standard normal via Box-Muller; the paired deviate is cached
  double normal();

  // unbiased draw from [0, n), n >= 1
  uint64_t below(uint64_t n);

  // Fisher-Yates
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace deid
