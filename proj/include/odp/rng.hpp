#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

#include "odp/errors.hpp"
#include "odp/mat.hpp"

namespace odp {

/// Counter-based splittable random stream.
///
/// The stream is a pure function of (key, draw index), so identical seeds and
/// call sequences reproduce identical values. split() derives a child key from
/// the parent key and a tag only; the child is therefore independent of any
/// draws the parent makes afterwards.
class Rng {
 public:
  explicit Rng(uint64_t seed) : key_(mix(seed ^ 0x2545f4914f6cdd1dull)) {}

  uint64_t next_u64() { return mix(key_ + kGolden * ++counter_); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) throw ContractError("Rng::uniform_int: n must be positive");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (two uniforms per draw, no cached spare).
  double normal() {
    const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;        // [0, 1)
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Mat normal_mat(Index rows, Index cols) {
    Mat m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = normal();
    return m;
  }

  Vec normal_vec(Index n) {
    Vec v(n);
    for (Index i = 0; i < n; ++i) v(i) = normal();
    return v;
  }

  /// Child stream keyed by an integer tag. Same (parent, tag) -> same child.
  Rng split(uint64_t tag) const {
    Rng child(0);
    child.key_ = mix(key_ ^ mix(tag + 0x9e3779b97f4a7c15ull));
    child.counter_ = 0;
    return child;
  }

  /// Named child stream (dataset generation, dropout, diffusion noise, ...).
  Rng split(std::string_view name) const { return split(fnv1a(name.data(), name.size())); }

 private:
  static constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ull;

  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t key_;
  uint64_t counter_ = 0;
};

}  // namespace odp
