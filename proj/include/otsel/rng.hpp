#pragma once

#include <cstdint>
#include <string_view>

#include "otsel/types.hpp"

namespace otsel {

/// Counter-based generator keyed by (seed, purpose tag).
///
/// Output k of a stream is a pure function of (seed, tag, k), so streams
/// with different tags are independent and reproducible regardless of the
/// order in which they are consumed. Uses the SplitMix64 finalizer.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, std::string_view tag);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }

  result_type operator()();

  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Standard normal (Box-Muller, both outputs used).
  double normal();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  Matrix uniform_matrix(Index rows, Index cols, double lo, double hi);
  Matrix normal_matrix(Index rows, Index cols);
  Vector normal_vector(Index n);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace otsel
