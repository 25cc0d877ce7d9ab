#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace biaslens {

/// SplitMix64 generator.
///
/// Recurrence (all arithmetic mod 2^64):
///   state += 0x9E3779B97F4A7C15
///   z = state
///   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
///   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
///   next = z ^ (z >> 31)
///
/// uniform01() takes the top 53 bits of next() scaled by 2^-53, giving [0, 1).
/// normal() is Box-Muller on two consecutive uniforms u1, u2 (in that order):
/// sqrt(-2 ln(1 - u1)) * cos(2 pi u2). Exactly two draws per call, no caching.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

  /// Mixes a base seed with a stream tag into an independent seed.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) noexcept;

  std::uint64_t next() noexcept;
  double uniform01() noexcept;
  /// Uniform in [lo, hi). Throws ArgumentError when lo >= hi.
  double uniform(double lo, double hi);
  double normal() noexcept;
  /// Uniform integer in [0, n). n must be positive.
  std::size_t index(std::size_t n);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

  std::uint64_t state() const noexcept { return state_; }

 private:
  std::uint64_t state_;
};

/// 0..n-1 in a seeded random order.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

}  // namespace biaslens
