#pragma once

#include <cstdint>
#include <initializer_list>
#include <utility>
#include <vector>

namespace sitehet {

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// Stream tags used to derive independent substreams from a master seed.
namespace streams {
inline constexpr std::uint64_t kPopulation = 0x706f70;   // "pop"
inline constexpr std::uint64_t kReplication = 0x726570;  // "rep"
inline constexpr std::uint64_t kBootstrap = 0x626f6f74;  // "boot"
}  // namespace streams

/// Counter-based generator: the i-th draw is a pure function of (key, i).
///
/// Substreams are addressed by a path of integers (for example
/// {kReplication, r, s} for site s of replication r), so any replicate can be
/// regenerated independently of the order in which work is scheduled.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) noexcept : key_(key) {}

  static CounterRng substream(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept;

  std::uint64_t next_u64() noexcept;

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) noexcept { return uniform() < p; }

  /// Uniform integer on [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n) noexcept;

  template <class T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace sitehet
