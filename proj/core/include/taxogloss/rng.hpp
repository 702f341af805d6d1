#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>

namespace taxogloss {

/// Counter-based 64-bit generator: the n-th output is SplitMix64's finalizer
/// applied to key + n * golden-gamma. Any element of the stream can be
/// computed directly, which is what dropout masks and per-sequence streams
/// rely on. Satisfies UniformRandomBitGenerator.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(key), counter_(counter) {}

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()() noexcept { return at(key_, ++counter_); }

  static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static constexpr std::uint64_t at(std::uint64_t key, std::uint64_t counter) noexcept {
    return mix(key + counter * kGamma);
  }

  /// Uniform double in [0, 1) from the top 53 bits of element `counter`.
  static constexpr double uniform_at(std::uint64_t key, std::uint64_t counter) noexcept {
    return static_cast<double>(at(key, counter) >> 11) * 0x1.0p-53;
  }

  std::uint64_t key() const noexcept { return key_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key_;
  std::uint64_t counter_;
};

/// Independent streams split off a single experiment seed.
enum class Stream : std::uint64_t {
  Subset = 1,
  ParamInit = 2,
  HeadInit = 3,
  Dropout = 4,
  Shuffle = 5,
  Masking = 6,
  Synthetic = 7,
};

constexpr std::uint64_t derive_seed(std::uint64_t root, Stream stream,
                                    std::uint64_t index = 0) noexcept {
  std::uint64_t h = CounterRng::mix(root ^ 0x6a09e667f3bcc909ULL);
  h = CounterRng::mix(h ^ (static_cast<std::uint64_t>(stream) * 0xd1b54a32d192ed03ULL));
  return CounterRng::mix(h ^ (index * 0x8cb92ba72f3d8dd7ULL + 0x510e527fade682d1ULL));
}

/// Uniform integer in [0, n). Backed by boost::random, whose algorithms are
/// fixed across platforms (unlike <random>'s distributions).
std::size_t uniform_index(CounterRng& rng, std::size_t n);

/// Uniform double in [0, 1).
double uniform_real(CounterRng& rng);

/// Normal deviate with the given mean and standard deviation.
double normal(CounterRng& rng, double mean, double stddev);

/// Fisher-Yates shuffle driven by uniform_index.
template <class T>
void shuffle(std::span<T> items, CounterRng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    using std::swap;
    swap(items[i - 1], items[j]);
  }
}

}  // namespace taxogloss
