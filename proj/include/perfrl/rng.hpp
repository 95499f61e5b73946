#pragma once

#include <cstdint>
#include <random>

namespace perfrl {

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based derivation: the seed for stream `counter` of `base` does not
/// depend on how many other streams were drawn.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t counter) {
  return mix_seed(mix_seed(base) ^ mix_seed(counter + 0x632be59bd9b4e019ULL));
}

/// Mersenne twister with a platform-independent uniform draw, so sampled
/// data is identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Index i drawn with probability weights[i] / sum(weights), by inverse CDF.
  template <typename Weights>
  int categorical(const Weights& weights, double total = 1.0) {
    const double u = uniform() * total;
    double acc = 0.0;
    const int n = static_cast<int>(weights.size());
    int last_positive = 0;
    for (int i = 0; i < n; ++i) {
      if (weights[i] <= 0.0) continue;
      last_positive = i;
      acc += weights[i];
      if (u < acc) return i;
    }
    return last_positive;
  }

  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace perfrl
