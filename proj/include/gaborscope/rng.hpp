#ifndef GABORSCOPE_RNG_HPP
#define GABORSCOPE_RNG_HPP

#include <cmath>
#include <cstdint>

namespace gaborscope {

// Counter-based generator: output i is a fixed mix of (seed, i), nothing else.
// Every stochastic choice in the pipeline (init, sampling, dropout, shuffles)
// draws from one instance of this, so a run is reproducible from the seed
// alone and independent of platform RNG libraries.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t next_u64() { return mix(seed_, counter_++); }

  // Uniform in [0, 1). 53 mantissa bits.
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0. Modulo bias is negligible for
  // the n used here (dataset sizes), but use rejection anyway to keep draws
  // exactly uniform.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

  // Standard normal via Box-Muller; consumes two counter values per call.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Derives an unrelated seed for a subordinate generator, e.g. one per
  // recording so synthesis order does not matter.
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    return mix(mix(seed, 0x9e3779b97f4a7c15ull), stream);
  }

  std::uint64_t counter() const { return counter_; }
  std::uint64_t seed() const { return seed_; }

 private:
  // splitmix64-style finalizer applied to seed ^ golden-ratio-spaced counter.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t counter) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (counter + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

}  // namespace gaborscope

#endif
