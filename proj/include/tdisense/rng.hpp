#pragma once

// Counter-based splittable RNG (splitmix64 core). Streams are derived from
// (seed, index...) keys so that grid points and repetitions get independent,
// reproducible substreams regardless of thread scheduling or evaluation order.

#include <cstdint>
#include <random>
#include <vector>

#include "core.hpp"

namespace tdisense {

namespace detail {
inline uint64_t splitmix64_step(uint64_t& s) {
  uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

class SplitRng {
 public:
  using result_type = uint64_t;

  explicit SplitRng(uint64_t key) : state_(key) {}

  // derive an independent stream from a seed and up to three indices
  static SplitRng keyed(uint64_t seed, uint64_t i = 0, uint64_t j = 0, uint64_t k = 0) {
    uint64_t s = seed;
    uint64_t h = detail::splitmix64_step(s);
    s ^= i + 0x9e3779b97f4a7c15ULL;
    h ^= detail::splitmix64_step(s);
    s ^= j + 0xd1b54a32d192ed03ULL;
    h ^= detail::splitmix64_step(s);
    s ^= k + 0x8cb92ba72f3d8dd7ULL;
    h ^= detail::splitmix64_step(s);
    return SplitRng(h);
  }

  uint64_t next() { return detail::splitmix64_step(state_); }

  // uniform double in [0,1) with 53 random bits
  double uniform01() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // uniform in [-w, w]
  double uniform_sym(double w) { return (2.0 * uniform01() - 1.0) * w; }

  // UniformRandomBitGenerator interface
  result_type operator()() { return next(); }
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~0ULL; }

 private:
  uint64_t state_;
};

// multinomial counts by chained binomials; O(#outcomes) per call
inline std::vector<long> multinomial(long n, const std::vector<double>& probs, SplitRng& rng) {
  double sum = 0.0;
  for (double p : probs) {
    if (p < -kPsdTol) throw InvalidDistribution("negative probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kProbTol) throw InvalidDistribution("multinomial probabilities");
  std::vector<long> counts(probs.size(), 0);
  long rest = n;
  double prest = sum;
  for (size_t i = 0; i + 1 < probs.size() && rest > 0; ++i) {
    double p = std::max(probs[i], 0.0) / prest;
    if (p >= 1.0) {
      counts[i] = rest;
      rest = 0;
      break;
    }
    std::binomial_distribution<long> bin(rest, p);
    counts[i] = bin(rng);
    rest -= counts[i];
    prest -= std::max(probs[i], 0.0);
  }
  if (!probs.empty()) counts.back() += rest;
  return counts;
}

}  // namespace tdisense
