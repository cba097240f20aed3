// Deterministic RNG and seed derivation helpers.
//
// std::mt19937_64 has a standard-specified sequence, but the std
// distributions do not, so all sampling on top of the engine is done
// here by hand. Every stochastic component of the project goes through
// Rng so that identical seeds give bit-identical results.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace rcf {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t u64() { return eng_(); }

  // Uniform draw in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(6.283185307179586476925287 * u2);
  }

  // Normal(0, stddev) resampled until within clip standard deviations.
  double trunc_normal(double stddev, double clip = 2.0) {
    for (;;) {
      const double z = normal();
      if (std::abs(z) <= clip) return z * stddev;
    }
  }

  // Uniform integer in [0, n).
  size_t index(size_t n) {
    if (n == 0) return 0;
    size_t i = static_cast<size_t>(uniform() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  bool coin(double p) { return uniform() < p; }

 private:
  std::mt19937_64 eng_;
};

}  // namespace rcf
