#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mcssl {

// splitmix64 mixer; used to derive independent stream seeds so that every
// (seed, epoch, sample) combination gets its own generator.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(mix64(a) ^ (b + 0x9e3779b97f4a7c15ULL)); }

inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) { return mix64(mix64(a, b), c); }

inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
  return mix64(mix64(a, b, c), d);
}

// mt19937_64 with hand-rolled distributions. The standard distribution
// objects are implementation-defined, so reproducibility across toolchains
// requires owning the mapping from raw bits to samples.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t bits() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Masked rejection keeps the draw unbiased.
  int64_t uniform_int(int64_t n) {
    if (n <= 1) return 0;
    uint64_t range = static_cast<uint64_t>(n);
    uint64_t mask = ~uint64_t(0) >> __builtin_clzll(range | 1);
    for (;;) {
      uint64_t v = gen_() & mask;
      if (v < range) return static_cast<int64_t>(v);
    }
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller (cosine branch only, fully deterministic).
  double normal() {
    double u1 = uniform(), u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Normal(0, sigma) truncated to +-2 sigma by rejection.
  double trunc_normal(double sigma) {
    for (;;) {
      double v = normal();
      if (std::fabs(v) <= 2.0) return v * sigma;
    }
  }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(i + 1);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace mcssl
