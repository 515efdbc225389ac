#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <vector>

// Deterministic random streams. All draws are implemented here rather than
// with std:: distributions (whose output is implementation-defined), so
// seeded runs reproduce bit-for-bit across toolchains.

namespace fleet {

inline uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derives an independent stream seed from a base seed and a tag sequence.
inline uint64_t substream(uint64_t seed, std::initializer_list<uint64_t> tags) {
  uint64_t s = seed ^ 0x8f1bbcdcbfa53e0bULL;
  for (uint64_t t : tags) {
    s ^= t + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    (void)splitmix64(s);
  }
  return splitmix64(s);
}

class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, n). Lemire's bounded method, unbiased.
  uint64_t uniform_int(uint64_t n) {
    if (n == 0) return 0;
    unsigned __int128 m = (unsigned __int128)next_u64() * n;
    uint64_t lo = (uint64_t)m;
    if (lo < n) {
      uint64_t floor = (~n + 1) % n;  // == 2^64 mod n
      while (lo < floor) {
        m = (unsigned __int128)next_u64() * n;
        lo = (uint64_t)m;
      }
    }
    return (uint64_t)(m >> 64);
  }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform_real() { return (next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform_real(double lo, double hi) {
    return lo + (hi - lo) * uniform_real();
  }

  bool bernoulli(double p) { return uniform_real() < p; }

  // Knuth's product method; large means split via Poisson additivity.
  int poisson(double lambda) {
    if (lambda <= 0.0) return 0;
    if (lambda > 60.0) {
      return poisson(lambda / 2.0) + poisson(lambda - lambda / 2.0);
    }
    const double limit = std::exp(-lambda);
    int k = 0;
    double prod = uniform_real();
    while (prod > limit) {
      ++k;
      prod *= uniform_real();
    }
    return k;
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform_real();
    while (u1 <= 0.0) u1 = uniform_real();
    const double u2 = uniform_real();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Index draw from unnormalized nonnegative weights; caller guarantees
  // the weights are not all zero.
  int categorical(const std::vector<double>& weights) {
    double total = 0.0;
    for (double w : weights) total += w;
    double u = uniform_real() * total;
    for (size_t i = 0; i < weights.size(); ++i) {
      u -= weights[i];
      if (u < 0.0) return (int)i;
    }
    return (int)weights.size() - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = (size_t)uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

}  // namespace fleet
