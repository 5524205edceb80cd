#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace rfe {

// Seeded generator with self-contained distributions so that streams are
// reproducible bit-for-bit regardless of the standard library's
// distribution implementations. All randomness in the library flows through
// explicitly constructed Rng instances; there is no ambient RNG state.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [lo, hi) with 53 bits of precision.
  double uniform(double lo, double hi) {
    double u = static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * u;
  }

  // Standard normal via Box-Muller; second draw is cached.
  double normal(double mean = 0.0, double stddev = 1.0) {
    if (has_cached_) {
      has_cached_ = false;
      return mean + stddev * cached_;
    }
    double u1, u2;
    do {
      u1 = uniform(0.0, 1.0);
    } while (u1 <= 0.0);
    u2 = uniform(0.0, 1.0);
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return mean + stddev * r * std::cos(a);
  }

  // Uniform integer in [0, n); rejection sampling to avoid modulo bias.
  std::size_t index(std::size_t n) {
    if (n <= 1) return 0;
    std::uint64_t bound = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= bound);
    return static_cast<std::size_t>(r % n);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent sub-seed from a base seed, a stream tag, and
// optional integer qualifiers (task index, epoch, ...).
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t a = 0,
                                 std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(base ^ hash_tag(tag));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return h;
}

}  // namespace rfe
