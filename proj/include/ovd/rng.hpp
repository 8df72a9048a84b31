#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace ovd {

// Deterministic RNG wrapper. All distribution code is written out here so
// that streams are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be > 0.
  std::int64_t uniform_int(std::int64_t n) {
    return static_cast<std::int64_t>(uniform() * static_cast<double>(n)) % n;
  }

  // Standard normal via Box-Muller.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::int64_t i = static_cast<std::int64_t>(v.size()) - 1; i > 0; --i) {
      const std::int64_t j = uniform_int(i + 1);
      std::swap(v[i], v[static_cast<std::size_t>(j)]);
    }
  }

  // Sample k distinct elements from v, order randomized.
  template <typename T>
  std::vector<T> sample_without_replacement(std::vector<T> v, std::size_t k) {
    shuffle(v);
    if (k < v.size()) v.resize(k);
    return v;
  }

 private:
  std::mt19937_64 engine_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

// Seed for a derived independent stream (per image, per step, ...).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  return base ^ index;
}

// FNV-1a over a byte string; used for hash-seeded token embeddings.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace ovd
