#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "dynattn/errors.hpp"

namespace dynattn {

// All stochastic behavior flows through RandomSource so that a run is a pure
// function of its seed. mt19937_64 raw output is pinned by the standard;
// distributions are hand-rolled below because the std ones are not.
class RandomSource {
 public:
  explicit RandomSource(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t next_u64() {
    ++position_;
    return engine_();
  }

  // Uniform in [0,1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t position() const { return position_; }

 private:
  std::uint64_t seed_;
  std::uint64_t position_ = 0;
  std::mt19937_64 engine_;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic per-component seed derivation. Children with distinct labels
// or indices get decorrelated streams regardless of evaluation order.
inline std::uint64_t child_seed(std::uint64_t parent, std::string_view label,
                                std::uint64_t index = 0) {
  return splitmix64(splitmix64(parent ^ fnv1a64(label)) ^ index);
}

// Unbiased integer uniform on [lo, hi] via rejection. lo == hi consumes no
// engine draws; identity degenerations of the dynamic modes rely on that to
// keep the stream aligned with the static path.
inline std::int64_t discrete_uniform(RandomSource& rng, std::int64_t lo, std::int64_t hi) {
  if (lo > hi) throw RangeError("discrete_uniform: empty range");
  if (lo == hi) return lo;
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  const std::uint64_t rem = (UINT64_MAX % span + 1) % span;
  const std::uint64_t limit = UINT64_MAX - rem;
  std::uint64_t x;
  do {
    x = rng.next_u64();
  } while (x > limit);
  return lo + static_cast<std::int64_t>(x % span);
}

// n independent N(0, sigma^2) draws, Box-Muller, pair-generated with the
// spare of an odd tail discarded. sigma only scales the output, so equal
// seeds give bit-identical shapes across sigma.
inline std::vector<double> gaussian(RandomSource& rng, double sigma, std::size_t n) {
  if (sigma < 0.0) throw RangeError("gaussian: negative sigma");
  std::vector<double> out;
  out.reserve(n);
  const double two_pi = 6.283185307179586476925286766559;
  while (out.size() < n) {
    const double u1 = 1.0 - rng.uniform01();  // (0,1], keeps log finite
    const double u2 = rng.uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    out.push_back(sigma * (r * std::cos(two_pi * u2)));
    if (out.size() < n) out.push_back(sigma * (r * std::sin(two_pi * u2)));
  }
  return out;
}

// Fisher-Yates shuffle driven by discrete_uniform; stable across platforms.
template <typename T>
inline void shuffle(RandomSource& rng, std::vector<T>& v) {
  if (v.size() < 2) return;
  for (std::size_t i = v.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(discrete_uniform(rng, 0, static_cast<std::int64_t>(i)));
    std::swap(v[i], v[j]);
  }
}

// k distinct indices from [0, n), sampled without replacement in selection
// order (partial Fisher-Yates over an index pool).
inline std::vector<std::size_t> sample_without_replacement(RandomSource& rng, std::size_t n,
                                                           std::size_t k) {
  if (k > n) throw RangeError("sample_without_replacement: k > n");
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(
        discrete_uniform(rng, static_cast<std::int64_t>(i), static_cast<std::int64_t>(n - 1)));
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

}  // namespace dynattn
