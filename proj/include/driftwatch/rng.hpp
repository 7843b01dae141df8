#pragma once

#include <algorithm>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

#include "driftwatch/hash.hpp"

// Deterministic randomness. This is version splitmix64+xoshiro256pp.v1: the
// exact bit streams below are part of the persisted-artifact contract, so
// seeded results can be reproduced across machines, standard libraries and
// worker counts. Do not swap in std::shuffle / std::uniform_int_distribution,
// whose outputs are implementation defined.
//
// Stream discipline: every independent consumer derives its own generator via
// substream(seed, index) or mix(...) of stable identifiers. Nothing shares a
// generator across units of work, which keeps results independent of
// scheduling.

namespace driftwatch::rng {

// ============================================================================
// splitmix64 (Vigna). Seeds other generators and mixes identifiers.
// ============================================================================

struct SplitMix64 {
  std::uint64_t state = 0;

  explicit SplitMix64(std::uint64_t seed) : state(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
};

// Combines two 64-bit values into one well-mixed seed.
inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  SplitMix64 sm(a);
  std::uint64_t x = sm.next();
  sm.state ^= b + 0x9e3779b97f4a7c15ULL + (x << 6) + (x >> 2);
  return sm.next();
}

inline std::uint64_t mix(std::uint64_t a, std::string_view tag) {
  return mix(a, hash::fnv1a64(tag));
}

// ============================================================================
// xoshiro256++ (Blackman & Vigna), seeded from splitmix64.
// ============================================================================

class Xoshiro256pp {
 public:
  explicit Xoshiro256pp(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& w : s_) w = sm.next();
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // uniform in [0, 1), 53 bits of precision
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // unbiased integer in [0, n), n >= 1 (Lemire's multiply-shift with rejection)
  std::uint64_t bounded(std::uint64_t n) {
    std::uint64_t x = next();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto lo = static_cast<std::uint64_t>(m);
    if (lo < n) {
      std::uint64_t t = (0 - n) % n;
      while (lo < t) {
        x = next();
        m = static_cast<__uint128_t>(x) * n;
        lo = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[4] = {};
};

// Independent generator for work unit `index` under `seed`. Two distinct
// indices give streams that are independent for all practical purposes, and
// the mapping never depends on which thread runs the unit.
inline Xoshiro256pp substream(std::uint64_t seed, std::uint64_t index) {
  return Xoshiro256pp(mix(seed, index));
}

// Fisher-Yates, descending. Part of the v1 stream contract.
template <typename T>
void shuffle(std::vector<T>& v, Xoshiro256pp& g) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(g.bounded(i));
    std::swap(v[i - 1], v[j]);
  }
}

// m distinct indices drawn from [0, population), returned sorted ascending.
inline std::vector<std::size_t> sample_without_replacement(
    std::size_t population, std::size_t m, Xoshiro256pp& g) {
  std::vector<std::size_t> idx(population);
  for (std::size_t i = 0; i < population; ++i) idx[i] = i;
  if (m > population) m = population;
  for (std::size_t t = 0; t < m; ++t) {
    std::size_t j = t + static_cast<std::size_t>(g.bounded(population - t));
    std::swap(idx[t], idx[j]);
  }
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace driftwatch::rng
