#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace peattrib {

// Seedable PRNG used for every random decision in the toolkit (splits,
// bootstraps, corpus sampling, weight init).
//
// The algorithm identity is part of the project's external contract so a
// reimplementation in another language can reproduce every split and every
// generated file bit-for-bit:
//   * state seeding: splitmix64 (four successive outputs fill the state)
//   * stream:        xoshiro256** 1.0 (Blackman/Vigna, public domain)
//   * bounded(n):    Lemire multiply-shift reduction with rejection
//                    (exactly uniform over [0, n))
//   * next_double(): (next_u64() >> 11) * 2^-53, uniform in [0, 1)
//   * shuffle:       Fisher-Yates, i from size-1 down to 1, j = bounded(i+1)
//   * derive(m, s):  splitmix64 finalizer of (m XOR 0x9E3779B97F4A7C15*(s+1))
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& word : state_) word = splitmix64_next(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // Uniform in [0, n). n == 0 is a caller bug; returns 0.
  uint64_t bounded(uint64_t n) {
    if (n == 0) return 0;
    uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<uint64_t>(m);
    if (low < n) {
      const uint64_t threshold = (0 - n) % n;  // 2^64 mod n
      while (low < threshold) {
        x = next_u64();
        m = static_cast<__uint128_t>(x) * n;
        low = static_cast<uint64_t>(m);
      }
    }
    return static_cast<uint64_t>(m >> 64);
  }

  // Uniform in [lo, hi], inclusive.
  uint64_t uniform_u64(uint64_t lo, uint64_t hi) {
    return lo + bounded(hi - lo + 1);
  }

  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child seed for unit `stream` of a master seed. Units
  // (trees, trials, files) each construct Rng(derive(master, unit_index)),
  // which makes results independent of execution order.
  static uint64_t derive(uint64_t master, uint64_t stream) {
    return splitmix64_mix(master ^ (0x9E3779B97F4A7C15ULL * (stream + 1)));
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  static uint64_t splitmix64_mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  static uint64_t splitmix64_next(uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    return splitmix64_mix(x);
  }

  std::array<uint64_t, 4> state_;
};

}  // namespace peattrib
