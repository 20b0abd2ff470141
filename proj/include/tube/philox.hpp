// SPDX-License-Identifier: MIT
#pragma once

// Counter-based random streams built on the Philox-4x64 block cipher
// (10 rounds).  Reproducible parallel ensembles need per-particle randomness
// that is a pure function of (master seed, stream index, draw counter):
// any worker can then generate particle k's draws without coordination, and
// a resumed run regenerates exactly the numbers the interrupted run saw.
//
// The key schedule and output ordering match the widely used reference
// implementation, so the known-answer vectors in the test suite were produced
// with an independent implementation of the same cipher.

#include <array>
#include <cmath>
#include <cstdint>

#include "tube/errors.hpp"

namespace tube {

namespace detail {

struct MulHiLo {
  std::uint64_t lo;
  std::uint64_t hi;
};

inline MulHiLo mul_hi_lo(std::uint64_t a, std::uint64_t b) {
  const unsigned __int128 p =
      static_cast<unsigned __int128>(a) * static_cast<unsigned __int128>(b);
  return {static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(p >> 64)};
}

}  // namespace detail

// The raw 4x64 block function: encrypts a 256-bit counter under a 128-bit key.
class Philox4x64 {
 public:
  using counter_type = std::array<std::uint64_t, 4>;
  using key_type = std::array<std::uint64_t, 2>;

  static constexpr int rounds = 10;

  static counter_type block(counter_type x, key_type k) {
    for (int r = 0; r < rounds; ++r) {
      const auto p0 = detail::mul_hi_lo(kMult0, x[0]);
      const auto p1 = detail::mul_hi_lo(kMult1, x[2]);
      x = {p1.hi ^ x[1] ^ k[0], p1.lo, p0.hi ^ x[3] ^ k[1], p0.lo};
      k[0] += kWeyl0;
      k[1] += kWeyl1;
    }
    return x;
  }

 private:
  static constexpr std::uint64_t kMult0 = 0xD2E7470EE14C6C93ULL;
  static constexpr std::uint64_t kMult1 = 0xCA5A826395121157ULL;
  static constexpr std::uint64_t kWeyl0 = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kWeyl1 = 0xBB67AE8584CAA73BULL;
};

// One logical stream of random numbers: key = (master seed, stream index),
// counter = number of 4-word blocks generated so far.  Streams with distinct
// keys are statistically independent for all practical purposes, and a
// stream's state at any counter value is available in O(1) via jump_to().
class RandomStream {
 public:
  RandomStream() : RandomStream(0, 0) {}

  RandomStream(std::uint64_t master_seed, std::uint64_t stream_index)
      : key_{master_seed, stream_index} {}

  std::uint64_t master_seed() const { return key_[0]; }
  std::uint64_t stream_index() const { return key_[1]; }

  // Index of the next 128-bit-counter block to be generated (low word only;
  // block counts beyond 2^64 are out of reach in any realistic run).
  std::uint64_t block_index() const { return counter_lo_; }

  // Reposition the stream so the next draw is word 0 of the given block.
  void jump_to(std::uint64_t block) {
    counter_lo_ = block;
    counter_hi_ = 0;
    avail_ = 0;
  }

  std::uint64_t next_u64() {
    if (avail_ == 0) refill();
    return buffer_[4 - avail_--];
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Exponential with the given rate; uses log1p so a zero draw is harmless.
  double exponential(double rate) {
    return -std::log1p(-uniform()) / rate;
  }

  // Poisson count by gap counting.  Large means are split into batches so
  // the exp(-mean) threshold never underflows.
  long poisson(double mean) {
    if (!(mean >= 0.0)) {
      throw NonPositiveInput("poisson: mean must be >= 0");
    }
    long total = 0;
    while (mean > 16.0) {
      total += poisson(16.0);
      mean -= 16.0;
    }
    const double threshold = std::exp(-mean);
    double product = uniform();
    while (product >= threshold) {
      ++total;
      product *= uniform();
    }
    return total;
  }

  // Standard normal via Box-Muller (pairs cached).
  double normal() {
    if (have_normal_) {
      have_normal_ = false;
      return cached_normal_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    cached_normal_ = r * std::sin(a);
    have_normal_ = true;
    return r * std::cos(a);
  }

 private:
  void refill() {
    buffer_ = Philox4x64::block({counter_lo_, counter_hi_, 0, 0}, key_);
    if (++counter_lo_ == 0) ++counter_hi_;
    avail_ = 4;
  }

  Philox4x64::key_type key_;
  std::uint64_t counter_lo_ = 0;
  std::uint64_t counter_hi_ = 0;
  Philox4x64::counter_type buffer_{};
  int avail_ = 0;
  double cached_normal_ = 0.0;
  bool have_normal_ = false;
};

// Factory spelling used throughout the ensemble drivers: particle k of a run
// seeded with s draws from derive_stream(s, k).
inline RandomStream derive_stream(std::uint64_t master_seed,
                                  std::uint64_t stream_index) {
  return RandomStream(master_seed, stream_index);
}

}  // namespace tube
