// SPDX-License-Identifier: MIT
#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tube/philox.hpp"

using tube::Philox4x64;
using tube::RandomStream;

namespace {

struct BlockVector {
  Philox4x64::key_type key;
  Philox4x64::counter_type counter;
  Philox4x64::counter_type expected;
};

}  // namespace

TEST_CASE("block function reproduces known-answer vectors") {
  // Frozen from an independent implementation of the same 10-round cipher.
  const std::vector<BlockVector> vectors = {
      {{0x0ULL, 0x0ULL},
       {0x0ULL, 0x0ULL, 0x0ULL, 0x0ULL},
       {0x16554d9eca36314cULL, 0xdb20fe9d672d0fdcULL, 0xd7e772cee186176bULL,
        0x7e68b68aec7ba23bULL}},
      {{0x0ULL, 0x0ULL},
       {0x1ULL, 0x0ULL, 0x0ULL, 0x0ULL},
       {0x02f4ba6408e4d89bULL, 0x3dd62b0b9ca8c5b2ULL, 0x1c8667a55d902e79ULL,
        0x907d7a052fd5b4dcULL}},
      {{0x0ULL, 0x0ULL},
       {0x2ULL, 0x0ULL, 0x0ULL, 0x0ULL},
       {0x809bf322883987c3ULL, 0x471128b9e807f7ddULL, 0xf250ba0dbec065b7ULL,
        0xfc6ed66767a457bcULL}},
      {{0xdeadbeefULL, 0xfaceb00cULL},
       {0x12345679ULL, 0x9abcdef0ULL, 0x0ULL, 0x0ULL},
       {0x1db60e17e226a6a9ULL, 0x924bf973c96988a8ULL, 0x648f54fc7239f1a4ULL,
        0xfa2085b58d64f138ULL}},
      {{0xffffffffffffffffULL, 0xffffffffffffffffULL},
       {0x0ULL, 0x0ULL, 0x0ULL, 0x0ULL},
       {0x44b7493d1acfc229ULL, 0x6636af8e997921ddULL, 0x3f73e132b5b3780eULL,
        0x605644dde03b01b1ULL}},
      {{314159265ULL, 271828182ULL},
       {0x1ULL, 0x0ULL, 0x0ULL, 0x0ULL},
       {0xddcfabf428b42398ULL, 0xd73f9ee848a12efcULL, 0xf59ead6a26bfab6aULL,
        0xbff7c73d206465a8ULL}},
  };

  for (const auto& v : vectors) {
    const auto out = Philox4x64::block(v.counter, v.key);
    REQUIRE(out == v.expected);
  }
}

TEST_CASE("stream serves block words in order and advances the counter") {
  RandomStream s(0, 0);
  const auto b0 = Philox4x64::block({0, 0, 0, 0}, {0, 0});
  const auto b1 = Philox4x64::block({1, 0, 0, 0}, {0, 0});
  for (int i = 0; i < 4; ++i) REQUIRE(s.next_u64() == b0[i]);
  for (int i = 0; i < 4; ++i) REQUIRE(s.next_u64() == b1[i]);
  REQUIRE(s.block_index() == 2);
}

TEST_CASE("jump_to gives O(1) random access into a stream") {
  RandomStream a(42, 7);
  std::vector<std::uint64_t> first;
  for (int i = 0; i < 4096; ++i) first.push_back(a.next_u64());

  RandomStream b(42, 7);
  b.jump_to(1000);  // word 4000 onward
  for (int i = 4000; i < 4096; ++i) REQUIRE(b.next_u64() == first[i]);
}

TEST_CASE("same key reproduces, different key decorrelates") {
  RandomStream s1(123, 5), s2(123, 5), s3(123, 6);
  bool any_diff = false;
  for (int i = 0; i < 256; ++i) {
    const auto x = s1.next_u64();
    REQUIRE(x == s2.next_u64());
    any_diff |= (x != s3.next_u64());
  }
  REQUIRE(any_diff);
}

TEST_CASE("adjacent streams are empirically uncorrelated") {
  const int n = 1000000;
  RandomStream a(2024, 0), b(2024, 1);
  double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
  for (int i = 0; i < n; ++i) {
    const double x = a.uniform(), y = b.uniform();
    sa += x;
    sb += y;
    saa += x * x;
    sbb += y * y;
    sab += x * y;
  }
  const double ma = sa / n, mb = sb / n;
  const double va = saa / n - ma * ma, vb = sbb / n - mb * mb;
  const double cov = sab / n - ma * mb;
  const double corr = cov / std::sqrt(va * vb);
  REQUIRE(std::abs(corr) < 0.005);
}

TEST_CASE("uniform lies in [0,1) and has the right moments") {
  RandomStream s(99, 0);
  const int n = 200000;
  double sum = 0, sum2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = s.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sum2 += u * u;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  REQUIRE(std::abs(mean - 0.5) < 0.005);           // sd of mean ~ 6.5e-4
  REQUIRE(std::abs(var - 1.0 / 12.0) < 0.005);
}

TEST_CASE("exponential and normal draws have the right moments") {
  RandomStream s(7, 3);
  const int n = 200000;
  double se = 0, sn = 0, sn2 = 0;
  for (int i = 0; i < n; ++i) {
    se += s.exponential(2.0);
    const double z = s.normal();
    sn += z;
    sn2 += z * z;
  }
  REQUIRE(std::abs(se / n - 0.5) < 0.01);
  REQUIRE(std::abs(sn / n) < 0.01);
  REQUIRE(std::abs(sn2 / n - 1.0) < 0.02);
}

TEST_CASE("streams from derive_stream depend on both seed and index") {
  auto s = tube::derive_stream(11, 22);
  REQUIRE(s.master_seed() == 11);
  REQUIRE(s.stream_index() == 22);
  auto t = tube::derive_stream(12, 22);
  auto u = tube::derive_stream(11, 23);
  const auto x = tube::derive_stream(11, 22).next_u64();
  REQUIRE(x == s.next_u64());
  REQUIRE(x != t.next_u64());
  REQUIRE(x != u.next_u64());
}
