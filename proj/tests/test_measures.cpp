// SPDX-License-Identifier: MIT
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "support.hpp"
#include "tube/dynamics.hpp"
#include "tube/horizon.hpp"
#include "tube/measures.hpp"
#include "tube/philox.hpp"

using namespace tube;

TEST_CASE("collision-measure sampler has the right marginals") {
  const auto cfg = testsupport::default_config();
  auto stream = derive_stream(101, 0);

  const int n = 1000000;
  std::vector<double> sphi;
  sphi.reserve(n);
  long disk0 = 0;
  for (int i = 0; i < n; ++i) {
    const auto b = sample_mu0_cell0(stream, cfg);
    REQUIRE(b.cell == 0);
    sphi.push_back(std::sin(b.phi));
    if (b.disk_id == 0) ++disk0;
  }

  const double d = testsupport::ks_distance(std::move(sphi), [](double x) {
    return testsupport::uniform_cdf(x, -1.0, 1.0);
  });
  REQUIRE(d < 0.005);

  // Disk choice proportional to perimeter: p = 0.45 / 0.65.
  const double p = 0.45 / 0.65;
  const double se = std::sqrt(p * (1.0 - p) / n);
  REQUIRE(std::abs(static_cast<double>(disk0) / n - p) < 3.0 * se);
}

TEST_CASE("collision-measure histogram is uniform-product on a 32x32 grid") {
  const auto cfg = testsupport::default_config();
  auto stream = derive_stream(103, 0);

  const long n = 10000000;
  const int g = 32;
  std::vector<long> counts(g * g, 0);
  const double two_pi = 6.283185307179586476925286766559;
  for (long i = 0; i < n; ++i) {
    const auto b = sample_mu0_cell0(stream, cfg);
    const double radius = cfg.disks[static_cast<std::size_t>(b.disk_id)].radius;
    const double u = b.r / (two_pi * radius);
    const double v = 0.5 * (std::sin(b.phi) + 1.0);
    const int iu = std::min(g - 1, static_cast<int>(u * g));
    const int iv = std::min(g - 1, static_cast<int>(v * g));
    ++counts[iu * g + iv];
  }
  const double expect = static_cast<double>(n) / (g * g);
  double chi2 = 0.0;
  for (long c : counts) {
    const double d = static_cast<double>(c) - expect;
    chi2 += d * d / expect;
  }
  // 0.99 quantile of chi^2 with 1023 degrees of freedom.
  REQUIRE(chi2 < 1131.158738963494);
}

TEST_CASE("mean free flight under the collision measure matches the analytic value") {
  const Engine eng(testsupport::default_config_certified());
  auto stream = derive_stream(107, 0);

  const long n = 1000000;
  double sum = 0.0, sum2 = 0.0;
  for (long i = 0; i < n; ++i) {
    const auto b = sample_mu0_cell0(stream, eng.config());
    const auto f = eng.from_boundary(b);
    const auto ev =
        eng.next_collision(f.position, f.velocity, {b.disk_id, b.cell, 0});
    sum += ev.flight_length;
    sum2 += ev.flight_length * ev.flight_length;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  const double se = std::sqrt(var / n);
  const double kbar = mean_free_path(eng.config());
  INFO("mean=" << mean << " kbar=" << kbar << " se=" << se);
  REQUIRE(std::abs(mean - kbar) < 3.0 * se);
}

TEST_CASE("wall inflow points inward with cos-law direction and uniform position") {
  const auto cfg = testsupport::default_config();
  const WallSampler wall(cfg, WallSide::Left, 0.0);
  auto stream = derive_stream(109, 0);

  const int n = 1000000;
  std::vector<double> ys, sines;
  ys.reserve(n);
  sines.reserve(n);
  for (int i = 0; i < n; ++i) {
    const auto s = wall.sample(stream);
    REQUIRE(s.position.x == 0.0);
    REQUIRE(s.velocity.x > 0.0);
    ys.push_back(s.position.y);
    sines.push_back(s.velocity.y);
  }

  // cos-law direction <=> sin(theta) uniform on [-1, 1].
  const double d_dir = testsupport::ks_distance(std::move(sines), [](double x) {
    return testsupport::uniform_cdf(x, -1.0, 1.0);
  });
  REQUIRE(d_dir < 0.005);

  // Position uniform on the free part of the wall: CDF accumulated over the
  // free segments (the corner disk blocks |y| < 0.2 around the wrap point).
  const WallSampler& w = wall;
  const double free_len = w.free_length();
  REQUIRE(free_len == Catch::Approx(1.0 - 0.4).epsilon(1e-12));
  const double d_pos = testsupport::ks_distance(std::move(ys), [](double y) {
    // Free segment is exactly [0.2, 0.8] for the default configuration.
    return testsupport::uniform_cdf(y, 0.2, 0.8);
  });
  REQUIRE(d_pos < 0.005);
}

TEST_CASE("wall inflow never starts inside an obstacle") {
  const auto cfg = testsupport::default_config();
  const Engine eng(testsupport::default_config_certified());
  const WallSampler wall(cfg, WallSide::Left, 0.0);
  auto stream = derive_stream(113, 0);
  for (int i = 0; i < 20000; ++i) {
    const auto s = wall.sample(stream);
    REQUIRE(eng.signed_clearance(s.position) >= -1e-12);
  }
}

TEST_CASE("right-wall inflow moves leftward from the far plane") {
  auto cfg = testsupport::default_config();
  cfg.kind = TubeKind::Finite;
  cfg.length = 12;
  const WallSampler wall(cfg, WallSide::Right, 12.0);
  auto stream = derive_stream(127, 0);
  for (int i = 0; i < 1000; ++i) {
    const auto s = wall.sample(stream);
    REQUIRE(s.position.x == 12.0);
    REQUIRE(s.velocity.x < 0.0);
  }
}

TEST_CASE("poisson arrivals have the right count, support, and order") {
  auto stream = derive_stream(131, 0);
  const double T = 10000.0;
  const auto times = poisson_arrivals(stream, 1.0, T);

  REQUIRE(std::abs(static_cast<double>(times.size()) - T) < 4.0 * std::sqrt(T));
  REQUIRE(std::is_sorted(times.begin(), times.end()));
  REQUIRE(times.front() >= -T);
  REQUIRE(times.back() < 0.0);

  REQUIRE_THROWS_AS(poisson_arrivals(stream, 0.0, 10.0), NonPositiveInput);
  REQUIRE_THROWS_AS(poisson_arrivals(stream, -1.0, 10.0), NonPositiveInput);
  REQUIRE_THROWS_AS(poisson_arrivals(stream, 1.0, 0.0), NonPositiveInput);
}

TEST_CASE("merged poisson streams stay poissonian") {
  auto s1 = derive_stream(137, 0);
  auto s2 = derive_stream(137, 1);
  const double T = 20000.0;
  auto a = poisson_arrivals(s1, 0.7, T);
  const auto b = poisson_arrivals(s2, 0.5, T);
  a.insert(a.end(), b.begin(), b.end());
  std::sort(a.begin(), a.end());

  // Index of dispersion over 1000 equal bins: var/mean near 1.
  const int bins = 1000;
  std::vector<double> counts(bins, 0.0);
  for (double t : a) {
    int k = static_cast<int>((t + T) / T * bins);
    k = std::clamp(k, 0, bins - 1);
    counts[k] += 1.0;
  }
  double mean = 0.0;
  for (double c : counts) mean += c;
  mean /= bins;
  double var = 0.0;
  for (double c : counts) var += (c - mean) * (c - mean);
  var /= (bins - 1);
  const double dispersion = var / mean;
  // (bins-1) * dispersion ~ chi^2(bins-1): 4-sigma acceptance band.
  REQUIRE(std::abs(dispersion - 1.0) < 4.0 * std::sqrt(2.0 / (bins - 1)));
}

TEST_CASE("injection sampler covers all kinds") {
  const Engine eng(testsupport::default_config_certified());
  auto stream = derive_stream(139, 0);

  InjectionSampler mu0(eng, InjectionMeasure{});
  ImageRef on{};
  const auto s = mu0.sample(stream, on);
  REQUIRE(on.disk >= 0);
  REQUIRE(norm(s.velocity) == Catch::Approx(1.0).epsilon(1e-13));
  REQUIRE(s.position.x > -1.0);
  REQUIRE(s.position.x < 2.0);

  InjectionSampler wall(eng, InjectionMeasure::parse("wall_left"));
  const auto sw = wall.sample(stream, on);
  REQUIRE(on.disk == -1);
  REQUIRE(sw.position.x == 0.0);
  REQUIRE(sw.velocity.x > 0.0);

  InjectionMeasure custom;
  custom.kind = InjectionMeasure::Kind::Custom;
  custom.table = {{4, 1.0}, {7, 3.0}};
  InjectionSampler weighted(eng, custom);
  long in7 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const auto sc = weighted.sample(stream, on);
    const long cell = static_cast<long>(std::floor(sc.position.x + 0.5 - 0.5));
    const bool near4 = std::abs(sc.position.x - 4.5) <= 1.0;
    const bool near7 = std::abs(sc.position.x - 7.5) <= 1.0;
    REQUIRE((near4 || near7));
    if (near7) ++in7;
    (void)cell;
  }
  const double p = static_cast<double>(in7) / n;
  REQUIRE(std::abs(p - 0.75) < 3.0 * std::sqrt(0.75 * 0.25 / n));

  REQUIRE_THROWS_AS(InjectionMeasure::parse("bogus"), ConfigError);
}

TEST_CASE("horizon certification of the default configuration") {
  const auto cfg = testsupport::default_config();
  const auto report = check_finite_horizon(cfg, 8, 2000, 400);
  REQUIRE_FALSE(report.corridor_found);
  REQUIRE(report.samples == 2000L * 400L);
  REQUIRE(report.empirical_kappa_min >= 0.05710678118654755 - 1e-9);
  REQUIRE(report.empirical_kappa_max > report.empirical_kappa_min);
  REQUIRE(report.empirical_kappa_max < 5.0);

  // Determinism: the audit is a pure function of the configuration.
  const auto report2 = check_finite_horizon(cfg, 8, 2000, 400);
  REQUIRE(report.empirical_kappa_max == report2.empirical_kappa_max);
  REQUIRE(report.empirical_kappa_min == report2.empirical_kappa_min);

  auto certified = cfg;
  certified.audit.mc_trajectories = 2000;
  certified.audit.mc_steps = 400;
  certified = certify_config(certified);
  REQUIRE(certified.horizon_certified);
  REQUIRE(certified.kappa_max_bound == report.empirical_kappa_max);
}

TEST_CASE("corridor configurations fail certification") {
  TubeConfig cfg;
  cfg.disks = {{{0.5, 0.5}, 0.25}};
  const auto report = check_finite_horizon(cfg, 2, 100, 50);
  REQUIRE(report.corridor_found);
  REQUIRE(report.worst_direction.has_value());
  REQUIRE(report.worst_direction->x == Catch::Approx(1.0));
  REQUIRE(report.worst_direction->y == Catch::Approx(0.0).margin(1e-12));
  REQUIRE_THROWS_AS(certify_config(cfg), CorridorFound);
}

TEST_CASE("monte carlo audit catches corridors the scan misses") {
  // Five disks at (i/5, 2i/5 mod 1): every direction with denominator <= 1
  // is blocked, but all centers share the transversal 2x - y = 0, leaving a
  // wide open corridor along (1, 2).
  TubeConfig cfg;
  cfg.disks = {{{0.0, 0.0}, 0.105},
               {{0.2, 0.4}, 0.105},
               {{0.4, 0.8}, 0.105},
               {{0.6, 0.2}, 0.105},
               {{0.8, 0.6}, 0.105}};

  REQUIRE_FALSE(corridor_scan(cfg, 1).has_value());
  const auto seen = corridor_scan(cfg, 2);
  REQUIRE(seen.has_value());
  REQUIRE(seen->p == 1);
  REQUIRE(seen->q == 2);

  // With the scan capped below the corridor's denominator, the audit's
  // recorded flight maximum is the tell: it keeps growing with the budget
  // instead of saturating.  The genuinely bounded default geometry stays
  // under 5 at any budget; here two million collisions already exceed 100.
  const auto report = check_finite_horizon(cfg, 1, 200, 10000);
  REQUIRE(report.empirical_kappa_max > 100.0);

  const auto honest =
      check_finite_horizon(testsupport::default_config(), 1, 200, 10000);
  REQUIRE(honest.empirical_kappa_max < 5.0);
}
