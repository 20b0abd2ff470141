// SPDX-License-Identifier: MIT
#pragma once

// Geometry of the channel: a strip that is periodic with period 1 in both
// directions at the level of obstacles, with circular scatterers repeated on
// the integer lattice.  The vertical coordinate lives on a circle of
// circumference 1; the horizontal coordinate is unbounded (or truncated by
// absorbing walls, which the dynamics layer handles).
//
// This header owns configuration validation and the free-flight-direction
// audit: the dynamics are only well behaved when every straight line through
// the obstacle field is cut after a bounded distance, so configurations are
// screened for open corridors before any simulation runs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tube/errors.hpp"

namespace tube {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 a) { return std::hypot(a.x, a.y); }

struct ScattererDisk {
  Vec2 center;    // inside the unit cell [0,1)^2
  double radius;  // > 0
};

enum class TubeKind { BiInfinite, SemiInfinite, Finite };

// Budget for the empirical free-flight audit.
struct HorizonAudit {
  int max_denominator = 8;     // direction search depth for exact corridors
  long mc_trajectories = 10000;  // sampled orbits
  long mc_steps = 1000;          // collisions per orbit
};

struct TubeConfig {
  std::vector<ScattererDisk> disks;
  TubeKind kind = TubeKind::BiInfinite;
  long length = 0;       // number of unit cells when kind == Finite
  double margin = 1e-6;  // minimum clearance between scatterer images

  HorizonAudit audit;

  // Free-flight bounds, filled in by check_finite_horizon; zero = unknown.
  double kappa_min_bound = 0.0;
  double kappa_max_bound = 0.0;
  bool horizon_certified = false;
};

struct ValidationReport {
  bool pass = false;
  std::vector<std::string> failures;
  double min_surface_gap = 0.0;  // smallest clearance between disk images
};

// An exact open corridor: a family of parallel lines with rational direction
// (p, q) that never meets any scatterer.  `offset` is the common value of
// q*x - p*y (mod 1) at the corridor's center line, `width` the clear breadth
// of the band in that transversal coordinate.
struct CorridorInfo {
  int p = 0;
  int q = 0;
  double offset = 0.0;
  double width = 0.0;
};

struct HorizonReport {
  bool corridor_found = false;
  std::optional<CorridorInfo> corridor;
  std::optional<Vec2> worst_direction;  // unit vector of the corridor, if any
  double empirical_kappa_max = 0.0;
  double empirical_kappa_min = 0.0;
  long samples = 0;  // collisions observed by the Monte Carlo audit
};

// Analytic mean free path of the periodic obstacle field: pi times the free
// area of the unit cell divided by the total obstacle perimeter.
inline double mean_free_path(const TubeConfig& config) {
  double r_sum = 0.0, r2_sum = 0.0;
  for (const auto& d : config.disks) {
    r_sum += d.radius;
    r2_sum += d.radius * d.radius;
  }
  constexpr double pi = 3.14159265358979323846264338327950288;
  return pi * (1.0 - pi * r2_sum) / (2.0 * pi * r_sum);
}

// The disk image translated by `cell` unit cells horizontally.
inline ScattererDisk lift_disk(const ScattererDisk& disk, long cell) {
  return {{disk.center.x + static_cast<double>(cell), disk.center.y},
          disk.radius};
}

// General lattice image, used when enumerating vertical wrap copies too.
inline ScattererDisk lift_disk(const ScattererDisk& disk, long cx, long cy) {
  return {{disk.center.x + static_cast<double>(cx),
           disk.center.y + static_cast<double>(cy)},
          disk.radius};
}

// Structural checks: the configuration must be nonempty, every disk must sit
// inside the unit cell with positive radius, and all lattice images of all
// disks must keep at least `margin` clearance from one another.  Because the
// lattice spacing is 1, a disk must clear its own translates as well, which
// caps every radius strictly below 1/2; it therefore suffices to compare
// images offset by -1..1 in each coordinate.
inline ValidationReport validate_configuration(const TubeConfig& config) {
  ValidationReport report;
  report.min_surface_gap = std::numeric_limits<double>::infinity();

  if (config.disks.empty()) {
    throw EmptyConfiguration("configuration contains no scatterers");
  }

  auto fail = [&report](std::string msg) {
    report.failures.push_back(std::move(msg));
  };

  for (std::size_t i = 0; i < config.disks.size(); ++i) {
    const auto& d = config.disks[i];
    if (!(d.radius > 0.0)) {
      std::ostringstream os;
      os << "disk " << i << " has non-positive radius " << d.radius;
      fail(os.str());
    }
    if (!(d.center.x >= 0.0 && d.center.x < 1.0 && d.center.y >= 0.0 &&
          d.center.y < 1.0)) {
      std::ostringstream os;
      os << "disk " << i << " center (" << d.center.x << ", " << d.center.y
         << ") lies outside the unit cell";
      fail(os.str());
    }
  }
  if (!(config.margin >= 0.0)) fail("margin must be non-negative");
  if (config.kind == TubeKind::Finite && config.length < 2) {
    fail("finite channel needs length >= 2 cells");
  }

  // Pairwise clearance over all lattice offsets that can matter.
  for (std::size_t i = 0; i < config.disks.size(); ++i) {
    for (std::size_t j = i; j < config.disks.size(); ++j) {
      for (long dx = -1; dx <= 1; ++dx) {
        for (long dy = -1; dy <= 1; ++dy) {
          if (i == j && dx == 0 && dy == 0) continue;
          const auto& a = config.disks[i];
          const auto b = lift_disk(config.disks[j], dx, dy);
          const double gap =
              norm(b.center - a.center) - a.radius - b.radius;
          report.min_surface_gap = std::min(report.min_surface_gap, gap);
          if (gap < config.margin) {
            std::ostringstream os;
            os << "disks " << i << " and " << j << " (offset " << dx << ","
               << dy << ") overlap or sit closer than the margin: gap = "
               << gap;
            fail(os.str());
          }
        }
      }
    }
  }

  report.pass = report.failures.empty();
  return report;
}

namespace detail {

// Scan one rational direction (p, q) for an open corridor.  Lines of
// direction (p, q) are level sets of the transversal coordinate
// s = (q*x - p*y) mod 1 (lattice-periodic because p and q are integers).
// A disk of radius r blocks the band of width 2*r*|(p,q)| centered at its
// own transversal coordinate; direction (p, q) hosts a corridor exactly when
// those bands fail to cover the circle [0, 1).
inline std::optional<CorridorInfo> scan_direction(
    const std::vector<ScattererDisk>& disks, int p, int q) {
  const double len =
      std::hypot(static_cast<double>(p), static_cast<double>(q));
  struct Band {
    double lo, hi;
  };
  std::vector<Band> bands;
  bands.reserve(disks.size() * 2);
  for (const auto& d : disks) {
    const double c = d.center.x * static_cast<double>(q) -
                     d.center.y * static_cast<double>(p);
    const double cc = c - std::floor(c);  // representative in [0, 1)
    const double half = d.radius * len;
    if (2.0 * half >= 1.0) return std::nullopt;  // one disk blocks everything
    // A second copy shifted by +1 makes coverage across the wrap seamless.
    bands.push_back({cc - half, cc + half});
    bands.push_back({cc - half + 1.0, cc + half + 1.0});
  }
  std::sort(bands.begin(), bands.end(),
            [](const Band& a, const Band& b) { return a.lo < b.lo; });

  // Sweep one full period starting from a band edge, so no gap can straddle
  // the sweep origin.  The first uncovered stretch is the corridor.
  const double anchor = bands.front().lo;
  double covered_to = anchor;
  for (const auto& b : bands) {
    if (b.lo > covered_to) {
      const double width = b.lo - covered_to;
      CorridorInfo info;
      info.p = p;
      info.q = q;
      info.width = width;
      const double mid = covered_to + width / 2.0;
      info.offset = mid - std::floor(mid);
      return info;
    }
    covered_to = std::max(covered_to, b.hi);
    if (covered_to >= anchor + 1.0) return std::nullopt;  // full circle
  }
  return std::nullopt;  // unreachable: the +1 copy of the anchor band ends it
}

// Primitive directions ordered so the axis (1,0) and shallow diagonals are
// probed first; (p,q) and (-p,-q) describe the same lines, so one canonical
// representative of each family suffices.
inline std::vector<std::pair<int, int>> direction_list(int max_denominator) {
  std::vector<std::pair<int, int>> dirs;
  dirs.emplace_back(1, 0);
  dirs.emplace_back(0, 1);
  for (int p = 1; p <= max_denominator; ++p) {
    for (int q = max_denominator; q >= -max_denominator; --q) {
      if (q == 0) continue;
      if (std::gcd(p, std::abs(q)) != 1) continue;
      dirs.emplace_back(p, q);
    }
  }
  return dirs;
}

}  // namespace detail

// Exact corridor search over all primitive rational directions with
// |p|, |q| <= max_denominator.  Returns the first corridor found, or nothing
// when every direction in range is blocked.
inline std::optional<CorridorInfo> corridor_scan(const TubeConfig& config,
                                                 int max_denominator) {
  if (config.disks.empty()) {
    throw EmptyConfiguration("corridor scan on empty configuration");
  }
  if (max_denominator < 1) {
    throw InvalidConfiguration("corridor scan needs max_denominator >= 1");
  }
  for (const auto& [p, q] : detail::direction_list(max_denominator)) {
    if (auto hit = detail::scan_direction(config.disks, p, q)) {
      return hit;
    }
  }
  return std::nullopt;
}

}  // namespace tube
