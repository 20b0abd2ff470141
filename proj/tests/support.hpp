// SPDX-License-Identifier: MIT
#pragma once

// Shared fixtures and small statistics helpers for the unit-test suites.

#include <algorithm>
#include <cmath>
#include <vector>

#include "tube/geometry.hpp"

namespace testsupport {

// The configuration shipped with the project: a large disk mid-cell plus a
// small disk on the lattice corners.
inline tube::TubeConfig default_config() {
  tube::TubeConfig cfg;
  cfg.disks = {{{0.5, 0.5}, 0.45}, {{0.0, 0.0}, 0.2}};
  return cfg;
}

// Same geometry with flight bounds pinned, so tests that only exercise the
// dynamics can skip the Monte Carlo certification step.
inline tube::TubeConfig default_config_certified() {
  auto cfg = default_config();
  cfg.kappa_min_bound = 0.05;
  cfg.kappa_max_bound = 4.0;
  cfg.horizon_certified = true;
  return cfg;
}

// Kolmogorov-Smirnov distance of a sample against a CDF callable.
template <class Cdf>
double ks_distance(std::vector<double> xs, Cdf&& cdf) {
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return d;
}

inline double uniform_cdf(double x, double lo, double hi) {
  if (x <= lo) return 0.0;
  if (x >= hi) return 1.0;
  return (x - lo) / (hi - lo);
}

}  // namespace testsupport
