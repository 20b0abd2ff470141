// SPDX-License-Identifier: MIT
#pragma once

// Statistical post-processing shared by the experiments: goodness-of-fit,
// weighted least squares, power-law exponents, and grid-field comparison.
// Everything is a pure function of its inputs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "tube/errors.hpp"

namespace tube {

// Asymptotic Kolmogorov distribution Q(lambda) = P(sup > lambda):
// 2 * sum_{j>=1} (-1)^{j-1} exp(-2 j^2 lambda^2).
inline double kolmogorov_q(double lambda) {
  if (!(lambda > 1e-3)) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 1000; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += sign * term;
    if (term < 1e-16) break;
    sign = -sign;
  }
  return std::min(std::max(2.0 * sum, 0.0), 1.0);
}

struct KSResult {
  double statistic = 0.0;
  long n = 0;
  double p_value = 1.0;
};

// Two-sided Kolmogorov-Smirnov test of `samples` against a target CDF.
inline KSResult ks_test(std::vector<double> samples,
                        const std::function<double(double)>& cdf) {
  if (samples.size() < 10) {
    throw TooFewSamples("ks_test needs at least 10 samples");
  }
  std::sort(samples.begin(), samples.end());
  const auto n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double f = cdf(samples[i]);
    d = std::max(d, f - static_cast<double>(i) / n);
    d = std::max(d, static_cast<double>(i + 1) / n - f);
  }
  KSResult r;
  r.statistic = d;
  r.n = static_cast<long>(samples.size());
  r.p_value = kolmogorov_q(std::sqrt(n) * d);
  return r;
}

struct FitPoint {
  double x = 0.0;
  double value = 0.0;
  double stderr_ = 1.0;
};

struct FitResult {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double intercept_se = 0.0;
  double r_squared = 0.0;
  long n = 0;
};

// Weighted least squares with weights 1/stderr^2, solved from the 2x2
// normal equations.
inline FitResult weighted_linear_fit(const std::vector<FitPoint>& points) {
  if (points.size() < 3) {
    throw TooFewSamples("weighted_linear_fit needs at least 3 points");
  }
  double s = 0.0, sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (const auto& p : points) {
    if (!(p.stderr_ > 0.0)) {
      throw DomainError("weighted_linear_fit needs positive standard errors");
    }
    const double w = 1.0 / (p.stderr_ * p.stderr_);
    s += w;
    sx += w * p.x;
    sy += w * p.value;
    sxx += w * p.x * p.x;
    sxy += w * p.x * p.value;
  }
  const double det = s * sxx - sx * sx;
  if (!(det > 1e-12 * s * sxx)) {
    throw DegenerateDesign("weighted_linear_fit: design has no x spread");
  }

  FitResult r;
  r.n = static_cast<long>(points.size());
  r.slope = (s * sxy - sx * sy) / det;
  r.intercept = (sxx * sy - sx * sxy) / det;
  r.slope_se = std::sqrt(s / det);
  r.intercept_se = std::sqrt(sxx / det);

  const double ybar = sy / s;
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& p : points) {
    const double w = 1.0 / (p.stderr_ * p.stderr_);
    const double fit = r.intercept + r.slope * p.x;
    ss_res += w * (p.value - fit) * (p.value - fit);
    ss_tot += w * (p.value - ybar) * (p.value - ybar);
  }
  r.r_squared = ss_tot > 0.0
                    ? std::min(std::max(1.0 - ss_res / ss_tot, 0.0), 1.0)
                    : 1.0;
  return r;
}

struct TailPoint {
  double n = 0.0;       // abscissa (e.g. time horizon N)
  double p = 0.0;       // probability estimate
  double stderr_ = 0.0;  // standard error of p
};

// Power-law exponent: weighted fit of log p against log N, with the
// delta-method error propagation se(log p) = se(p) / p.
inline FitResult loglog_slope(const std::vector<TailPoint>& table) {
  std::vector<FitPoint> pts;
  pts.reserve(table.size());
  for (const auto& row : table) {
    if (!(row.p > 0.0)) {
      throw NonPositiveProbability("loglog_slope needs positive probabilities");
    }
    if (!(row.n > 0.0)) {
      throw DomainError("loglog_slope needs positive abscissas");
    }
    pts.push_back({std::log(row.n), std::log(row.p), row.stderr_ / row.p});
  }
  return weighted_linear_fit(pts);
}

// Expected particle counts per cell on a grid of macroscopic times; the
// common output shape of the heat-evolution experiment and the input shape
// of the PDE comparison below.
struct OccupancyField {
  std::vector<double> times;    // macroscopic t (units of L^2)
  long cells = 0;               // cells 0 .. cells-1
  std::vector<double> u_hat;    // row-major [time][cell]
  std::vector<double> stderr_;  // same shape
  double scale = 1.0;           // intensity multiplier the counts were divided by

  double at(std::size_t ti, long cell) const {
    return u_hat[ti * static_cast<std::size_t>(cells) +
                 static_cast<std::size_t>(cell)];
  }
  double se_at(std::size_t ti, long cell) const {
    return stderr_[ti * static_cast<std::size_t>(cells) +
                   static_cast<std::size_t>(cell)];
  }
};

struct FieldComparison {
  double sup_error = 0.0;
  double l2_error = 0.0;
  std::vector<double> z_scores;  // interior points, row-major
};

// Compare a measured occupancy field against a reference law u(t, x) with
// x the cell midpoint in units of the tube length.  The outermost cell on
// each side is excluded: that is where the lattice-vs-continuum boundary
// mismatch lives, and the reference laws only claim interior convergence.
inline FieldComparison compare_fields(
    const OccupancyField& field,
    const std::function<double(double, double)>& reference) {
  const auto expected =
      field.times.size() * static_cast<std::size_t>(field.cells);
  if (field.cells < 3 || field.times.empty() ||
      field.u_hat.size() != expected || field.stderr_.size() != expected) {
    throw GridMismatch("compare_fields: field shape is inconsistent");
  }
  FieldComparison out;
  double sq_sum = 0.0;
  std::size_t count = 0;
  for (std::size_t ti = 0; ti < field.times.size(); ++ti) {
    for (long k = 1; k + 1 < field.cells; ++k) {
      const double x = (static_cast<double>(k) + 0.5) /
                       static_cast<double>(field.cells);
      const double diff = field.at(ti, k) - reference(field.times[ti], x);
      out.sup_error = std::max(out.sup_error, std::abs(diff));
      sq_sum += diff * diff;
      ++count;
      const double se = field.se_at(ti, k);
      out.z_scores.push_back(se > 0.0 ? diff / se : 0.0);
    }
  }
  out.l2_error = std::sqrt(sq_sum / static_cast<double>(count));
  return out;
}

}  // namespace tube
