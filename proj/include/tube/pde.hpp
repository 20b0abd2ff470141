// SPDX-License-Identifier: MIT
#pragma once

// Finite-difference solver for the Dirichlet heat problem on (0, 1).  It is
// deliberately independent of the eigenfunction evaluator in reference.hpp:
// the two are cross-validated against each other in the tests, so neither
// can silently drift.

#include <cmath>
#include <cstddef>
#include <vector>

#include "tube/errors.hpp"

namespace tube {

// Crank-Nicolson time stepping for u_t = (sigma_hat^2 / 2) u_xx with pinned
// end values.  The tridiagonal system has constant coefficients, so the
// forward-elimination pass is precomputed once.
class CrankNicolsonHeat {
 public:
  CrankNicolsonHeat(double sigma_hat, double f0, double f1,
                    std::vector<double> initial)
      : f0_(f0), f1_(f1), u_(std::move(initial)) {
    if (!(sigma_hat > 0.0)) {
      throw NonPositiveInput("heat solver: sigma_hat must be positive");
    }
    if (u_.size() < 3) {
      throw GridMismatch("heat solver: need at least 3 grid nodes");
    }
    diffusivity_ = 0.5 * sigma_hat * sigma_hat;
    dx_ = 1.0 / static_cast<double>(u_.size() - 1);
    u_.front() = f0_;
    u_.back() = f1_;
  }

  // Advance by `duration` in `steps` equal Crank-Nicolson steps.
  void advance(double duration, int steps) {
    if (!(duration > 0.0) || steps < 1) {
      throw DomainError("heat solver: need positive duration and steps");
    }
    const double dt = duration / steps;
    const double r = diffusivity_ * dt / (dx_ * dx_);
    const std::size_t n = u_.size() - 2;  // interior nodes

    // LHS: (1 + r) u_i - (r/2)(u_{i-1} + u_{i+1}); Thomas elimination
    // coefficients depend only on r.
    const double diag = 1.0 + r;
    const double off = -0.5 * r;
    std::vector<double> cp(n);  // scaled super-diagonal after elimination
    cp[0] = off / diag;
    for (std::size_t i = 1; i < n; ++i) {
      cp[i] = off / (diag - off * cp[i - 1]);
    }

    std::vector<double> rhs(n), dp(n);
    for (int s = 0; s < steps; ++s) {
      for (std::size_t i = 0; i < n; ++i) {
        rhs[i] = (1.0 - r) * u_[i + 1] + 0.5 * r * (u_[i] + u_[i + 2]);
      }
      rhs[0] += 0.5 * r * f0_;
      rhs[n - 1] += 0.5 * r * f1_;

      dp[0] = rhs[0] / diag;
      for (std::size_t i = 1; i < n; ++i) {
        dp[i] = (rhs[i] - off * dp[i - 1]) / (diag - off * cp[i - 1]);
      }
      u_[n] = dp[n - 1];
      for (std::size_t i = n - 1; i-- > 0;) {
        u_[i + 1] = dp[i] - cp[i] * u_[i + 2];
      }
      time_ += dt;
    }
  }

  // Linear interpolation of the current profile.
  double at(double x) const {
    if (!(x >= 0.0) || !(x <= 1.0)) {
      throw DomainError("heat solver: x outside [0, 1]");
    }
    const double s = x / dx_;
    const auto i = static_cast<std::size_t>(s);
    if (i + 1 >= u_.size()) return u_.back();
    const double w = s - static_cast<double>(i);
    return (1.0 - w) * u_[i] + w * u_[i + 1];
  }

  const std::vector<double>& values() const { return u_; }
  double time() const { return time_; }
  double dx() const { return dx_; }

 private:
  double diffusivity_;
  double f0_, f1_;
  double dx_;
  double time_ = 0.0;
  std::vector<double> u_;
};

// One-call helper: evolve `initial` (uniform nodes including both ends) for
// `duration` and return the final profile.
inline std::vector<double> crank_nicolson_heat(double sigma_hat, double f0,
                                               double f1,
                                               std::vector<double> initial,
                                               double duration, int steps) {
  CrankNicolsonHeat solver(sigma_hat, f0, f1, std::move(initial));
  solver.advance(duration, steps);
  return solver.values();
}

}  // namespace tube
