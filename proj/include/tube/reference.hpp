// SPDX-License-Identifier: MIT
#pragma once

// Analytic laws the simulations are checked against: Gaussian densities, the
// joint law of the Brownian meander and its maximum, the density of Brownian
// motion killed at 0 and 1, the stationary absorption profile, a boundary
// layer solution, Dirichlet heat-equation solutions, and the web of constants
// tying them to the billiard.  Everything here is a pure function; series are
// truncated adaptively and every evaluation carries a rigorous bound on the
// dropped tail.

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

#include "tube/errors.hpp"

namespace tube {

namespace detail {
inline constexpr double kSqrtTwoPi = 2.50662827463100050241576528481104525;
}  // namespace detail

// A truncated-series evaluation together with a bound on the omitted tail.
// Re-evaluating with a larger truncation can never move the value by more
// than `tail_bound`.
struct SeriesValue {
  double value = 0.0;
  double tail_bound = 0.0;
};

inline double gaussian_density(double rho, double x) {
  if (!(rho > 0.0)) {
    throw NonPositiveInput("gaussian_density: rho must be positive");
  }
  const double z = x / rho;
  return std::exp(-0.5 * z * z) / (detail::kSqrtTwoPi * rho);
}

// Symmetric 2x2 covariance.
struct Sym2 {
  double a11 = 1.0;
  double a12 = 0.0;
  double a22 = 1.0;

  double det() const { return a11 * a22 - a12 * a12; }
};

inline double gaussian_density2(const Sym2& sigma, double x, double y) {
  const double det = sigma.det();
  if (!(sigma.a11 > 0.0) || !(det > 0.0)) {
    throw NonPositiveDefinite("gaussian_density2: covariance must be SPD");
  }
  const double quad =
      (sigma.a22 * x * x - 2.0 * sigma.a12 * x * y + sigma.a11 * y * y) / det;
  return std::exp(-0.5 * quad) / (2.0 * std::numbers::pi * std::sqrt(det));
}

// Parameters of the meander-and-maximum law.  `truncation` = 0 lets every
// evaluation choose its own cutoff from `tail_tol`; a positive value is
// honored as given (the reported tail bound then says how trustworthy the
// result is).
struct MeanderLaw {
  double rho = 1.0;
  int truncation = 0;
  double tail_tol = 1e-12;
};

namespace detail {

// Bound on sum_{|k| > K} of terms dominated by c_k * exp(-a*(2k-1)^2), via
// the first omitted term and a geometric-ratio majorant.  `grow` bounds the
// ratio of consecutive polynomial prefactors (1 for none, 5/3 for a linear
// one).
inline double gaussian_tail_bound(double a, int K, double first_term,
                                  double grow) {
  const double ratio = grow * std::exp(-8.0 * a * (K + 1));
  if (!(ratio < 1.0)) return std::numeric_limits<double>::infinity();
  return first_term / (1.0 - ratio);
}

}  // namespace detail

// P(meander(1) < x, max meander < y) under scale `law.rho`: alternating
// Gaussian series over reflected images of the barrier.  y may be infinite
// (Rayleigh marginal).  Result clamped to [0, 1].
inline SeriesValue meander_cdf(const MeanderLaw& law, double x, double y) {
  if (!(x >= 0.0) || !(y >= x)) {
    throw DomainError("meander_cdf needs 0 <= x <= y");
  }
  if (x == 0.0) return {0.0, 0.0};
  const double xh = x / law.rho;
  if (std::isinf(y)) {
    return {1.0 - std::exp(-0.5 * xh * xh), 0.0};
  }
  const double yh = y / law.rho;
  const double a = 0.5 * yh * yh;

  int K = std::max(3, law.truncation);
  double bound;
  for (;;) {
    // |term_k| <= 2 exp(-a (2|k|-1)^2); two signed branches per k.
    const double first = 4.0 * std::exp(-a * (2.0 * (K + 1) - 1.0) *
                                        (2.0 * (K + 1) - 1.0));
    bound = detail::gaussian_tail_bound(a, K, first, 1.0);
    if (law.truncation > 0 || bound <= law.tail_tol || K >= 4000000) break;
    K *= 2;
  }

  double sum = 0.0;
  for (int k = -K; k <= K; ++k) {
    const double b = 2.0 * k * yh;
    sum += std::exp(-0.5 * b * b) - std::exp(-0.5 * (b + xh) * (b + xh));
  }
  sum = std::min(std::max(sum, 0.0), 1.0);
  return {sum, bound};
}

// Joint density of (meander(1), max) in its first argument at maximum level
// y: d/dx of the CDF, again a reflected Gaussian series.  The barrier sets
// the decay scale, so the cutoff grows like rho/y for small barriers.
inline SeriesValue meander_density(const MeanderLaw& law, double x, double y) {
  if (!(x >= 0.0) || !(y >= x)) {
    throw DomainError("meander_density needs 0 <= x <= y");
  }
  const double rho = law.rho;
  const double xh = x / rho;
  if (std::isinf(y)) {
    return {(xh / rho) * std::exp(-0.5 * xh * xh), 0.0};
  }
  if (y == 0.0) return {0.0, 0.0};
  const double yh = y / rho;
  const double a = 0.5 * yh * yh;

  int K = std::max(3, law.truncation);
  double bound;
  for (;;) {
    const double arg = (2.0 * (K + 1) - 1.0) * yh;
    const double first =
        2.0 * ((2.0 * (K + 1) + 1.0) * yh / rho) * std::exp(-0.5 * arg * arg);
    bound = detail::gaussian_tail_bound(a, K, first, 5.0 / 3.0);
    if (law.truncation > 0 || bound <= law.tail_tol || K >= 4000000) break;
    K *= 2;
  }

  double sum = 0.0;
  for (int k = -K; k <= K; ++k) {
    const double u = 2.0 * k * yh + xh;
    sum += (u / rho) * std::exp(-0.5 * u * u);
  }
  return {sum, bound};
}

// Transition density at time t of Brownian motion with diffusivity
// sigma_hat^2, started at x and killed on leaving (0, 1): method of images
// over the reflection group of the unit interval.
inline SeriesValue killed_bm_density(double sigma_hat, double t, double x,
                                     double y, int truncation = 0,
                                     double tail_tol = 1e-12) {
  if (!(sigma_hat > 0.0)) {
    throw NonPositiveInput("killed_bm_density: sigma_hat must be positive");
  }
  if (!(t > 0.0) || !(x > 0.0) || !(x < 1.0) || !(y > 0.0) || !(y < 1.0)) {
    throw DomainError("killed_bm_density needs t > 0 and x, y in (0, 1)");
  }
  const double rho = sigma_hat * std::sqrt(t);
  int K = std::max(3, truncation);
  double bound;
  for (;;) {
    // |x - y|, x + y - 2 within (-1, 1) x (0, 2): image |k| contributes
    // Gaussians no closer than 2|k| - 2 to the diagonal.
    const double arg = 2.0 * (K + 1) - 2.0;
    const double first = 4.0 * gaussian_density(rho, arg);
    const double ratio = std::exp(-(8.0 * (K + 1) - 4.0) / (2.0 * rho * rho));
    bound = ratio < 1.0 ? first / (1.0 - ratio)
                        : std::numeric_limits<double>::infinity();
    if (truncation > 0 || bound <= tail_tol || K >= 4000000) break;
    K *= 2;
  }

  // |y - x| keeps the term sequence identical under swapping x and y, so the
  // symmetry psi(t,x,y) = psi(t,y,x) holds bit-exactly.
  const double diff = std::abs(y - x);
  const double both = y + x;
  double sum = 0.0;
  for (int k = -K; k <= K; ++k) {
    sum += gaussian_density(rho, diff + 2.0 * k) -
           gaussian_density(rho, both + 2.0 * k);
  }
  return {sum, bound};
}

// The constants of the theory and everything derived from them.
struct ConstantSet {
  double c_bar = 1.0;      // escape constant
  double kappa_bar = 1.0;  // mean free path
  double sigma = 1.0;      // diffusive standard deviation per collision

  double c = 2.0;          // stationary profile amplitude 2 c_bar kappa_bar / sigma^2
  double c1 = 0.0;         // survival-tail constant, discrete time
  double c1_hat = 0.0;     // survival-tail constant, continuous time
  double c_B = 2.0;        // local-time constant 2 / sigma^2
  double sigma_hat = 1.0;  // continuous-time diffusivity sigma / sqrt(kappa_bar)
};

inline ConstantSet derive_constants(double c_bar, double kappa_bar,
                                    double sigma) {
  if (!(c_bar > 0.0) || !(kappa_bar > 0.0) || !(sigma > 0.0)) {
    throw NonPositiveInput("derive_constants: all inputs must be positive");
  }
  ConstantSet k;
  k.c_bar = c_bar;
  k.kappa_bar = kappa_bar;
  k.sigma = sigma;
  k.c = 2.0 * c_bar * kappa_bar / (sigma * sigma);
  k.c1 = c_bar * std::sqrt(2.0) / (std::sqrt(std::numbers::pi) * sigma);
  k.c1_hat = k.c1 * std::sqrt(kappa_bar);
  k.c_B = 2.0 / (sigma * sigma);
  k.sigma_hat = sigma / std::sqrt(kappa_bar);
  return k;
}

namespace detail {

// Adaptive Simpson quadrature with an absolute tolerance budget.
inline double adaptive_simpson_step(const std::function<double(double)>& f,
                                    double a, double fa, double b, double fb,
                                    double m, double fm, double whole,
                                    double tol, int depth) {
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (std::abs(delta) <= 15.0 * tol) {
    return left + right + delta / 15.0;
  }
  if (depth <= 0) {
    throw QuadratureFailure("adaptive quadrature failed to converge");
  }
  return adaptive_simpson_step(f, a, fa, m, fm, lm, flm, left, 0.5 * tol,
                               depth - 1) +
         adaptive_simpson_step(f, m, fm, b, fb, rm, frm, right, 0.5 * tol,
                               depth - 1);
}

inline double adaptive_simpson(const std::function<double(double)>& f,
                               double a, double b, double tol = 1e-11,
                               int depth = 48) {
  const double m = 0.5 * (a + b);
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(m);
  if (!std::isfinite(fa) || !std::isfinite(fb) || !std::isfinite(fm)) {
    throw QuadratureFailure("quadrature integrand is not finite");
  }
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson_step(f, a, fa, b, fb, m, fm, whole, tol, depth);
}

}  // namespace detail

// Closed form of the stationary absorption profile scaling limit.
inline double profile_limit(const ConstantSet& k, double x) {
  if (!(x > 0.0) || !(x < 1.0)) {
    throw DomainError("profile_limit needs x in (0, 1)");
  }
  return k.c1_hat * detail::kSqrtTwoPi / k.sigma_hat * (1.0 - x);
}

// The same profile with the scaling window kept finite: an integral of the
// meander density over the window's time scales, which collapses to the
// linear closed form as delta -> 0.
inline double profile_integral(const ConstantSet& k, double x, double delta) {
  if (!(x > 0.0) || !(x < 1.0)) {
    throw DomainError("profile_integral needs x in (0, 1)");
  }
  if (!(delta > 0.0) || !(delta < 1.0)) {
    throw DomainError("profile_integral needs delta in (0, 1)");
  }
  MeanderLaw law;
  law.rho = k.sigma_hat;
  const auto integrand = [&](double s) {
    if (s <= 0.0) return 0.0;
    return 2.0 * k.c1_hat / s * meander_density(law, x * s, s).value;
  };
  // The integrand is a bump on a fixed scale while the integration range
  // explodes as delta shrinks; log-spaced panels keep every scale visible to
  // the adaptive refinement.
  const double lo = std::sqrt(delta);
  const double hi = 1.0 / std::sqrt(delta);
  const int panels = 64;
  const double ratio = std::pow(hi / lo, 1.0 / panels);
  double total = 0.0;
  double left = lo;
  for (int j = 0; j < panels; ++j) {
    const double right = (j + 1 == panels) ? hi : left * ratio;
    total += detail::adaptive_simpson(integrand, left, right, 1e-12);
    left = right;
  }
  return total;
}

// Boundary layer at the left wall: the absorbed-and-resupplied mass before
// the bulk has equilibrated.  Solves the heat equation on (0, 1) with
// u(0, x) = 0, u(t, 0) = f0, u(t, 1) = 0, by images on the doubled interval.
inline SeriesValue boundary_layer(const ConstantSet& k, double f0, double t,
                                  double x) {
  if (!(t > 0.0)) throw DomainError("boundary_layer needs t > 0");
  if (!(x > 0.0) || !(x < 1.0)) {
    throw DomainError("boundary_layer needs x in (0, 1)");
  }
  const double rho = k.sigma_hat * std::sqrt(t);
  const auto upper_tail = [&](double z) {
    return 0.5 * std::erfc(z / (rho * std::sqrt(2.0)));
  };

  int K = 3;
  double bound;
  for (;;) {
    // |x + 2k| >= 2|k| - 1; the normal upper tail is below the Gaussian
    // density bound exp(-z^2 / 2rho^2) / 2 for z >= 0.
    const double arg = 2.0 * (K + 1) - 1.0;
    const double first =
        2.0 * std::exp(-0.5 * arg * arg / (rho * rho));
    const double ratio = std::exp(-(8.0 * (K + 1) - 8.0) * 0.5 / (rho * rho));
    bound = ratio < 1.0 ? 2.0 * std::abs(f0) * first / (1.0 - ratio)
                        : std::numeric_limits<double>::infinity();
    if (bound <= 1e-12 * std::max(1.0, std::abs(f0)) || K >= 4000000) break;
    K *= 2;
  }

  double sum = 0.0;
  for (int k2 = -K; k2 <= K; ++k2) {
    const double arg = x + 2.0 * k2;
    const double s = arg >= 0.0 ? 1.0 : -1.0;
    sum += s * upper_tail(std::abs(arg));
  }
  return {2.0 * f0 * sum, bound};
}

// Data for the Dirichlet heat problem u_t = (sigma_hat^2 / 2) u_xx on (0,1),
// u(t,0) = f0, u(t,1) = f1, u(0,x) = f(x).
struct HeatReference {
  double sigma_hat = 1.0;
  double f0 = 0.0;
  double f1 = 0.0;
  std::function<double(double)> f;  // initial profile on [0, 1]
  int modes = 64;
  int quad_intervals = 2000;  // composite-Simpson panels per coefficient
};

// Eigenfunction solution: steady linear part plus a sine series for the
// deviation, each mode decaying at its own exponential rate.
class HeatSolution {
 public:
  explicit HeatSolution(HeatReference ref) : ref_(std::move(ref)) {
    if (!(ref_.sigma_hat > 0.0)) {
      throw NonPositiveInput("heat solution: sigma_hat must be positive");
    }
    if (!ref_.f) {
      throw DomainError("heat solution: missing initial profile");
    }
    if (ref_.modes < 1 || ref_.quad_intervals < 2) {
      throw DomainError("heat solution: bad resolution parameters");
    }
    const int panels = ref_.quad_intervals + (ref_.quad_intervals % 2);
    const double h = 1.0 / panels;
    coeff_.resize(static_cast<std::size_t>(ref_.modes));
    std::vector<double> dev(static_cast<std::size_t>(panels) + 1);
    for (int i = 0; i <= panels; ++i) {
      const double xi = i * h;
      const double fi = ref_.f(xi);
      if (!std::isfinite(fi)) {
        throw QuadratureFailure("heat solution: initial profile not finite");
      }
      dev[static_cast<std::size_t>(i)] =
          fi - (ref_.f0 + (ref_.f1 - ref_.f0) * xi);
    }
    for (int n = 1; n <= ref_.modes; ++n) {
      double acc = 0.0;
      for (int i = 0; i <= panels; ++i) {
        const double w = (i == 0 || i == panels) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        acc += w * dev[static_cast<std::size_t>(i)] *
               std::sin(std::numbers::pi * n * i * h);
      }
      coeff_[static_cast<std::size_t>(n - 1)] = 2.0 * acc * h / 3.0;
    }
  }

  double operator()(double t, double x) const {
    if (!(t >= 0.0) || !(x >= 0.0) || !(x <= 1.0)) {
      throw DomainError("heat solution needs t >= 0 and x in [0, 1]");
    }
    double u = ref_.f0 + (ref_.f1 - ref_.f0) * x;
    const double half_sig2 = 0.5 * ref_.sigma_hat * ref_.sigma_hat;
    for (int n = 1; n <= ref_.modes; ++n) {
      const double lambda = half_sig2 * std::numbers::pi * std::numbers::pi * n * n;
      u += coeff_[static_cast<std::size_t>(n - 1)] * std::exp(-lambda * t) *
           std::sin(std::numbers::pi * n * x);
    }
    return u;
  }

  const std::vector<double>& coefficients() const { return coeff_; }

 private:
  HeatReference ref_;
  std::vector<double> coeff_;
};

inline double heat_solution(const HeatReference& ref, double t, double x) {
  return HeatSolution(ref)(t, x);
}

// Chopping approximation of the meander density: the law of the path up to
// time 1 - dt (meander CDF differences, Brownian-rescaled to that length)
// convolved with a short free Gaussian bridge over the final dt.  Converges
// to meander_density(x, y) as dt, ds -> 0.
inline double meander_chop_identity(const MeanderLaw& law, double x, double y,
                                    double dt, double ds) {
  if (!(x > 0.0) || !(x < y)) {
    throw DomainError("meander_chop_identity needs 0 < x < y");
  }
  if (!(dt > 0.0) || !(dt < 1.0) || !(ds > 0.0) || !(ds < 1.0)) {
    throw DomainError("meander_chop_identity needs dt, ds in (0, 1)");
  }
  const double scale = std::sqrt(1.0 - dt);
  const double kernel_rho = law.rho * std::sqrt(dt);
  const long n = static_cast<long>(std::ceil(y / ds));
  double total = 0.0;
  double cdf_prev = 0.0;
  for (long h = 0; h < n; ++h) {
    const double z0 = static_cast<double>(h) * ds;
    const double z1 = std::min(z0 + ds, y);
    const double cdf_here = meander_cdf(law, z1 / scale, y / scale).value;
    const double p1 = cdf_here - cdf_prev;
    cdf_prev = cdf_here;
    const double zmid = 0.5 * (z0 + z1);
    total += p1 * gaussian_density(kernel_rho, x - zmid);
  }
  return total;
}

}  // namespace tube
