// SPDX-License-Identifier: MIT
#pragma once

// Ensemble drivers: each routine turns many independent trajectories into
// one statistical estimate with an uncertainty, using the deterministic
// ensemble runner (bit-identical results for any thread count, resumable
// through checkpoints).  Estimates follow the conventions of the analytic
// reference laws so the two sides can be compared directly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tube/analysis.hpp"
#include "tube/dynamics.hpp"
#include "tube/ensemble.hpp"
#include "tube/errors.hpp"
#include "tube/measures.hpp"
#include "tube/philox.hpp"
#include "tube/reference.hpp"
#include "tube/serialize.hpp"

namespace tube {

namespace detail {

// Group count for delete-a-group jackknives and group bootstraps: fixed by
// the particle count alone so error bars are reproducible across thread
// counts and resumes.
inline long stat_groups(std::uint64_t particles) {
  const std::uint64_t quarter = particles / 4;
  return static_cast<long>(std::max<std::uint64_t>(
      2, std::min<std::uint64_t>(256, quarter)));
}

inline double binomial_se(double p, double m) {
  return std::sqrt(std::max(p * (1.0 - p), 0.0) / m);
}

// Stream index reserved for post-processing draws (bootstrap resampling);
// far outside any particle index a desk- or cluster-scale run can reach.
inline constexpr std::uint64_t kResampleStream = 0xB007000000000000ULL;

inline void save_f64s(BinaryWriter& w, const std::vector<double>& v) {
  w.put_u64(v.size());
  for (const double x : v) w.put_f64(x);
}
inline void load_f64s_exact(BinaryReader& r, std::vector<double>& v) {
  if (r.take_u64() != v.size()) {
    throw CorruptCheckpoint("accumulator shape mismatch");
  }
  for (double& x : v) x = r.take_f64();
}
inline void load_f64s_any(BinaryReader& r, std::vector<double>& v) {
  v.resize(r.take_u64());
  for (double& x : v) x = r.take_f64();
}
inline void save_u64s(BinaryWriter& w, const std::vector<std::uint64_t>& v) {
  w.put_u64(v.size());
  for (const std::uint64_t x : v) w.put_u64(x);
}
inline void load_u64s_exact(BinaryReader& r, std::vector<std::uint64_t>& v) {
  if (r.take_u64() != v.size()) {
    throw CorruptCheckpoint("accumulator shape mismatch");
  }
  for (std::uint64_t& x : v) x = r.take_u64();
}

// Derives per-stage run options: folds a tag and salt into the parameter
// hash (so checkpoints of different stages cannot be confused) and gives
// each stage its own checkpoint file.
inline EnsembleOptions sub_options(const EnsembleOptions& base,
                                   const std::string& tag,
                                   std::uint64_t salt) {
  EnsembleOptions o = base;
  BinaryWriter w;
  w.put_bytes(tag);
  w.put_u64(salt);
  o.params_hash = fnv1a_64(w.bytes(), base.params_hash);
  if (!o.checkpoint_path.empty()) {
    o.checkpoint_path += "." + tag + (salt ? std::to_string(salt) : "");
  }
  return o;
}

inline std::uint64_t salt_f64(double v) {
  return std::bit_cast<std::uint64_t>(v);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Single-particle absorption run.

enum class Absorption { None, LeftWall, RightWall, TimeCap };

struct AbsorptionRecord {
  Absorption absorbed_at = Absorption::None;
  double absorb_time = 0.0;  // crossing time, or the cap when capped
  long discrete_collisions = 0;
  std::map<long, double> occupation;  // cell -> dwell time
  FlightState endpoint;               // state at absorption or at the cap
  long max_cell = 0;
  long min_cell = 0;
};

// Evolves one particle until it crosses an absorbing plane or exhausts
// t_cap, splitting every flight segment exactly over the unit cells it
// traverses, so the dwell times sum to the elapsed time to roundoff.
inline AbsorptionRecord run_until_absorption(const Engine& engine,
                                             const FlightState& initial,
                                             ImageRef start_on, double t_cap) {
  if (!(t_cap > 0.0)) {
    throw DomainError("run_until_absorption: t_cap must be positive");
  }
  AbsorptionRecord rec;
  bool seen = false;
  auto add = [&rec, &seen](long cell, double dt) {
    rec.occupation[cell] += dt;
    if (!seen) {
      rec.min_cell = rec.max_cell = cell;
      seen = true;
    } else {
      rec.min_cell = std::min(rec.min_cell, cell);
      rec.max_cell = std::max(rec.max_cell, cell);
    }
  };
  auto split = [&add](Vec2 q, Vec2 v, double /*t0*/, double len) {
    long cur = static_cast<long>(std::floor(q.x));
    double prev = 0.0;
    for_each_cell_crossing(q, v, len, [&](long entered, double t) {
      add(cur, t - prev);
      cur = entered;
      prev = t;
    });
    add(cur, len - prev);
  };
  const auto out = flow_visit(engine, initial, t_cap,
                              Walls::for_config(engine.config()), split,
                              start_on);
  rec.discrete_collisions = out.collisions;
  rec.endpoint = out.state;
  if (out.absorbed) {
    rec.absorbed_at =
        out.plane == 0.0 ? Absorption::LeftWall : Absorption::RightWall;
    rec.absorb_time = out.absorb_time;
  } else {
    rec.absorbed_at = Absorption::TimeCap;
    rec.absorb_time = out.state.time;
  }
  return rec;
}

// ---------------------------------------------------------------------------
// Transport coefficients.

struct TransportEstimates {
  double sigma2 = 0.0;      // Var(X_n)/n
  double kappa_bar = 0.0;   // mean(F_n)/n
  double sigma_hat2 = 0.0;  // sigma2/kappa_bar
  Sym2 covariance{};        // of (X_n, F_n - n*kappa_bar)/sqrt(n)
  double sigma2_se = 0.0;
  double kappa_bar_se = 0.0;
  double sigma_hat2_se = 0.0;
  Sym2 covariance_se{};
  std::uint64_t particles = 0;
  long steps = 0;
};

namespace detail {

struct TransportAcc {
  std::vector<double> m, sx, sf, sxx, sff, sxf;  // per jackknife group

  explicit TransportAcc(long groups)
      : m(static_cast<std::size_t>(groups), 0.0),
        sx(m.size(), 0.0),
        sf(m.size(), 0.0),
        sxx(m.size(), 0.0),
        sff(m.size(), 0.0),
        sxf(m.size(), 0.0) {}

  void add(std::uint64_t i, double x, double f) {
    const auto g = static_cast<std::size_t>(i % m.size());
    m[g] += 1.0;
    sx[g] += x;
    sf[g] += f;
    sxx[g] += x * x;
    sff[g] += f * f;
    sxf[g] += x * f;
  }
  void merge(const TransportAcc& o) {
    for (std::size_t g = 0; g < m.size(); ++g) {
      m[g] += o.m[g];
      sx[g] += o.sx[g];
      sf[g] += o.sf[g];
      sxx[g] += o.sxx[g];
      sff[g] += o.sff[g];
      sxf[g] += o.sxf[g];
    }
  }
  void save(BinaryWriter& w) const {
    save_f64s(w, m);
    save_f64s(w, sx);
    save_f64s(w, sf);
    save_f64s(w, sxx);
    save_f64s(w, sff);
    save_f64s(w, sxf);
  }
  void load(BinaryReader& r) {
    load_f64s_exact(r, m);
    load_f64s_exact(r, sx);
    load_f64s_exact(r, sf);
    load_f64s_exact(r, sxx);
    load_f64s_exact(r, sff);
    load_f64s_exact(r, sxf);
  }
};

struct TransportPoint {
  double sigma2, kappa, sigma_hat2, s11, s12, s22;
};

inline TransportPoint transport_eval(double m, double sx, double sf,
                                     double sxx, double sff, double sxf,
                                     double n) {
  const double var_x = (sxx - sx * sx / m) / (m - 1.0);
  const double var_f = (sff - sf * sf / m) / (m - 1.0);
  const double cov = (sxf - sx * sf / m) / (m - 1.0);
  TransportPoint t;
  t.sigma2 = var_x / n;
  t.kappa = sf / (m * n);
  t.sigma_hat2 = t.sigma2 / t.kappa;
  t.s11 = t.sigma2;
  t.s12 = cov / n;
  t.s22 = var_f / n;
  return t;
}

}  // namespace detail

// Diffusion and flight-time statistics after n_steps collisions, from
// collision-measure starts in cell 0 of the unbounded channel.  Standard
// errors come from a delete-a-group jackknife.
inline TransportEstimates estimate_transport(const Engine& engine,
                                             long n_steps,
                                             const EnsembleOptions& opts) {
  if (engine.config().kind != TubeKind::BiInfinite) {
    throw InvalidConfiguration("transport needs the unbounded channel");
  }
  if (n_steps < 1) throw DomainError("transport: n_steps must be >= 1");
  if (opts.particles < 64) {
    throw InsufficientSamples("transport: need at least 64 particles");
  }
  const long groups = detail::stat_groups(opts.particles);
  const auto run_opts = detail::sub_options(
      opts, "transport", static_cast<std::uint64_t>(n_steps));
  const auto& cfg = engine.config();

  auto res = run_ensemble(
      run_opts, [groups] { return detail::TransportAcc(groups); },
      [&engine, &cfg, n_steps](detail::TransportAcc& acc, std::uint64_t i,
                               RandomStream& rng) {
        const auto b = sample_mu0_cell0(rng, cfg);
        OrbitWalker w(engine, b);
        double x = 0.0, f = 0.0;
        for (long k = 0; k < n_steps; ++k) {
          const auto s = w.step();
          x += s.dx;
          f += s.flight;
        }
        acc.add(i, x, f);
      });
  const auto& a = res.value;

  double m = 0, sx = 0, sf = 0, sxx = 0, sff = 0, sxf = 0;
  for (std::size_t g = 0; g < a.m.size(); ++g) {
    m += a.m[g];
    sx += a.sx[g];
    sf += a.sf[g];
    sxx += a.sxx[g];
    sff += a.sff[g];
    sxf += a.sxf[g];
  }
  const double n = static_cast<double>(n_steps);
  const auto full = detail::transport_eval(m, sx, sf, sxx, sff, sxf, n);

  // Delete-a-group jackknife over all six statistics at once.
  std::vector<detail::TransportPoint> leave;
  leave.reserve(a.m.size());
  for (std::size_t g = 0; g < a.m.size(); ++g) {
    if (a.m[g] <= 0.0 || m - a.m[g] < 2.0) continue;
    leave.push_back(detail::transport_eval(m - a.m[g], sx - a.sx[g],
                                           sf - a.sf[g], sxx - a.sxx[g],
                                           sff - a.sff[g], sxf - a.sxf[g], n));
  }
  const double gn = static_cast<double>(leave.size());
  auto jack_se = [&leave, gn](auto member) {
    double mean = 0.0;
    for (const auto& p : leave) mean += p.*member;
    mean /= gn;
    double ss = 0.0;
    for (const auto& p : leave) {
      ss += (p.*member - mean) * (p.*member - mean);
    }
    return std::sqrt((gn - 1.0) / gn * ss);
  };

  TransportEstimates est;
  est.sigma2 = full.sigma2;
  est.kappa_bar = full.kappa;
  est.sigma_hat2 = full.sigma_hat2;
  est.covariance = {full.s11, full.s12, full.s22};
  est.sigma2_se = jack_se(&detail::TransportPoint::sigma2);
  est.kappa_bar_se = jack_se(&detail::TransportPoint::kappa);
  est.sigma_hat2_se = jack_se(&detail::TransportPoint::sigma_hat2);
  est.covariance_se = {jack_se(&detail::TransportPoint::s11),
                       jack_se(&detail::TransportPoint::s12),
                       jack_se(&detail::TransportPoint::s22)};
  est.particles = res.completed;
  est.steps = n_steps;
  return est;
}

// ---------------------------------------------------------------------------
// Survival tail.

struct SurvivalTable {
  std::vector<double> horizons;
  std::vector<double> survival;  // empirical P(absorption time > N)
  std::vector<double> stderr_;
  std::optional<FitResult> fit;  // log survival vs log horizon
  double c1_hat = 0.0;           // mean of P*sqrt(N) over the fitted rows
  std::uint64_t particles = 0;
};

namespace detail {

struct CountsAcc {
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  explicit CountsAcc(std::size_t n) : counts(n, 0) {}
  void merge(const CountsAcc& o) {
    for (std::size_t j = 0; j < counts.size(); ++j) counts[j] += o.counts[j];
    total += o.total;
  }
  void save(BinaryWriter& w) const {
    save_u64s(w, counts);
    w.put_u64(total);
  }
  void load(BinaryReader& r) {
    load_u64s_exact(r, counts);
    total = r.take_u64();
  }
};

}  // namespace detail

// Fraction of injected particles still alive past each horizon (continuous
// time), with the fitted tail exponent.  The tail-constant estimate c1_hat
// uses the same rows as the fit.
inline SurvivalTable survival_tail(const Engine& engine,
                                   const InjectionMeasure& measure,
                                   const std::vector<double>& horizons,
                                   const EnsembleOptions& opts) {
  if (engine.config().kind != TubeKind::SemiInfinite) {
    throw InvalidConfiguration("survival needs the half-open channel");
  }
  if (horizons.empty()) throw DomainError("survival: no horizons given");
  double max_n = 0.0;
  for (const double h : horizons) {
    if (!(h >= 0.0)) throw DomainError("survival: horizons must be >= 0");
    max_n = std::max(max_n, h);
  }
  if (opts.particles < 1) {
    throw InsufficientSamples("survival: need at least one particle");
  }

  const auto run_opts =
      detail::sub_options(opts, "survival", detail::salt_f64(max_n));
  const InjectionSampler sampler(engine, measure);
  const Walls walls = Walls::for_config(engine.config());
  const double inf = std::numeric_limits<double>::infinity();

  auto res = run_ensemble(
      run_opts, [&horizons] { return detail::CountsAcc(horizons.size()); },
      [&](detail::CountsAcc& acc, std::uint64_t, RandomStream& rng) {
        ImageRef on{};
        const auto s = sampler.sample(rng, on);
        const auto out = flow_visit(
            engine, s, max_n, walls,
            [](Vec2, Vec2, double, double) {}, on);
        const double tau = out.absorbed ? out.absorb_time : inf;
        for (std::size_t j = 0; j < horizons.size(); ++j) {
          if (tau > horizons[j]) ++acc.counts[j];
        }
        ++acc.total;
      });

  SurvivalTable table;
  table.horizons = horizons;
  table.particles = res.completed;
  const double m = static_cast<double>(res.value.total);
  std::vector<TailPoint> rows;
  double c1_sum = 0.0;
  for (std::size_t j = 0; j < horizons.size(); ++j) {
    const double p = static_cast<double>(res.value.counts[j]) / m;
    const double se = detail::binomial_se(p, m);
    table.survival.push_back(p);
    table.stderr_.push_back(se);
    if (horizons[j] > 0.0 && p > 0.0 && p < 1.0 && se > 0.0) {
      rows.push_back({horizons[j], p, se});
      c1_sum += p * std::sqrt(horizons[j]);
    }
  }
  if (!rows.empty()) {
    c1_sum /= static_cast<double>(rows.size());
    table.c1_hat = c1_sum;
  }
  if (rows.size() >= 3) table.fit = loglog_slope(rows);
  return table;
}

// ---------------------------------------------------------------------------
// Conditioned endpoint/maximum samples.

struct MeanderSamples {
  std::vector<double> endpoints;  // final position / sqrt(horizon)
  std::vector<double> maxima;     // running maximum / sqrt(horizon)
  std::uint64_t particles = 0;
  std::uint64_t survivors = 0;
  double horizon = 0.0;
};

namespace detail {

struct PairListAcc {
  std::vector<double> a, b;
  std::uint64_t particles = 0;

  void merge(const PairListAcc& o) {
    a.insert(a.end(), o.a.begin(), o.a.end());
    b.insert(b.end(), o.b.begin(), o.b.end());
    particles += o.particles;
  }
  void save(BinaryWriter& w) const {
    save_f64s(w, a);
    save_f64s(w, b);
    w.put_u64(particles);
  }
  void load(BinaryReader& r) {
    load_f64s_any(r, a);
    load_f64s_any(r, b);
    particles = r.take_u64();
  }
};

}  // namespace detail

// Scaled (endpoint, running maximum) pairs of the particles that survive to
// the horizon without touching the absorbing end.
inline MeanderSamples meander_statistics(const Engine& engine,
                                         const InjectionMeasure& measure,
                                         double horizon,
                                         const EnsembleOptions& opts) {
  if (engine.config().kind != TubeKind::SemiInfinite) {
    throw InvalidConfiguration("meander sampling needs the half-open channel");
  }
  if (!(horizon > 0.0)) throw DomainError("meander: horizon must be positive");

  const auto run_opts =
      detail::sub_options(opts, "meander", detail::salt_f64(horizon));
  const InjectionSampler sampler(engine, measure);
  const Walls walls = Walls::for_config(engine.config());
  const double scale = std::sqrt(horizon);

  auto res = run_ensemble(
      run_opts, [] { return detail::PairListAcc{}; },
      [&](detail::PairListAcc& acc, std::uint64_t, RandomStream& rng) {
        ImageRef on{};
        const auto s = sampler.sample(rng, on);
        double peak = s.position.x;
        const auto out = flow_visit(
            engine, s, horizon, walls,
            [&peak](Vec2 q, Vec2 v, double, double len) {
              peak = std::max(peak, std::max(q.x, q.x + len * v.x));
            },
            on);
        if (!out.absorbed) {
          acc.a.push_back(out.state.position.x / scale);
          acc.b.push_back(peak / scale);
        }
        ++acc.particles;
      });

  MeanderSamples out;
  out.endpoints = std::move(res.value.a);
  out.maxima = std::move(res.value.b);
  out.particles = res.completed;
  out.survivors = out.endpoints.size();
  out.horizon = horizon;
  if (out.survivors < 1000) {
    throw TooFewSurvivors("meander: only " + std::to_string(out.survivors) +
                          " of " + std::to_string(out.particles) +
                          " particles survived; need 1000");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Density profiles.

struct DensityCell {
  double estimate = 0.0;
  double stderr_ = 0.0;
  std::uint64_t n_contributing = 0;
};

struct DensityProfile {
  std::vector<DensityCell> cells;
  std::string measure;
  double lambda = 0.0;
  double t_cap = 0.0;
  long length = 0;  // number of cells reported
  std::uint64_t particles = 0;
  // Upper bound on what the finite cap can still owe each cell, computed
  // from a previously fitted survival constant (0 when none was supplied).
  double tail_bias_bound = 0.0;
};

namespace detail {

struct DensityAcc {
  long groups = 0;
  long cells = 0;
  std::vector<double> sums;     // groups x cells dwell-time totals
  std::vector<double> group_m;  // particles per group
  std::vector<std::uint64_t> contrib;

  DensityAcc(long g, long c)
      : groups(g),
        cells(c),
        sums(static_cast<std::size_t>(g * c), 0.0),
        group_m(static_cast<std::size_t>(g), 0.0),
        contrib(static_cast<std::size_t>(c), 0) {}

  void merge(const DensityAcc& o) {
    for (std::size_t k = 0; k < sums.size(); ++k) sums[k] += o.sums[k];
    for (std::size_t g = 0; g < group_m.size(); ++g) group_m[g] += o.group_m[g];
    for (std::size_t c = 0; c < contrib.size(); ++c) contrib[c] += o.contrib[c];
  }
  void save(BinaryWriter& w) const {
    save_f64s(w, sums);
    save_f64s(w, group_m);
    save_u64s(w, contrib);
  }
  void load(BinaryReader& r) {
    load_f64s_exact(r, sums);
    load_f64s_exact(r, group_m);
    load_u64s_exact(r, contrib);
  }
};

}  // namespace detail

// Expected particle count per cell under a stationary source of rate
// lambda: lambda times the mean dwell time before absorption (capped).
// Error bars are a group bootstrap over particles; resampling draws come
// from a dedicated stream, so they are reproducible and thread-independent.
inline DensityProfile density_profile(const Engine& engine,
                                      const InjectionMeasure& measure,
                                      double lambda, double t_cap,
                                      long n_cells,
                                      const EnsembleOptions& opts,
                                      double c1_hat_for_bias = 0.0) {
  const auto kind = engine.config().kind;
  if (kind == TubeKind::BiInfinite) {
    throw InvalidConfiguration("density profile needs absorbing ends");
  }
  if (!(lambda > 0.0)) throw DomainError("density: lambda must be positive");
  if (!(t_cap > 0.0)) throw DomainError("density: t_cap must be positive");
  if (n_cells < 1) throw DomainError("density: need at least one cell");
  if (kind == TubeKind::Finite && n_cells > engine.config().length) {
    throw DomainError("density: cell window exceeds the channel length");
  }
  if (opts.particles < 2) {
    throw InsufficientSamples("density: need at least two particles");
  }

  const long groups = detail::stat_groups(opts.particles);
  auto run_opts = detail::sub_options(opts, "density",
                                      static_cast<std::uint64_t>(n_cells));
  run_opts.params_hash =
      fnv1a_64(std::string(measure.name()),
               run_opts.params_hash ^ detail::salt_f64(t_cap));
  const InjectionSampler sampler(engine, measure);
  const Walls walls = Walls::for_config(engine.config());

  auto res = run_ensemble(
      run_opts, [groups, n_cells] { return detail::DensityAcc(groups, n_cells); },
      [&](detail::DensityAcc& acc, std::uint64_t i, RandomStream& rng) {
        std::vector<double> occ(static_cast<std::size_t>(n_cells), 0.0);
        OccupancySplitter split(0, n_cells, occ.data());
        ImageRef on{};
        const auto s = sampler.sample(rng, on);
        flow_visit(engine, s, t_cap, walls, split, on);
        const auto g = static_cast<std::size_t>(
            i % static_cast<std::uint64_t>(acc.groups));
        acc.group_m[g] += 1.0;
        for (long c = 0; c < n_cells; ++c) {
          const double t = occ[static_cast<std::size_t>(c)];
          if (t > 0.0) {
            acc.sums[g * static_cast<std::size_t>(n_cells) +
                     static_cast<std::size_t>(c)] += t;
            ++acc.contrib[static_cast<std::size_t>(c)];
          }
        }
      });
  const auto& acc = res.value;

  DensityProfile profile;
  profile.measure = measure.name();
  profile.lambda = lambda;
  profile.t_cap = t_cap;
  profile.length = n_cells;
  profile.particles = res.completed;
  profile.tail_bias_bound = c1_hat_for_bias * lambda *
                            static_cast<double>(n_cells) / std::sqrt(t_cap);

  double total_m = 0.0;
  for (const double g : acc.group_m) total_m += g;
  std::vector<double> cell_total(static_cast<std::size_t>(n_cells), 0.0);
  for (long g = 0; g < groups; ++g) {
    for (long c = 0; c < n_cells; ++c) {
      cell_total[static_cast<std::size_t>(c)] +=
          acc.sums[static_cast<std::size_t>(g * n_cells + c)];
    }
  }

  // Group bootstrap: each replicate resamples whole groups, the same draw
  // serving every cell (the resampled profile stays internally coherent).
  constexpr int kReplicates = 200;
  RandomStream boot(opts.master_seed, detail::kResampleStream);
  std::vector<double> rep(static_cast<std::size_t>(n_cells), 0.0);
  std::vector<double> mean_b(static_cast<std::size_t>(n_cells), 0.0);
  std::vector<double> m2_b(static_cast<std::size_t>(n_cells), 0.0);
  std::vector<std::uint32_t> weight(static_cast<std::size_t>(groups), 0);
  for (int b = 0; b < kReplicates; ++b) {
    std::fill(weight.begin(), weight.end(), 0);
    for (long g = 0; g < groups; ++g) {
      const auto pick = static_cast<std::size_t>(
          boot.uniform() * static_cast<double>(groups));
      ++weight[std::min(pick, static_cast<std::size_t>(groups - 1))];
    }
    double m_b = 0.0;
    std::fill(rep.begin(), rep.end(), 0.0);
    for (long g = 0; g < groups; ++g) {
      const double w = weight[static_cast<std::size_t>(g)];
      if (w == 0.0) continue;
      m_b += w * acc.group_m[static_cast<std::size_t>(g)];
      for (long c = 0; c < n_cells; ++c) {
        rep[static_cast<std::size_t>(c)] +=
            w * acc.sums[static_cast<std::size_t>(g * n_cells + c)];
      }
    }
    for (long c = 0; c < n_cells; ++c) {
      const double est =
          m_b > 0.0 ? lambda * rep[static_cast<std::size_t>(c)] / m_b : 0.0;
      const double delta = est - mean_b[static_cast<std::size_t>(c)];
      mean_b[static_cast<std::size_t>(c)] += delta / (b + 1);
      m2_b[static_cast<std::size_t>(c)] +=
          delta * (est - mean_b[static_cast<std::size_t>(c)]);
    }
  }

  profile.cells.resize(static_cast<std::size_t>(n_cells));
  for (long c = 0; c < n_cells; ++c) {
    auto& cell = profile.cells[static_cast<std::size_t>(c)];
    cell.estimate = lambda * cell_total[static_cast<std::size_t>(c)] / total_m;
    cell.stderr_ = std::sqrt(m2_b[static_cast<std::size_t>(c)] /
                             (kReplicates - 1.0));
    cell.n_contributing = acc.contrib[static_cast<std::size_t>(c)];
  }
  return profile;
}

// ---------------------------------------------------------------------------
// Relaxation of a macroscopic density profile.

// Nominal boundary density sustained per unit injection rate by a
// collision-measure source. The true value depends on the obstacle layout
// (the semi-open plateau experiment measures it directly: the default
// two-disk layout gives about 6.0, not this nominal figure), so protocols
// that need the compatibility check to reflect a specific geometry should
// override HeatProtocol::boundary_constant with a calibrated value.
inline constexpr double kInjectionPlateau = 2.0;

struct HeatProtocol {
  std::function<double(double)> f;  // initial macroscopic profile on [0,1]
  double lambda0 = 0.0;             // left source rate (per unit time)
  double lambda1 = 0.0;             // right source rate
  std::vector<double> times;        // macroscopic snapshot times, ascending
  double scale = 1000.0;            // intensity multiplier Lambda
  // Sustained boundary density per unit source rate, used only for the
  // initial/boundary compatibility warning below.
  double boundary_constant = kInjectionPlateau;
};

struct HeatRun {
  OccupancyField field;
  std::vector<std::string> warnings;
  std::uint64_t initial_particles = 0;
  std::uint64_t injected_particles = 0;
};

namespace detail {

struct HeatAcc {
  std::vector<std::uint64_t> counts;  // times x cells
  std::uint64_t initial = 0;
  std::uint64_t injected = 0;

  explicit HeatAcc(std::size_t n) : counts(n, 0) {}
  void merge(const HeatAcc& o) {
    for (std::size_t k = 0; k < counts.size(); ++k) counts[k] += o.counts[k];
    initial += o.initial;
    injected += o.injected;
  }
  void save(BinaryWriter& w) const {
    save_u64s(w, counts);
    w.put_u64(initial);
    w.put_u64(injected);
  }
  void load(BinaryReader& r) {
    load_u64s_exact(r, counts);
    initial = r.take_u64();
    injected = r.take_u64();
  }
};

// Counts which cell a particle occupies at each snapshot time it is alive
// for.  Feed it every flight segment in order; call finish() if the
// particle is still alive when its evolution window ends.
class SnapshotCounter {
 public:
  SnapshotCounter(const std::vector<double>& times_abs, long cells,
                  std::vector<std::uint64_t>& grid, double birth)
      : times_(&times_abs), cells_(cells), grid_(&grid) {
    next_ = static_cast<std::size_t>(
        std::lower_bound(times_abs.begin(), times_abs.end(), birth) -
        times_abs.begin());
  }

  void operator()(Vec2 q, Vec2 v, double t0, double len) {
    while (next_ < times_->size()) {
      const double t = (*times_)[next_];
      if (t >= t0 + len) return;
      record(q.x + (t - t0) * v.x);
      ++next_;
    }
  }

  void finish(Vec2 end_position) {
    while (next_ < times_->size()) {
      record(end_position.x);
      ++next_;
    }
  }

 private:
  void record(double x) {
    const long cell = static_cast<long>(std::floor(x));
    if (cell >= 0 && cell < cells_) {
      ++(*grid_)[next_ * static_cast<std::size_t>(cells_) +
                 static_cast<std::size_t>(cell)];
    }
  }

  const std::vector<double>* times_;
  long cells_;
  std::vector<std::uint64_t>* grid_;
  std::size_t next_ = 0;
};

}  // namespace detail

// Seeds every cell k with Poisson(scale * f(k/L)) particles at uniform free
// positions and directions, keeps collision-measure sources running at both
// ends at rates scale*lambda, and records per-cell counts at the snapshot
// times t*L^2, divided by the scale.  The left source injects on the cell-0
// collision measure; the right source injects on its reflection through the
// channel midplane (see RightEndSampler), so for mirror-symmetric obstacle
// layouts both ends sustain the same boundary level per unit rate.  Work is
// partitioned into L+2 independent jobs (one per initial cell, one per
// source).
inline HeatRun heat_evolution(const Engine& engine, const HeatProtocol& proto,
                              const EnsembleOptions& opts) {
  const auto& cfg = engine.config();
  if (cfg.kind != TubeKind::Finite) {
    throw InvalidConfiguration("heat relaxation needs a finite channel");
  }
  if (!proto.f) throw DomainError("heat: no initial profile given");
  if (proto.times.empty()) throw DomainError("heat: no snapshot times");
  if (!(proto.scale > 0.0)) throw DomainError("heat: scale must be positive");
  if (!(proto.lambda0 >= 0.0) || !(proto.lambda1 >= 0.0)) {
    throw DomainError("heat: source rates must be >= 0");
  }
  const long length = cfg.length;
  const double big_l2 = static_cast<double>(length) *
                        static_cast<double>(length);
  std::vector<double> times_abs;
  double prev = -1.0;
  for (const double t : proto.times) {
    if (!(t >= 0.0) || t <= prev) {
      throw DomainError("heat: snapshot times must be ascending and >= 0");
    }
    prev = t;
    times_abs.push_back(t * big_l2);
  }
  const double t_end = times_abs.back();

  HeatRun run;
  const double f0 = proto.f(0.0), f1 = proto.f(1.0);
  if (std::abs(f0 - proto.boundary_constant * proto.lambda0) >
      1e-9 * (1.0 + f0)) {
    run.warnings.push_back(
        "left boundary: initial profile does not match the sustained source "
        "level; expect a relaxing boundary layer");
  }
  if (std::abs(f1 - proto.boundary_constant * proto.lambda1) >
      1e-9 * (1.0 + f1)) {
    run.warnings.push_back(
        "right boundary: initial profile does not match the sustained source "
        "level; expect a relaxing boundary layer");
  }
  for (long k = 0; k < length; ++k) {
    if (!(proto.f(static_cast<double>(k) / static_cast<double>(length)) >=
          0.0)) {
      throw DomainError("heat: initial profile must be >= 0");
    }
  }

  auto run_opts = detail::sub_options(opts, "heat",
                                      static_cast<std::uint64_t>(length));
  run_opts.params_hash =
      fnv1a_64("", run_opts.params_hash ^ detail::salt_f64(proto.scale) ^
                       detail::salt_f64(t_end));
  run_opts.particles = static_cast<std::uint64_t>(length) + 2;
  run_opts.chunk = 1;  // jobs are few and heavy; claim them one at a time
  const Walls walls = Walls::for_config(cfg);
  const RightEndSampler right_source(cfg);
  const auto grid_size = times_abs.size() * static_cast<std::size_t>(length);
  constexpr double kTwoPi = 6.28318530717958647692528676655900577;

  auto res = run_ensemble(
      run_opts, [grid_size] { return detail::HeatAcc(grid_size); },
      [&](detail::HeatAcc& acc, std::uint64_t job, RandomStream& rng) {
        if (job < static_cast<std::uint64_t>(length)) {
          const auto cell = static_cast<long>(job);
          const double mean =
              proto.scale * proto.f(static_cast<double>(cell) /
                                    static_cast<double>(length));
          const long count = rng.poisson(mean);
          acc.initial += static_cast<std::uint64_t>(count);
          for (long i = 0; i < count; ++i) {
            Vec2 pos;
            do {
              pos = {static_cast<double>(cell) + rng.uniform(), rng.uniform()};
            } while (engine.signed_clearance(pos) <= 0.0);
            const double th = rng.uniform(0.0, kTwoPi);
            const FlightState s{pos, {std::cos(th), std::sin(th)}, 0.0};
            detail::SnapshotCounter snap(times_abs, length, acc.counts, 0.0);
            const auto out = flow_visit(engine, s, t_end, walls,
                                        std::ref(snap), ImageRef{});
            if (!out.absorbed) snap.finish(out.state.position);
          }
          return;
        }
        const bool left = job == static_cast<std::uint64_t>(length);
        const double rate = proto.scale * (left ? proto.lambda0 : proto.lambda1);
        if (!(rate > 0.0)) return;
        double t = rng.exponential(rate);
        while (t < t_end) {
          auto b = left ? sample_mu0_cell0(rng, cfg) : right_source.sample(rng);
          b.time = t;
          const FlightState s = engine.from_boundary(b);
          detail::SnapshotCounter snap(times_abs, length, acc.counts, t);
          const auto out = flow_visit(engine, s, t_end - t, walls,
                                      std::ref(snap),
                                      ImageRef{b.disk_id, b.cell, 0});
          if (!out.absorbed) snap.finish(out.state.position);
          ++acc.injected;
          t += rng.exponential(rate);
        }
      });

  run.field.times = proto.times;
  run.field.cells = length;
  run.field.scale = proto.scale;
  run.field.u_hat.resize(grid_size);
  run.field.stderr_.resize(grid_size);
  for (std::size_t k = 0; k < grid_size; ++k) {
    const double c = static_cast<double>(res.value.counts[k]);
    run.field.u_hat[k] = c / proto.scale;
    run.field.stderr_[k] = std::sqrt(c) / proto.scale;
  }
  run.initial_particles = res.value.initial;
  run.injected_particles = res.value.injected;
  return run;
}

// ---------------------------------------------------------------------------
// Local time at a distant cell.

struct LocalTimeRow {
  long length = 0;  // distance L of the observed cell
  double visit_ratio = 0.0;  // mean collision count in cell L, over L
  double visit_se = 0.0;
  double occupation_ratio = 0.0;  // mean dwell time in cell L, over L
  double occupation_se = 0.0;
  double capped_fraction = 0.0;
  std::uint64_t particles = 0;
};

struct LocalTimeEstimates {
  std::vector<LocalTimeRow> rows;
  std::optional<FitResult> visit_extrapolation;  // ratio against 1/L
};

namespace detail {

struct BivariateAcc {
  double m = 0, sa = 0, saa = 0, sb = 0, sbb = 0;
  std::uint64_t capped = 0;

  void add(double a, double b) {
    m += 1.0;
    sa += a;
    saa += a * a;
    sb += b;
    sbb += b * b;
  }
  void merge(const BivariateAcc& o) {
    m += o.m;
    sa += o.sa;
    saa += o.saa;
    sb += o.sb;
    sbb += o.sbb;
    capped += o.capped;
  }
  void save(BinaryWriter& w) const {
    w.put_f64(m);
    w.put_f64(sa);
    w.put_f64(saa);
    w.put_f64(sb);
    w.put_f64(sbb);
    w.put_u64(capped);
  }
  void load(BinaryReader& r) {
    m = r.take_f64();
    sa = r.take_f64();
    saa = r.take_f64();
    sb = r.take_f64();
    sbb = r.take_f64();
    capped = r.take_u64();
  }
};

}  // namespace detail

// Starts particles on the collision measure in cell L and counts (a) the
// collisions landing in cell L before the first collision at negative x —
// the walk convention of absorption — and (b) the dwell time in the strip
// [L, L+1] before the first continuous crossing of 0.  Both come from the
// same trajectory; runs are capped at 100 L^2 time units (the capped
// fraction is reported).
inline LocalTimeEstimates local_time_constant(const Engine& engine,
                                              const std::vector<long>& lengths,
                                              const EnsembleOptions& opts) {
  if (engine.config().kind == TubeKind::Finite) {
    throw InvalidConfiguration("local time needs an unbounded right end");
  }
  if (lengths.empty()) throw DomainError("local time: no lengths given");
  if (opts.particles < 2) {
    throw InsufficientSamples("local time: need at least two particles");
  }
  const auto& cfg = engine.config();
  const double kappa = mean_free_path(cfg);
  const double inf = std::numeric_limits<double>::infinity();

  LocalTimeEstimates est;
  for (const long length : lengths) {
    if (length < 1) throw DomainError("local time: lengths must be >= 1");
    const double t_cap = 100.0 * static_cast<double>(length) *
                         static_cast<double>(length);
    // Safety net only; the loop normally exits on the time cap or on death.
    const long step_cap = static_cast<long>(4.0 * t_cap / kappa) + 1024;
    const auto run_opts = detail::sub_options(
        opts, "localtime", static_cast<std::uint64_t>(length));

    auto res = run_ensemble(
        run_opts, [] { return detail::BivariateAcc{}; },
        [&, length, t_cap, step_cap](detail::BivariateAcc& acc, std::uint64_t,
                                     RandomStream& rng) {
          const auto b = sample_mu0_cell(rng, cfg, length);
          OrbitWalker w(engine, b);
          const double lo = static_cast<double>(length);
          double prev_x = w.position().x;
          double prev_t = 0.0;
          long visits = static_cast<long>(std::floor(prev_x)) == length ? 1 : 0;
          double occupation = 0.0;
          double tau_hat = inf;  // first continuous touch of 0
          bool capped = true;
          for (long k = 0; k < step_cap; ++k) {
            const double vx = w.velocity().x;
            w.step();
            const double x = w.position().x;
            const double t = w.time();
            if (tau_hat == inf && x <= 0.0 && prev_x > 0.0) {
              tau_hat = prev_t + (0.0 - prev_x) / vx;
            }
            // Dwell time of this segment inside [L, L+1], truncated at the
            // continuous absorption and at the time cap.
            const double stop = std::min(tau_hat, t_cap);
            if (prev_t < stop) {
              double enter, exit;
              if (vx == 0.0) {
                const bool inside = prev_x >= lo && prev_x < lo + 1.0;
                enter = inside ? prev_t : inf;
                exit = t;
              } else {
                const double ta = prev_t + (lo - prev_x) / vx;
                const double tb = prev_t + (lo + 1.0 - prev_x) / vx;
                enter = std::max(std::min(ta, tb), prev_t);
                exit = std::min(std::max(ta, tb), t);
              }
              const double span = std::min(exit, stop) - enter;
              if (span > 0.0) occupation += span;
            }
            if (t >= t_cap) break;  // beyond the window; occupancy is clipped
            if (x < 0.0) {  // collision below the origin: the walk is dead
              capped = false;
              break;
            }
            if (static_cast<long>(std::floor(x)) == length) ++visits;
            prev_x = x;
            prev_t = t;
          }
          acc.add(static_cast<double>(visits), occupation);
          if (capped) ++acc.capped;
        });

    const auto& a = res.value;
    const double m = a.m;
    const double el = static_cast<double>(length);
    LocalTimeRow row;
    row.length = length;
    row.particles = res.completed;
    const double mean_v = a.sa / m;
    const double mean_o = a.sb / m;
    row.visit_ratio = mean_v / el;
    row.occupation_ratio = mean_o / el;
    row.visit_se =
        std::sqrt((a.saa - a.sa * a.sa / m) / (m - 1.0) / m) / el;
    row.occupation_se =
        std::sqrt((a.sbb - a.sb * a.sb / m) / (m - 1.0) / m) / el;
    row.capped_fraction = static_cast<double>(a.capped) / m;
    est.rows.push_back(row);
  }

  if (est.rows.size() >= 3) {
    std::vector<FitPoint> pts;
    for (const auto& row : est.rows) {
      pts.push_back({1.0 / static_cast<double>(row.length), row.visit_ratio,
                     std::max(row.visit_se, 1e-300)});
    }
    est.visit_extrapolation = weighted_linear_fit(pts);
  }
  return est;
}

// ---------------------------------------------------------------------------
// Local limit counting checks.

enum class LltMode { Continuous, Meander, Heat, Joint };

struct LltParams {
  double horizon = 0.0;  // Continuous/Meander: time T; Heat: macroscopic t
  long steps = 0;        // Joint: collision count n
  double x = 0.0;
  double y = 0.0;        // Meander barrier / Heat target / Joint time offset
  double window = 0.0;   // Joint: flight-time window width (0 -> kappa_bar)
  // Reference ingredients measured by the other experiments:
  double sigma_hat = 0.0;
  double c1_hat = 0.0;     // Meander
  double kappa_bar = 0.0;  // Joint (centering and default window)
  Sym2 covariance{};       // Joint
  long min_hits = 1000;
  long orbit_blocks = 32;  // Joint: sliding span per orbit, in units of steps
};

struct LltResult {
  double empirical = 0.0;
  double reference = 0.0;
  double stderr_ = 0.0;
  double z = 0.0;
  std::uint64_t hits = 0;
  std::uint64_t samples = 0;  // particles, or sliding windows for Joint
};

namespace detail {

struct HitAcc {
  std::uint64_t hits = 0;
  std::uint64_t samples = 0;

  void merge(const HitAcc& o) {
    hits += o.hits;
    samples += o.samples;
  }
  void save(BinaryWriter& w) const {
    w.put_u64(hits);
    w.put_u64(samples);
  }
  void load(BinaryReader& r) {
    hits = r.take_u64();
    samples = r.take_u64();
  }
};

struct ClusterAcc {
  double h = 0, s = 0, hh = 0, hs = 0, ss = 0;
  std::uint64_t clusters = 0;

  void add(double hi, double si) {
    h += hi;
    s += si;
    hh += hi * hi;
    hs += hi * si;
    ss += si * si;
    ++clusters;
  }
  void merge(const ClusterAcc& o) {
    h += o.h;
    s += o.s;
    hh += o.hh;
    hs += o.hs;
    ss += o.ss;
    clusters += o.clusters;
  }
  void save(BinaryWriter& w) const {
    w.put_f64(h);
    w.put_f64(s);
    w.put_f64(hh);
    w.put_f64(hs);
    w.put_f64(ss);
    w.put_u64(clusters);
  }
  void load(BinaryReader& r) {
    h = r.take_f64();
    s = r.take_f64();
    hh = r.take_f64();
    hs = r.take_f64();
    ss = r.take_f64();
    clusters = r.take_u64();
  }
};

inline LltResult finish_llt(double scale, double hits, double samples,
                            double reference, long min_hits) {
  LltResult out;
  out.hits = static_cast<std::uint64_t>(hits);
  out.samples = static_cast<std::uint64_t>(samples);
  if (hits < static_cast<double>(min_hits)) {
    throw InsufficientHits("local limit count: " +
                           std::to_string(out.hits) + " hits, need " +
                           std::to_string(min_hits));
  }
  const double p = hits / samples;
  out.empirical = scale * p;
  out.reference = reference;
  out.stderr_ = scale * binomial_se(p, samples);
  out.z = out.stderr_ > 0.0 ? (out.empirical - reference) / out.stderr_ : 0.0;
  return out;
}

}  // namespace detail

// Counting checks of the pointwise scaling limits.  The scaling prefactor
// equals the reciprocal of the target event's width in the relevant limit:
//   Continuous: cell width 1/sqrt(T)               -> sqrt(T) * P
//   Meander:    cell width 1/sqrt(T), survival ~ c1/sqrt(T) -> T * P
//   Heat:       cell width 1/L, survival order one -> L * P
//   Joint:      cell 1/sqrt(n) x window D/sqrt(n)  -> n * P / D
// `measure` feeds the Continuous and Meander starts (Meander's c1_hat must
// come from a survival fit under the same measure); Heat starts on the
// collision measure in the cell nearest x, Joint on the stationary orbit.
inline LltResult llt_counts(const Engine& engine, LltMode mode,
                            const LltParams& p,
                            const InjectionMeasure& measure,
                            const EnsembleOptions& opts) {
  const auto& cfg = engine.config();

  switch (mode) {
    case LltMode::Continuous: {
      if (cfg.kind != TubeKind::BiInfinite) {
        throw InvalidConfiguration("continuous count needs the unbounded channel");
      }
      if (!(p.horizon > 0.0)) throw DomainError("llt: horizon must be positive");
      if (!(p.sigma_hat > 0.0)) throw DomainError("llt: sigma_hat missing");
      const double root_t = std::sqrt(p.horizon);
      const long target = static_cast<long>(std::floor(p.x * root_t));
      const InjectionSampler sampler(engine, measure);
      const auto run_opts = detail::sub_options(
          opts, "lltc", detail::salt_f64(p.horizon) ^ detail::salt_f64(p.x));
      auto res = run_ensemble(
          run_opts, [] { return detail::HitAcc{}; },
          [&](detail::HitAcc& acc, std::uint64_t, RandomStream& rng) {
            ImageRef on{};
            const auto s = sampler.sample(rng, on);
            const auto out = flow_visit(engine, s, p.horizon, Walls{},
                                        [](Vec2, Vec2, double, double) {}, on);
            if (static_cast<long>(std::floor(out.state.position.x)) == target) {
              ++acc.hits;
            }
            ++acc.samples;
          });
      return detail::finish_llt(root_t, static_cast<double>(res.value.hits),
                                static_cast<double>(res.value.samples),
                                gaussian_density(p.sigma_hat, p.x),
                                p.min_hits);
    }

    case LltMode::Meander: {
      if (cfg.kind != TubeKind::SemiInfinite) {
        throw InvalidConfiguration("meander count needs the half-open channel");
      }
      if (!(p.horizon > 0.0)) throw DomainError("llt: horizon must be positive");
      if (!(0.0 < p.x && p.x < p.y)) {
        throw DomainError("llt: need 0 < x < y for the meander count");
      }
      if (!(p.sigma_hat > 0.0) || !(p.c1_hat > 0.0)) {
        throw DomainError("llt: sigma_hat and c1_hat missing");
      }
      const double root_t = std::sqrt(p.horizon);
      const long target = static_cast<long>(std::floor(p.x * root_t));
      const double barrier = p.y * root_t;
      const InjectionSampler sampler(engine, measure);
      const Walls walls = Walls::for_config(cfg);
      const auto run_opts = detail::sub_options(
          opts, "lltm", detail::salt_f64(p.horizon) ^ detail::salt_f64(p.y));
      auto res = run_ensemble(
          run_opts, [] { return detail::HitAcc{}; },
          [&](detail::HitAcc& acc, std::uint64_t, RandomStream& rng) {
            ImageRef on{};
            const auto s = sampler.sample(rng, on);
            double peak = s.position.x;
            const auto out = flow_visit(
                engine, s, p.horizon, walls,
                [&peak](Vec2 q, Vec2 v, double, double len) {
                  peak = std::max(peak, std::max(q.x, q.x + len * v.x));
                },
                on);
            if (!out.absorbed && peak <= barrier &&
                static_cast<long>(std::floor(out.state.position.x)) == target) {
              ++acc.hits;
            }
            ++acc.samples;
          });
      const MeanderLaw law{p.sigma_hat, 0, 1e-12};
      return detail::finish_llt(
          p.horizon, static_cast<double>(res.value.hits),
          static_cast<double>(res.value.samples),
          p.c1_hat * meander_density(law, p.x, p.y).value, p.min_hits);
    }

    case LltMode::Heat: {
      if (cfg.kind != TubeKind::Finite) {
        throw InvalidConfiguration("heat count needs a finite channel");
      }
      if (!(p.horizon > 0.0)) throw DomainError("llt: horizon must be positive");
      if (!(0.0 < p.x && p.x < 1.0 && 0.0 < p.y && p.y < 1.0)) {
        throw DomainError("llt: heat count needs x, y inside (0,1)");
      }
      if (!(p.sigma_hat > 0.0)) throw DomainError("llt: sigma_hat missing");
      const double el = static_cast<double>(cfg.length);
      const long start_cell = static_cast<long>(std::floor(p.x * el));
      const long target = static_cast<long>(std::floor(p.y * el));
      const double duration = p.horizon * el * el;
      const Walls walls = Walls::for_config(cfg);
      const auto run_opts = detail::sub_options(
          opts, "llth", detail::salt_f64(p.horizon) ^ detail::salt_f64(p.y));
      auto res = run_ensemble(
          run_opts, [] { return detail::HitAcc{}; },
          [&](detail::HitAcc& acc, std::uint64_t, RandomStream& rng) {
            const auto b = sample_mu0_cell(rng, cfg, start_cell);
            const FlightState s = engine.from_boundary(b);
            const auto out = flow_visit(engine, s, duration, walls,
                                        [](Vec2, Vec2, double, double) {},
                                        ImageRef{b.disk_id, b.cell, 0});
            if (!out.absorbed &&
                static_cast<long>(std::floor(out.state.position.x)) == target) {
              ++acc.hits;
            }
            ++acc.samples;
          });
      return detail::finish_llt(
          el, static_cast<double>(res.value.hits),
          static_cast<double>(res.value.samples),
          killed_bm_density(p.sigma_hat, p.horizon, p.x, p.y).value,
          p.min_hits);
    }

    case LltMode::Joint: {
      if (cfg.kind != TubeKind::BiInfinite) {
        throw InvalidConfiguration("joint count needs the unbounded channel");
      }
      if (p.steps < 1) throw DomainError("llt: steps must be >= 1");
      if (!(p.kappa_bar > 0.0)) throw DomainError("llt: kappa_bar missing");
      if (p.orbit_blocks < 2) {
        throw DomainError("llt: need at least two sliding blocks per orbit");
      }
      const double width = p.window > 0.0 ? p.window : p.kappa_bar;
      const double root_n = std::sqrt(static_cast<double>(p.steps));
      const long cell_off = static_cast<long>(std::floor(p.x * root_n));
      const double f_lo =
          p.kappa_bar * static_cast<double>(p.steps) + p.y * root_n;
      const long span = p.steps * p.orbit_blocks;
      const std::size_t ring = static_cast<std::size_t>(p.steps) + 1;
      const auto run_opts = detail::sub_options(
          opts, "lltj", static_cast<std::uint64_t>(p.steps) ^
                            detail::salt_f64(p.y));

      auto res = run_ensemble(
          run_opts, [] { return detail::ClusterAcc{}; },
          [&](detail::ClusterAcc& acc, std::uint64_t, RandomStream& rng) {
            const auto b = sample_mu0_cell0(rng, cfg);
            OrbitWalker w(engine, b);
            std::vector<long> cells(ring);
            std::vector<double> times(ring);
            cells[0] = static_cast<long>(std::floor(w.position().x));
            times[0] = 0.0;
            long h = 0;
            for (long k = 1; k <= span; ++k) {
              w.step();
              const auto idx = static_cast<std::size_t>(k) % ring;
              cells[idx] = static_cast<long>(std::floor(w.position().x));
              times[idx] = w.time();
              if (k >= p.steps) {
                const auto jdx =
                    static_cast<std::size_t>(k - p.steps) % ring;
                const double df = times[idx] - times[jdx];
                if (cells[idx] - cells[jdx] == cell_off && df >= f_lo &&
                    df < f_lo + width) {
                  ++h;
                }
              }
            }
            acc.add(static_cast<double>(h),
                    static_cast<double>(span - p.steps + 1));
          });
      const auto& a = res.value;
      LltResult out;
      out.hits = static_cast<std::uint64_t>(a.h);
      out.samples = static_cast<std::uint64_t>(a.s);
      if (a.h < static_cast<double>(p.min_hits)) {
        throw InsufficientHits("local limit count: " +
                               std::to_string(out.hits) + " hits, need " +
                               std::to_string(p.min_hits));
      }
      const double phat = a.h / a.s;
      const double scale = static_cast<double>(p.steps) / width;
      out.empirical = scale * phat;
      out.reference = gaussian_density2(p.covariance, p.x, p.y);
      // Windows along one orbit overlap, so the error bar treats each orbit
      // as one cluster.
      const double var_h = a.hh - 2.0 * phat * a.hs + phat * phat * a.ss;
      out.stderr_ = scale * std::sqrt(std::max(var_h, 0.0)) / a.s;
      out.z = out.stderr_ > 0.0 ? (out.empirical - out.reference) / out.stderr_
                                : 0.0;
      return out;
    }
  }
  throw Error("unreachable llt mode");
}

// ---------------------------------------------------------------------------
// Escape constant.

struct EscapeRow {
  long length = 0;
  double c_bar = 0.0;  // L * P(the walk reaches L before negative x)
  double stderr_ = 0.0;
  std::uint64_t wins = 0;
  std::uint64_t particles = 0;
  std::uint64_t capped = 0;
};

struct EscapeEstimate {
  std::vector<EscapeRow> rows;  // in the caller's length order
  double plateau = 0.0;         // value at the largest length
  double drift = 0.0;           // largest minus smallest length value
};

// Estimates lim L*P(tau_L < tau_*) for the collision walk: from each start,
// collisions are followed until one lands at x >= L (a win) or at x < 0 (a
// loss).  Runs are capped at 100 L^2 time units worth of collisions; capped
// walks count as losses and are tallied separately.
inline EscapeEstimate estimate_escape_constant(const Engine& engine,
                                               const InjectionMeasure& measure,
                                               const std::vector<long>& lengths,
                                               const EnsembleOptions& opts) {
  if (lengths.empty()) throw DomainError("escape: no lengths given");
  if (opts.particles < 1) {
    throw InsufficientSamples("escape: need at least one particle");
  }
  const auto& cfg = engine.config();
  const double kappa = mean_free_path(cfg);
  const InjectionSampler sampler(engine, measure);

  EscapeEstimate est;
  for (const long length : lengths) {
    if (length < 1) throw DomainError("escape: lengths must be >= 1");
    const long step_cap = static_cast<long>(
        100.0 * static_cast<double>(length) * static_cast<double>(length) /
        kappa) + 1;
    const auto run_opts = detail::sub_options(
        opts, "escape", static_cast<std::uint64_t>(length));

    struct WinAcc : detail::HitAcc {
      std::uint64_t capped = 0;
      void merge(const WinAcc& o) {
        detail::HitAcc::merge(o);
        capped += o.capped;
      }
      void save(BinaryWriter& w) const {
        detail::HitAcc::save(w);
        w.put_u64(capped);
      }
      void load(BinaryReader& r) {
        detail::HitAcc::load(r);
        capped = r.take_u64();
      }
    };

    auto res = run_ensemble(
        run_opts, [] { return WinAcc{}; },
        [&, length, step_cap](WinAcc& acc, std::uint64_t, RandomStream& rng) {
          ImageRef on{};
          FlightState s = sampler.sample(rng, on);
          ++acc.samples;
          // A collision-measure start is itself the walk's first point.
          if (on.disk >= 0) {
            if (s.position.x < 0.0) return;
            if (s.position.x >= static_cast<double>(length)) {
              ++acc.hits;
              return;
            }
          }
          for (long k = 0; k < step_cap; ++k) {
            const auto ev = engine.next_collision(s.position, s.velocity, on);
            s.position = ev.hit_point;
            s.velocity = reflect(s.velocity, ev.normal);
            on = {ev.disk_id, ev.cell, ev.wrap};
            if (s.position.x < 0.0) return;
            if (s.position.x >= static_cast<double>(length)) {
              ++acc.hits;
              return;
            }
          }
          ++acc.capped;
        });

    const double m = static_cast<double>(res.value.samples);
    const double p = static_cast<double>(res.value.hits) / m;
    EscapeRow row;
    row.length = length;
    row.c_bar = static_cast<double>(length) * p;
    row.stderr_ = static_cast<double>(length) * detail::binomial_se(p, m);
    row.wins = res.value.hits;
    row.particles = res.value.samples;
    row.capped = res.value.capped;
    est.rows.push_back(row);
  }

  const auto widest = std::max_element(
      est.rows.begin(), est.rows.end(),
      [](const EscapeRow& a, const EscapeRow& b) { return a.length < b.length; });
  const auto narrowest = std::min_element(
      est.rows.begin(), est.rows.end(),
      [](const EscapeRow& a, const EscapeRow& b) { return a.length < b.length; });
  est.plateau = widest->c_bar;
  est.drift = widest->c_bar - narrowest->c_bar;
  return est;
}

}  // namespace tube
