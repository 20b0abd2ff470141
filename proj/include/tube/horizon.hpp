// SPDX-License-Identifier: MIT
#pragma once

// Finite-horizon certification: every simulation in this library assumes the
// free flight between collisions is bounded.  The check is two-staged —
// an exact corridor scan over rational directions up to a denominator bound,
// then a Monte Carlo audit that records the extreme free flights actually
// observed.  Corridors steeper than the scan bound would need free flights
// longer than anything the audit tolerates, so the two stages back each
// other up.

#include <cmath>
#include <cstdint>
#include <sstream>

#include "tube/dynamics.hpp"
#include "tube/errors.hpp"
#include "tube/geometry.hpp"
#include "tube/measures.hpp"
#include "tube/philox.hpp"

namespace tube {

// Fixed audit seed: certification of a given configuration is deterministic.
inline constexpr std::uint64_t kHorizonAuditSeed = 0x686f72697a6f6eULL;

inline HorizonReport check_finite_horizon(
    const TubeConfig& config, int max_denominator, long mc_trajectories,
    long mc_steps, std::uint64_t audit_seed = kHorizonAuditSeed) {
  const auto validation = validate_configuration(config);
  if (!validation.pass) {
    throw InvalidConfiguration("horizon check: " + validation.failures.front());
  }
  if (mc_trajectories < 1 || mc_steps < 1) {
    throw InvalidConfiguration("horizon check: empty Monte Carlo budget");
  }

  HorizonReport report;

  if (auto corridor = corridor_scan(config, max_denominator)) {
    report.corridor_found = true;
    report.corridor = corridor;
    const double len = std::hypot(static_cast<double>(corridor->p),
                                  static_cast<double>(corridor->q));
    report.worst_direction = Vec2{corridor->p / len, corridor->q / len};
    return report;
  }

  // Monte Carlo flight audit on the unbounded (wall-free) dynamics.
  TubeConfig probe = config;
  probe.kind = TubeKind::BiInfinite;
  probe.horizon_certified = false;  // engine falls back to a wide search cap
  const Engine engine(probe);

  double kmax = 0.0;
  double kmin = std::numeric_limits<double>::infinity();
  long collisions = 0;
  for (long traj = 0; traj < mc_trajectories && !report.corridor_found;
       ++traj) {
    auto stream =
        derive_stream(audit_seed, static_cast<std::uint64_t>(traj));
    OrbitWalker walker(engine, sample_mu0_cell0(stream, probe));
    for (long k = 0; k < mc_steps; ++k) {
      try {
        const auto s = walker.step();
        kmax = std::max(kmax, s.flight);
        kmin = std::min(kmin, s.flight);
        ++collisions;
      } catch (const NoCollisionWithinHorizon&) {
        // A flight too long for even the fallback search window: treat the
        // current direction of motion as an empirical corridor.
        report.corridor_found = true;
        report.worst_direction = walker.velocity();
        break;
      }
    }
  }

  report.samples = collisions;
  report.empirical_kappa_max = kmax;
  report.empirical_kappa_min = kmin;
  return report;
}

// Convenience used by every experiment entry point: validate, certify, and
// return a configuration with its flight bounds filled in.  Throws
// CorridorFound when certification fails.
inline TubeConfig certify_config(const TubeConfig& config) {
  auto report =
      check_finite_horizon(config, config.audit.max_denominator,
                           config.audit.mc_trajectories, config.audit.mc_steps);
  if (report.corridor_found) {
    std::ostringstream os;
    os << "open corridor";
    if (report.corridor) {
      os << " in direction (" << report.corridor->p << ", "
         << report.corridor->q << "), clear width " << report.corridor->width;
    } else if (report.worst_direction) {
      os << " near direction (" << report.worst_direction->x << ", "
         << report.worst_direction->y << ")";
    }
    throw CorridorFound(os.str());
  }
  TubeConfig certified = config;
  certified.kappa_min_bound = report.empirical_kappa_min;
  certified.kappa_max_bound = report.empirical_kappa_max;
  certified.horizon_certified = true;
  return certified;
}

}  // namespace tube
