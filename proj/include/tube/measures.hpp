// SPDX-License-Identifier: MIT
#pragma once

// Random sources: initial-condition samplers for injected particles and the
// Poisson arrival process.  All sampling is driven by caller-supplied
// counter-based streams (one per particle), which is what makes ensembles
// reproducible independently of scheduling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tube/dynamics.hpp"
#include "tube/errors.hpp"
#include "tube/geometry.hpp"
#include "tube/philox.hpp"

namespace tube {

namespace detail {
inline constexpr double kPi = 3.14159265358979323846264338327950288;
inline constexpr double kTwoPi = 6.28318530717958647692528676655900577;
}  // namespace detail

// Stationary collision measure restricted to one cell: disk chosen with
// probability proportional to its perimeter (i.e. its radius), arc length
// uniform on the chosen circle, and sin(phi) uniform on [-1, 1] — the
// inverse-CDF realization of the cos(phi) density.  Outgoing orientation.
inline BoundaryState sample_mu0_cell(RandomStream& stream,
                                     const TubeConfig& config, long cell) {
  double r_sum = 0.0;
  for (const auto& d : config.disks) r_sum += d.radius;

  const double pick = stream.uniform() * r_sum;
  std::size_t disk = 0;
  double acc = 0.0;
  for (; disk + 1 < config.disks.size(); ++disk) {
    acc += config.disks[disk].radius;
    if (pick < acc) break;
  }

  BoundaryState b;
  b.disk_id = static_cast<int>(disk);
  b.cell = cell;
  b.r = stream.uniform() * detail::kTwoPi * config.disks[disk].radius;
  b.phi = std::asin(stream.uniform(-1.0, 1.0));
  b.time = 0.0;
  return b;
}

inline BoundaryState sample_mu0_cell0(RandomStream& stream,
                                      const TubeConfig& config) {
  return sample_mu0_cell(stream, config, 0);
}

// Right-end collision-measure source of a finite channel: the cell-0 source
// reflected through the channel midplane, so the two ends are congruent and
// sustain the same boundary level per unit injection rate.  The reflection
// lands on real scatterers only when the obstacle set is mirror symmetric
// (every base disk at horizontal position cx has a partner at -cx mod 1 with
// the same height and radius).  Layouts without that symmetry fall back to
// the collision measure of the last whole cell; its disks sit deeper into
// the channel than the reflected set, so that end sustains a larger level
// per unit rate and carries its own boundary constant.
class RightEndSampler {
 public:
  explicit RightEndSampler(const TubeConfig& config) : config_(&config) {
    if (config.kind != TubeKind::Finite) {
      throw InvalidConfiguration("right-end injection needs a finite channel");
    }
    partner_.reserve(config.disks.size());
    for (const auto& d : config.disks) {
      double target = 1.0 - d.center.x;
      if (target >= 1.0 - 1e-12) target -= 1.0;
      int found = -1;
      for (std::size_t j = 0; j < config.disks.size(); ++j) {
        const auto& e = config.disks[j];
        if (std::abs(e.center.x - target) < 1e-12 &&
            std::abs(e.center.y - d.center.y) < 1e-12 &&
            std::abs(e.radius - d.radius) < 1e-12) {
          found = static_cast<int>(j);
          break;
        }
      }
      if (found < 0) {
        partner_.clear();
        break;
      }
      partner_.push_back(found);
    }
  }

  bool mirrored() const { return !partner_.empty(); }

  BoundaryState sample(RandomStream& stream) const {
    const auto& cfg = *config_;
    if (!mirrored()) {
      return sample_mu0_cell(stream, cfg, cfg.length - 1);
    }
    const BoundaryState b = sample_mu0_cell0(stream, cfg);
    const auto& d = cfg.disks[static_cast<std::size_t>(b.disk_id)];
    const int id2 = partner_[static_cast<std::size_t>(b.disk_id)];
    const auto& d2 = cfg.disks[static_cast<std::size_t>(id2)];
    // Reflecting x -> L - x sends the surface normal angle th to pi - th and
    // flips the sign of the outgoing angle measured from that normal.
    double theta = detail::kPi - b.r / d.radius;
    if (theta < 0.0) theta += detail::kTwoPi;
    BoundaryState m;
    m.disk_id = id2;
    m.cell = std::lround(static_cast<double>(cfg.length) - d.center.x -
                         d2.center.x);
    m.r = theta * d2.radius;
    m.phi = -b.phi;
    m.time = b.time;
    return m;
  }

 private:
  const TubeConfig* config_;
  std::vector<int> partner_;  // empty when the layout is not mirror symmetric
};

enum class WallSide { Left, Right };

// Inflow through a vertical end plane of the channel: position uniform on
// the free part of the wall (the full tube height minus the chords cut by
// obstacles), direction cos-law about the inward horizontal normal.
//
// All integer vertical planes cut the obstacle field in the same chords, so
// the free-segment table is computed once per configuration and reused for
// any plane position.
class WallSampler {
 public:
  WallSampler(const TubeConfig& config, WallSide side, double plane_x)
      : side_(side), plane_x_(plane_x) {
    build_free_segments(config);
  }

  double free_length() const { return total_free_; }

  FlightState sample(RandomStream& stream) const {
    // Inverse CDF over the free segments.
    double pick = stream.uniform() * total_free_;
    double y = free_.back().second;
    for (const auto& [lo, hi] : free_) {
      const double len = hi - lo;
      if (pick < len) {
        y = lo + pick;
        break;
      }
      pick -= len;
    }
    y -= std::floor(y);  // back onto the unit circle

    const double sin_th = stream.uniform(-1.0, 1.0);
    const double cos_th = std::sqrt(1.0 - sin_th * sin_th);

    FlightState s;
    s.position = {plane_x_, y};
    s.velocity = {side_ == WallSide::Left ? cos_th : -cos_th, sin_th};
    s.time = 0.0;
    return s;
  }

 private:
  void build_free_segments(const TubeConfig& config) {
    // Chords cut out of an integer vertical plane by nearby disk images,
    // unrolled onto [0, 2) so wrap-around is seamless.
    struct Band {
      double lo, hi;
    };
    std::vector<Band> blocked;
    for (const auto& d : config.disks) {
      for (int a = 0; a <= 1; ++a) {
        const double dist = std::abs(d.center.x - static_cast<double>(a));
        if (dist >= d.radius) continue;
        const double h = std::sqrt(d.radius * d.radius - dist * dist);
        double lo = d.center.y - h;
        double hi = d.center.y + h;
        lo -= std::floor(lo);
        hi = lo + 2.0 * h;
        blocked.push_back({lo, hi});
        blocked.push_back({lo - 1.0, hi - 1.0});
      }
    }
    std::sort(blocked.begin(), blocked.end(),
              [](const Band& a, const Band& b) { return a.lo < b.lo; });

    // Complement of the union within [0, 1).
    total_free_ = 0.0;
    double cursor = 0.0;
    for (const auto& b : blocked) {
      if (b.hi <= 0.0) continue;
      const double lo = std::max(b.lo, 0.0);
      if (lo >= 1.0) break;
      if (lo > cursor) {
        free_.emplace_back(cursor, lo);
        total_free_ += lo - cursor;
      }
      cursor = std::max(cursor, std::min(b.hi, 1.0));
    }
    if (cursor < 1.0) {
      free_.emplace_back(cursor, 1.0);
      total_free_ += 1.0 - cursor;
    }
    if (free_.empty() || total_free_ <= 0.0) {
      throw InvalidConfiguration(
          "wall sampling: the end plane is fully blocked by obstacles");
    }
  }

  WallSide side_;
  double plane_x_;
  std::vector<std::pair<double, double>> free_;
  double total_free_ = 0.0;
};

inline FlightState sample_wall_inflow(RandomStream& stream, WallSide side,
                                      const TubeConfig& config,
                                      double plane_x) {
  return WallSampler(config, side, plane_x).sample(stream);
}

// Homogeneous Poisson process on [-T, 0]: exponential gaps, times returned
// sorted ascending (all strictly negative).
inline std::vector<double> poisson_arrivals(RandomStream& stream, double rate,
                                            double window) {
  if (!(rate > 0.0)) {
    throw NonPositiveInput("poisson_arrivals: rate must be positive");
  }
  if (!(window > 0.0)) {
    throw NonPositiveInput("poisson_arrivals: window must be positive");
  }
  std::vector<double> times;
  times.reserve(static_cast<std::size_t>(rate * window * 1.1) + 8);
  double t = -window + stream.exponential(rate);
  while (t < 0.0) {
    times.push_back(t);
    t += stream.exponential(rate);
  }
  return times;
}

// The particle sources the experiments support.  Custom carries a weighted
// table of cells; a sampled particle starts on the collision measure inside
// its drawn cell.
struct InjectionMeasure {
  enum class Kind { Mu0Cell0, WallLeft, WallRight, Custom };
  Kind kind = Kind::Mu0Cell0;
  std::vector<std::pair<long, double>> table;  // Custom only: (cell, weight)

  static InjectionMeasure parse(const std::string& name) {
    InjectionMeasure m;
    if (name == "mu0") {
      m.kind = Kind::Mu0Cell0;
    } else if (name == "wall_left") {
      m.kind = Kind::WallLeft;
    } else if (name == "wall_right") {
      m.kind = Kind::WallRight;
    } else {
      throw ConfigError("unknown injection measure: " + name);
    }
    return m;
  }

  const char* name() const {
    switch (kind) {
      case Kind::Mu0Cell0: return "mu0";
      case Kind::WallLeft: return "wall_left";
      case Kind::WallRight: return "wall_right";
      case Kind::Custom: return "custom";
    }
    return "?";
  }
};

// Bound sampler: turns an injection measure plus engine into per-particle
// initial flight states.  Immutable and shareable across worker threads.
class InjectionSampler {
 public:
  InjectionSampler(const Engine& engine, InjectionMeasure measure)
      : engine_(&engine), measure_(std::move(measure)) {
    const auto& cfg = engine.config();
    if (measure_.kind == InjectionMeasure::Kind::WallLeft) {
      wall_.emplace(cfg, WallSide::Left, 0.0);
    } else if (measure_.kind == InjectionMeasure::Kind::WallRight) {
      if (cfg.kind != TubeKind::Finite) {
        throw InvalidConfiguration(
            "right-wall injection needs a finite channel");
      }
      wall_.emplace(cfg, WallSide::Right, static_cast<double>(cfg.length));
    } else if (measure_.kind == InjectionMeasure::Kind::Custom) {
      total_weight_ = 0.0;
      for (const auto& [cell, w] : measure_.table) {
        if (!(w >= 0.0)) {
          throw InvalidConfiguration("custom injection: negative weight");
        }
        total_weight_ += w;
      }
      if (!(total_weight_ > 0.0)) {
        throw InvalidConfiguration("custom injection: empty table");
      }
    }
  }

  const InjectionMeasure& measure() const { return measure_; }

  // Initial state of one particle.  For collision-measure kinds the state
  // sits on an obstacle (outgoing); `start_on` is filled with the image to
  // exclude from the first collision search.
  FlightState sample(RandomStream& stream, ImageRef& start_on) const {
    switch (measure_.kind) {
      case InjectionMeasure::Kind::WallLeft:
      case InjectionMeasure::Kind::WallRight: {
        start_on = {};
        return wall_->sample(stream);
      }
      case InjectionMeasure::Kind::Mu0Cell0: {
        const auto b = sample_mu0_cell0(stream, engine_->config());
        start_on = {b.disk_id, b.cell, 0};
        return engine_->from_boundary(b);
      }
      case InjectionMeasure::Kind::Custom: {
        double pick = stream.uniform() * total_weight_;
        long cell = measure_.table.back().first;
        for (const auto& [c, w] : measure_.table) {
          if (pick < w) {
            cell = c;
            break;
          }
          pick -= w;
        }
        const auto b = sample_mu0_cell(stream, engine_->config(), cell);
        start_on = {b.disk_id, b.cell, 0};
        return engine_->from_boundary(b);
      }
    }
    throw Error("unreachable injection kind");
  }

 private:
  const Engine* engine_;
  InjectionMeasure measure_;
  std::optional<WallSampler> wall_;
  double total_weight_ = 0.0;
};

}  // namespace tube
