// SPDX-License-Identifier: MIT
#pragma once

// Event-driven billiard dynamics: exact ray/circle collision detection
// against the doubly periodic obstacle field, specular reflection, boundary
// (collision) coordinates, and continuous-time evolution with optional
// absorbing planes.
//
// The collision search walks the ray cell by cell through the integer grid
// (a DDA traversal).  Every unit cell sees the same obstacle pattern up to
// translation, so a single precomputed list of "disk images overlapping the
// base cell" serves all cells; each visited cell tests ~a handful of circles
// and the walk stops as soon as the best hit lies inside the region already
// swept.  That makes the cost per collision O(1) under a finite horizon.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "tube/errors.hpp"
#include "tube/geometry.hpp"

namespace tube {

// Acceptance threshold for quadratic roots: flights shorter than this are
// treated as re-detections of the current collision point.
inline constexpr double eps_root = 1e-12;
// Normalized-discriminant threshold below which a hit is flagged grazing.
inline constexpr double eps_disc = 1e-14;

struct FlightState {
  Vec2 position;
  Vec2 velocity;  // unit length
  double time = 0.0;
};

// Collision (outgoing) coordinates on a scatterer: arc length along the
// circle and the angle between the outgoing velocity and the outward normal.
struct BoundaryState {
  int disk_id = 0;
  long cell = 0;     // horizontal translate of the disk image
  double r = 0.0;    // arc length in [0, 2*pi*radius)
  double phi = 0.0;  // in [-pi/2, pi/2]
  double time = 0.0;
};

// Identity of one lattice image of one disk: circle center sits at
// disks[disk].center + (tx, ty).
struct ImageRef {
  int disk = -1;
  long tx = 0;
  long ty = 0;

  friend bool operator==(const ImageRef&, const ImageRef&) = default;
};

struct CollisionEvent {
  double flight_length = 0.0;  // equals flight time at unit speed
  Vec2 hit_point;
  Vec2 normal;  // outward from the disk, unit length
  int disk_id = 0;
  long cell = 0;  // horizontal translate of the image that was hit
  long wrap = 0;  // vertical translate of the image that was hit
  bool grazing = false;
};

// Specular reflection about the tangent plane with outward normal n.
// The incoming ray must actually point into the obstacle.
inline Vec2 reflect(Vec2 v, Vec2 n) {
  const double vn = dot(v, n);
  if (!(vn < 0.0)) {
    throw NotIncoming("reflect: velocity does not point into the obstacle");
  }
  Vec2 w = v - (2.0 * vn) * n;
  // Renormalize so speed drift cannot build up (plain sqrt: |w| is near 1,
  // so the overflow care of std::hypot buys nothing here).
  const double s = 1.0 / std::sqrt(w.x * w.x + w.y * w.y);
  return {s * w.x, s * w.y};
}

// Reverse the direction of motion at a collision: the reversed orbit leaves
// the same boundary point with the mirrored angle.
inline BoundaryState time_reverse(const BoundaryState& b) {
  BoundaryState rev = b;
  rev.phi = -b.phi;
  return rev;
}

class Engine {
 public:
  explicit Engine(TubeConfig config) : cfg_(std::move(config)) {
    const auto report = validate_configuration(cfg_);
    if (!report.pass) {
      throw InvalidConfiguration("engine construction: " +
                                 report.failures.front());
    }
    build_image_table();
    horizon_reach_ = (cfg_.horizon_certified && cfg_.kappa_max_bound > 0.0)
                         ? cfg_.kappa_max_bound + 1.0
                         : kFallbackReach;
    cap_iters_ = static_cast<long>(3.0 * horizon_reach_) + 64;
  }

  const TubeConfig& config() const { return cfg_; }
  double horizon_reach() const { return horizon_reach_; }

  // Earliest intersection of the ray (p, v) with any disk image other than
  // `exclude`, restricted to path length <= max_path.  Returns nothing when
  // the window max_path is exhausted first; throws NoCollisionWithinHorizon
  // when even the certified horizon window contains no obstacle (which means
  // the geometry and its certificate disagree, or a corridor exists).
  std::optional<CollisionEvent> next_collision_within(Vec2 p, Vec2 v,
                                                      ImageRef exclude,
                                                      double max_path) const {
    const double inf = std::numeric_limits<double>::infinity();
    const double lim = std::min(max_path, horizon_reach_);

    long mx = static_cast<long>(std::floor(p.x));
    long my = static_cast<long>(std::floor(p.y));
    const int sx = v.x > 0.0 ? 1 : (v.x < 0.0 ? -1 : 0);
    const int sy = v.y > 0.0 ? 1 : (v.y < 0.0 ? -1 : 0);
    const double step_x = sx ? std::abs(1.0 / v.x) : inf;
    const double step_y = sy ? std::abs(1.0 / v.y) : inf;
    double tx = sx ? (static_cast<double>(mx + (sx > 0)) - p.x) / v.x : inf;
    double ty = sy ? (static_cast<double>(my + (sy > 0)) - p.y) / v.y : inf;

    double best_t = inf;
    const CellImage* best = nullptr;
    long best_tx = 0, best_ty = 0;
    bool best_grazing = false;

    for (long iter = 0;; ++iter) {
      if (iter > cap_iters_) {
        throw NoCollisionWithinHorizon(
            "collision search exceeded its cell budget");
      }
      const double t_exit = std::min(tx, ty);
      const double cx0 = static_cast<double>(mx);
      const double cy0 = static_cast<double>(my);
      for (const auto& im : images_) {
        const double dx = p.x - (cx0 + im.cx);
        const double dy = p.y - (cy0 + im.cy);
        const double b = dx * v.x + dy * v.y;
        const double c = dx * dx + dy * dy - im.r2;
        if (b >= 0.0 && c >= 0.0) continue;  // outside and receding
        const double disc = b * b - c;
        if (disc <= 0.0) continue;
        // Smallest root in the cancellation-free form (root product = c).
        const double t = c / (std::sqrt(disc) - b);
        if (t <= eps_root || t >= best_t) continue;
        const long atx = mx + im.dx;
        const long aty = my + im.dy;
        if (im.disk_id == exclude.disk && atx == exclude.tx &&
            aty == exclude.ty) {
          continue;  // an outgoing ray never re-enters its own circle
        }
        best_t = t;
        best = &im;
        best_tx = atx;
        best_ty = aty;
        best_grazing = disc < eps_disc * im.r2;
      }
      if (best_t <= t_exit) break;  // swept region already contains the hit
      if (t_exit > lim) break;      // window exhausted
      if (tx < ty) {
        mx += sx;
        tx += step_x;
      } else {
        my += sy;
        ty += step_y;
      }
    }

    if (best == nullptr || !(best_t <= max_path)) {
      if (max_path <= horizon_reach_) return std::nullopt;
      throw NoCollisionWithinHorizon(
          "no obstacle within the horizon window");
    }

    const auto& disk = cfg_.disks[static_cast<std::size_t>(best->disk_id)];
    const Vec2 center{disk.center.x + static_cast<double>(best_tx),
                      disk.center.y + static_cast<double>(best_ty)};
    const Vec2 raw{p.x + best_t * v.x, p.y + best_t * v.y};
    Vec2 d = raw - center;
    const double dn = std::sqrt(d.x * d.x + d.y * d.y);
    const Vec2 n{d.x / dn, d.y / dn};
    const Vec2 hit{center.x + disk.radius * n.x, center.y + disk.radius * n.y};

    CollisionEvent ev;
    ev.flight_length = best_t;
    ev.hit_point = hit;
    ev.normal = n;
    ev.disk_id = best->disk_id;
    ev.cell = best_tx;
    ev.wrap = best_ty;
    ev.grazing = best_grazing;
    return ev;
  }

  CollisionEvent next_collision(Vec2 p, Vec2 v, ImageRef exclude = {}) const {
    auto ev = next_collision_within(
        p, v, exclude, std::numeric_limits<double>::infinity());
    return *ev;  // next_collision_within throws instead of returning nullopt
  }

  CollisionEvent next_collision(const FlightState& s,
                                ImageRef exclude = {}) const {
    return next_collision(s.position, s.velocity, exclude);
  }

  // Cartesian realization of a boundary state (outgoing ray).
  FlightState from_boundary(const BoundaryState& b) const {
    const auto& disk = cfg_.disks[static_cast<std::size_t>(b.disk_id)];
    const double th = b.r / disk.radius;
    const Vec2 n{std::cos(th), std::sin(th)};
    const Vec2 tan{-n.y, n.x};
    const double c = std::cos(b.phi), s = std::sin(b.phi);
    FlightState f;
    f.position = {disk.center.x + static_cast<double>(b.cell) +
                      disk.radius * n.x,
                  disk.center.y + disk.radius * n.y};
    f.velocity = {c * n.x + s * tan.x, c * n.y + s * tan.y};
    f.time = b.time;
    return f;
  }

  // Smallest signed distance from p to any obstacle surface near p
  // (positive = free space).  Diagnostic helper, not a hot path.
  double signed_clearance(Vec2 p) const {
    const long mx = static_cast<long>(std::floor(p.x));
    const long my = static_cast<long>(std::floor(p.y));
    double best = std::numeric_limits<double>::infinity();
    for (long ax = mx - 1; ax <= mx + 1; ++ax) {
      for (long ay = my - 1; ay <= my + 1; ++ay) {
        for (const auto& im : images_) {
          const Vec2 c{static_cast<double>(ax) + im.cx,
                       static_cast<double>(ay) + im.cy};
          best = std::min(best, norm(p - c) - im.r);
        }
      }
    }
    return best;
  }

 private:
  struct CellImage {
    double cx, cy;  // center relative to the cell's lower-left corner
    double r, r2;
    int disk_id;
    int dx, dy;  // lattice offset of this image relative to the cell
  };

  void build_image_table() {
    for (std::size_t i = 0; i < cfg_.disks.size(); ++i) {
      const auto& d = cfg_.disks[i];
      for (int dx = -1; dx <= 1; ++dx) {
        for (int dy = -1; dy <= 1; ++dy) {
          const double cx = d.center.x + dx;
          const double cy = d.center.y + dy;
          // Distance from the image center to the base cell [0,1]^2.
          const double px = std::clamp(cx, 0.0, 1.0);
          const double py = std::clamp(cy, 0.0, 1.0);
          const double dist = std::hypot(cx - px, cy - py);
          if (dist <= d.radius + 1e-9) {
            images_.push_back({cx, cy, d.radius, d.radius * d.radius,
                               static_cast<int>(i), dx, dy});
          }
        }
      }
    }
  }

  static constexpr double kFallbackReach = 1e4;  // uncertified configurations

  TubeConfig cfg_;
  std::vector<CellImage> images_;
  double horizon_reach_ = kFallbackReach;
  long cap_iters_ = 0;
};

// Sequential collision-to-collision iterator for one orbit.  Keeps Cartesian
// state between collisions (no trigonometry on the hot path) and re-anchors
// the vertical coordinate after every bounce so precision never degrades on
// long orbits.
class OrbitWalker {
 public:
  OrbitWalker(const Engine& engine, const BoundaryState& b)
      : eng_(&engine) {
    const FlightState f = engine.from_boundary(b);
    q_ = f.position;
    v_ = f.velocity;
    t_ = b.time;
    on_ = {b.disk_id, b.cell, 0};
    n_ = {std::cos(b.r / radius_of(b.disk_id)),
          std::sin(b.r / radius_of(b.disk_id))};
  }

  struct Step {
    double dx = 0.0;      // horizontal displacement of this flight
    double flight = 0.0;  // flight length = flight time
    long cell = 0;        // horizontal cell of the new collision
    bool grazing = false;
  };

  Step step() {
    const CollisionEvent ev = eng_->next_collision(q_, v_, on_);
    const double x0 = q_.x;
    q_ = ev.hit_point;
    q_.y -= static_cast<double>(ev.wrap);  // exact integer shift
    v_ = reflect(v_, ev.normal);
    n_ = ev.normal;
    t_ += ev.flight_length;
    on_ = {ev.disk_id, ev.cell, 0};
    return {q_.x - x0, ev.flight_length, ev.cell, ev.grazing};
  }

  const Vec2& position() const { return q_; }
  const Vec2& velocity() const { return v_; }
  double time() const { return t_; }
  int disk_id() const { return on_.disk; }
  long cell() const { return on_.tx; }

  // sin of the outgoing angle (no trigonometric calls needed).
  double sin_phi() const { return cross(n_, v_); }

  BoundaryState boundary_state() const {
    const double radius = radius_of(on_.disk);
    double th = std::atan2(n_.y, n_.x);
    if (th < 0.0) th += 6.283185307179586476925286766559;
    BoundaryState b;
    b.disk_id = on_.disk;
    b.cell = on_.tx;
    b.r = th * radius;
    b.phi = std::atan2(cross(n_, v_), dot(n_, v_));
    b.time = t_;
    return b;
  }

 private:
  double radius_of(int disk) const {
    return eng_->config().disks[static_cast<std::size_t>(disk)].radius;
  }

  const Engine* eng_;
  Vec2 q_, v_, n_;
  double t_ = 0.0;
  ImageRef on_;
};

// One application of the collision-to-collision map in boundary coordinates,
// returning the new state and the additive observable increments (horizontal
// displacement, flight length).
struct StepResult {
  BoundaryState state;
  double dx = 0.0;
  double flight = 0.0;
  bool grazing = false;
};

inline StepResult step_map(const BoundaryState& b, const Engine& engine) {
  OrbitWalker w(engine, b);
  const auto s = w.step();
  return {w.boundary_state(), s.dx, s.flight, s.grazing};
}

// Absorbing planes bounding the channel (either may be absent).
struct Walls {
  std::optional<double> left;
  std::optional<double> right;

  static Walls for_config(const TubeConfig& c) {
    Walls w;
    if (c.kind != TubeKind::BiInfinite) w.left = 0.0;
    if (c.kind == TubeKind::Finite) w.right = static_cast<double>(c.length);
    return w;
  }
};

struct FlowOutcome {
  FlightState state;  // final state (at the absorption point if absorbed)
  bool absorbed = false;
  double plane = 0.0;        // absorbing plane that was crossed
  double absorb_time = 0.0;  // continuous time of the crossing
  long collisions = 0;
  long grazings = 0;
};

// Continuous-time evolution for `duration`, stopping early at the exact
// instant an absorbing plane is crossed.  The visitor receives every straight
// flight segment as (start point, velocity, start time, length), including
// the truncated final segment, so callers can reconstruct occupation times
// and crossing logs exactly.
template <class SegmentVisitor>
FlowOutcome flow_visit(const Engine& engine, FlightState s, double duration,
                       Walls walls, SegmentVisitor&& visit,
                       ImageRef start_on = {}) {
  if (duration < 0.0) throw DomainError("flow: duration must be >= 0");
  const double inf = std::numeric_limits<double>::infinity();
  const double t_end = s.time + duration;
  FlowOutcome out;
  ImageRef on = start_on;

  while (true) {
    const double remaining = t_end - s.time;
    if (remaining <= 0.0) {
      out.state = s;
      return out;
    }
    // The planes bound the tube: everything strictly beyond one is outside,
    // and the particle is absorbed the instant it leaves.  A start already
    // outside (a collision-measure start can sit on a disk arc that pokes
    // past a plane) is absorbed on the spot; a start exactly on a plane
    // survives while moving inward or along it, which is how wall injection
    // enters.
    double t_wall = inf;
    double plane = 0.0;
    if (walls.left) {
      if (s.position.x < *walls.left) {
        t_wall = 0.0;
        plane = *walls.left;
      } else if (s.velocity.x < 0.0) {
        const double tw = (*walls.left - s.position.x) / s.velocity.x;
        if (tw < t_wall) {
          t_wall = tw;
          plane = *walls.left;
        }
      }
    }
    if (walls.right) {
      if (s.position.x > *walls.right) {
        t_wall = 0.0;
        plane = *walls.right;
      } else if (s.velocity.x > 0.0) {
        const double tw = (*walls.right - s.position.x) / s.velocity.x;
        if (tw < t_wall) {
          t_wall = tw;
          plane = *walls.right;
        }
      }
    }
    if (t_wall <= 0.0) {
      out.state = s;
      out.absorbed = true;
      out.plane = plane;
      out.absorb_time = s.time;
      return out;
    }

    const double window = std::min(remaining, t_wall);
    const auto hit =
        engine.next_collision_within(s.position, s.velocity, on, window);

    if (hit && hit->flight_length < t_wall) {
      visit(s.position, s.velocity, s.time, hit->flight_length);
      s.position = hit->hit_point;
      s.velocity = reflect(s.velocity, hit->normal);
      s.time += hit->flight_length;
      on = {hit->disk_id, hit->cell, hit->wrap};
      ++out.collisions;
      out.grazings += hit->grazing ? 1 : 0;
      continue;
    }
    if (t_wall <= remaining) {
      visit(s.position, s.velocity, s.time, t_wall);
      s.position = {plane, s.position.y + t_wall * s.velocity.y};
      s.time += t_wall;
      out.state = s;
      out.absorbed = true;
      out.plane = plane;
      out.absorb_time = s.time;
      return out;
    }
    visit(s.position, s.velocity, s.time, remaining);
    s.position = s.position + remaining * s.velocity;
    s.time = t_end;
    out.state = s;
    return out;
  }
}

// Cell-boundary crossing: the trajectory entered `cell` at `time`.
struct Crossing {
  long cell = 0;
  double time = 0.0;
};

// Enumerate the integer vertical planes crossed by one straight segment, in
// order, reporting the cell entered and the crossing time relative to the
// segment start.
template <class F>
void for_each_cell_crossing(Vec2 q, Vec2 v, double len, F&& f) {
  if (v.x > 0.0) {
    long m = static_cast<long>(std::floor(q.x));
    const double dt = 1.0 / v.x;
    double t = (static_cast<double>(m + 1) - q.x) * dt;
    while (t < len) {
      f(++m, t);
      t += dt;
    }
  } else if (v.x < 0.0) {
    long m = static_cast<long>(std::floor(q.x));
    const double dt = -1.0 / v.x;
    double t = (q.x - static_cast<double>(m)) * dt;
    while (t < len) {
      f(--m, t);
      t += dt;
    }
  }
}

// Convenience form of flow_visit that materializes the crossing log.
inline std::pair<FlowOutcome, std::vector<Crossing>> flow(
    const Engine& engine, FlightState s, double duration, Walls walls = {},
    ImageRef start_on = {}) {
  std::vector<Crossing> log;
  auto out = flow_visit(
      engine, s, duration, walls,
      [&log](Vec2 q, Vec2 v, double t0, double len) {
        for_each_cell_crossing(
            q, v, len, [&](long cell, double t) { log.push_back({cell, t0 + t}); });
      },
      start_on);
  return {out, std::move(log)};
}

// Dwell-time bookkeeping over a window of horizontal cells [lo, hi): a
// segment visitor that splits each straight segment across the cell strips
// it traverses.  Exact: each strip receives horizontal extent / |vx| (the
// whole segment when vx == 0).
class OccupancySplitter {
 public:
  OccupancySplitter(long lo, long hi, double* acc)
      : lo_(lo), hi_(hi), acc_(acc) {}

  void operator()(Vec2 q, Vec2 v, double /*t0*/, double len) {
    long cur = static_cast<long>(std::floor(q.x));
    double prev = 0.0;
    for_each_cell_crossing(q, v, len, [&](long entered, double t) {
      add(cur, t - prev);
      cur = entered;
      prev = t;
    });
    add(cur, len - prev);
  }

 private:
  void add(long cell, double dt) {
    if (cell >= lo_ && cell < hi_) acc_[cell - lo_] += dt;
  }

  long lo_, hi_;
  double* acc_;
};

}  // namespace tube
