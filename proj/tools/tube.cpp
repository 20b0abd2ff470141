// SPDX-License-Identifier: MIT
//
// tube — command-line driver for the Lorentz-channel simulator.
//
// One subcommand per experiment or analytic law:
//
//   validate    geometry + finite-horizon certification report
//   transport   mean free path, diffusion variance, walk covariance
//   survival    absorption-time tail P(tau > N) with power-law fit
//   meander     scaled (endpoint, running-max) samples of survivors
//   profile     stationary density per cell under steady injection
//   heat        macroscopic occupation field under sources at both ends
//   localtime   visit/occupation ratios at a distant cell
//   llt         scaled point-count vs the matching analytic density
//   reference   tabulated analytic curves for plotting
//
// Every run writes CSV result files plus manifest.json into --out.  Reruns
// with the same manifest identity (any thread count, with or without a
// checkpoint interruption) produce byte-identical result files.  Exit codes:
// 0 success, 2 usage error, 3 stopped early at a checkpoint (--stop-after),
// 1 any reported failure (a one-line JSON error record goes to stderr and,
// best effort, to <out>/error.json).

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tube/config.hpp"
#include "tube/experiments.hpp"
#include "tube/horizon.hpp"
#include "tube/io.hpp"

#ifndef TUBE_BUILD_ID
#define TUBE_BUILD_ID "dev"
#endif

namespace {

using namespace tube;
namespace fs = std::filesystem;

// Flags shared by every subcommand.  Precedence for seed / injection / rate:
// built-in default < config file key < command-line flag.
struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 1;
  bool seed_given = false;
  std::uint64_t particles = 100000;
  unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  std::string out_dir = ".";
  std::uint64_t checkpoint_every = 0;
  std::uint64_t stop_after = 0;
  std::string injection;
  bool injection_given = false;
  double rate = 1.0;
  bool rate_given = false;
};

void add_common(CLI::App* sub, CommonArgs& a, bool config_required = true) {
  auto* cfg = sub->add_option("--config", a.config_path, "configuration file");
  if (config_required) cfg->required();
  sub->add_option("--seed", a.seed, "master seed (overrides the config key)")
      ->each([&a](const std::string&) { a.seed_given = true; });
  sub->add_option("--particles", a.particles, "ensemble size");
  sub->add_option("--threads", a.threads, "worker threads (never changes results)");
  sub->add_option("--out", a.out_dir, "output directory (created if missing)");
  sub->add_option("--checkpoint-every", a.checkpoint_every,
                  "save a resumable checkpoint every N completed jobs");
  sub->add_option("--stop-after", a.stop_after,
                  "stop after N jobs, leaving a checkpoint (testing aid)")
      ->group("");
  sub->add_option("--injection", a.injection,
                  "particle source: mu0 | wall_left | wall_right")
      ->each([&a](const std::string&) { a.injection_given = true; });
  sub->add_option("--rate", a.rate, "injection rate per unit time")
      ->each([&a](const std::string&) { a.rate_given = true; });
}

struct Session {
  LoadedConfig loaded;
  TubeConfig certified;
  std::uint64_t config_hash = 0;
  std::uint64_t master_seed = 1;
  InjectionMeasure measure;
  double rate = 1.0;
  fs::path out;
  std::chrono::steady_clock::time_point t0;
};

// Load, fingerprint, and certify the configuration; resolve the layered
// defaults; make the output directory.  Every simulating subcommand starts
// here (validate stages its own horizon check instead).
Session open_session(const CommonArgs& a, bool certify = true) {
  Session s;
  s.t0 = std::chrono::steady_clock::now();
  s.loaded = load_config(a.config_path);
  s.config_hash = config_fingerprint(s.loaded.tube);
  s.certified = certify ? certify_config(s.loaded.tube) : s.loaded.tube;

  s.master_seed = a.seed_given ? a.seed : s.loaded.seed.value_or(a.seed);
  const std::string measure_name = a.injection_given
                                       ? a.injection
                                       : s.loaded.injection.value_or("mu0");
  s.measure = InjectionMeasure::parse(measure_name);
  s.rate = a.rate_given ? a.rate : s.loaded.rate.value_or(a.rate);

  s.out = fs::path(a.out_dir);
  fs::create_directories(s.out);
  return s;
}

EnsembleOptions make_opts(const CommonArgs& a, const Session& s) {
  EnsembleOptions o;
  o.master_seed = s.master_seed;
  o.particles = a.particles;
  o.threads = a.threads;
  o.checkpoint_every = a.checkpoint_every;
  o.stop_after = a.stop_after;
  o.config_hash = s.config_hash;
  if (a.checkpoint_every > 0 || a.stop_after > 0) {
    o.checkpoint_path = (s.out / "checkpoint").string();
  }
  return o;
}

// After a run with --stop-after, some sub-checkpoint of this run may still
// be on disk; a finished run deletes its checkpoints.
bool checkpoint_pending(const fs::path& out) {
  if (!fs::exists(out)) return false;
  for (const auto& entry : fs::directory_iterator(out)) {
    if (entry.path().filename().string().rfind("checkpoint", 0) == 0) {
      return true;
    }
  }
  return false;
}

RunManifest start_manifest(const std::string& subcommand, const CommonArgs& a,
                           const Session& s) {
  RunManifest m;
  m.subcommand = subcommand;
  m.config_hash = s.config_hash;
  m.master_seed = s.master_seed;
  m.parameters["config"] = a.config_path;
  m.parameters["injection"] = s.measure.name();
  m.build_id = TUBE_BUILD_ID;
  return m;
}

void finish_manifest(RunManifest& m, const Session& s) {
  m.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - s.t0)
          .count();
  save_manifest(s.out, m);
}

int finish_interrupted(const Session& s, const std::string& subcommand) {
  std::fprintf(stderr,
               "%s stopped at a checkpoint; rerun without --stop-after to "
               "finish\n",
               subcommand.c_str());
  return 3;
}

std::vector<double> parse_double_list(const std::string& text,
                                      const char* what) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t next = text.find(',', pos);
    if (next == std::string::npos) next = text.size();
    const std::string tok = text.substr(pos, next - pos);
    try {
      std::size_t used = 0;
      out.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + ": bad number \"" + tok + "\"");
    }
    pos = next + 1;
  }
  if (out.empty()) {
    throw ConfigError(std::string(what) + ": empty list");
  }
  return out;
}

std::vector<long> parse_long_list(const std::string& text, const char* what) {
  std::vector<long> out;
  for (const double v : parse_double_list(text, what)) {
    const long n = std::lround(v);
    if (static_cast<double>(n) != v) {
      throw ConfigError(std::string(what) + ": not an integer");
    }
    out.push_back(n);
  }
  return out;
}

// Initial-profile menu for heat and the heat reference law; a config file
// cannot carry a function, so the CLI offers a parameterized family.
std::function<double(double)> initial_profile(const std::string& kind,
                                              double f0, double f1) {
  if (kind == "flat") {
    return [f0](double) { return f0; };
  }
  if (kind == "ramp") {
    return [f0, f1](double x) { return f0 + (f1 - f0) * x; };
  }
  if (kind == "sine") {
    return [f0, f1](double x) {
      return f0 + (f1 - f0) * std::sin(std::numbers::pi * x);
    };
  }
  throw ConfigError("unknown initial profile \"" + kind +
                    "\" (flat | ramp | sine)");
}

// ---------------------------------------------------------------------------
// Subcommands.

int run_validate(const CommonArgs& a) {
  Session s = open_session(a, /*certify=*/false);
  RunManifest m = start_manifest("validate", a, s);
  m.parameters["max_denominator"] = s.loaded.tube.audit.max_denominator;
  m.parameters["mc_trajectories"] = s.loaded.tube.audit.mc_trajectories;
  m.parameters["mc_steps"] = s.loaded.tube.audit.mc_steps;

  nlohmann::json report;
  const auto validation = validate_configuration(s.loaded.tube);
  report["pass"] = validation.pass;
  report["failures"] = validation.failures;
  report["min_surface_gap"] = validation.min_surface_gap;
  report["corridor_found"] = false;

  std::string failure_kind;
  std::string failure_message;
  if (!validation.pass) {
    failure_kind = "ValidationFailed";
    failure_message = validation.failures.front();
  } else {
    const auto horizon = check_finite_horizon(
        s.loaded.tube, s.loaded.tube.audit.max_denominator,
        s.loaded.tube.audit.mc_trajectories, s.loaded.tube.audit.mc_steps);
    report["corridor_found"] = horizon.corridor_found;
    if (horizon.worst_direction) {
      report["worst_direction"] = {horizon.worst_direction->x,
                                   horizon.worst_direction->y};
    } else {
      report["worst_direction"] = nullptr;
    }
    report["empirical_kappa_min"] = horizon.empirical_kappa_min;
    report["empirical_kappa_max"] = horizon.empirical_kappa_max;
    report["samples"] = horizon.samples;
    if (horizon.corridor_found) {
      failure_kind = "CorridorFound";
      failure_message = "open corridor";
      if (horizon.corridor) {
        failure_message += " in direction (" +
                           std::to_string(horizon.corridor->p) + ", " +
                           std::to_string(horizon.corridor->q) + ")";
      }
    }
  }

  write_text_atomic(s.out / "validate.json", report.dump(2) + "\n");
  m.outputs = {"validate.json"};
  m.results = report;
  finish_manifest(m, s);

  if (!failure_kind.empty()) {
    const auto rec = error_record(failure_kind, failure_message);
    std::fprintf(stderr, "%s\n", rec.c_str());
    write_text_atomic(s.out / "error.json", rec + "\n");
    return 1;
  }
  std::printf("configuration ok: min gap %.6g, flight range [%.6g, %.6g]\n",
              validation.min_surface_gap,
              report["empirical_kappa_min"].get<double>(),
              report["empirical_kappa_max"].get<double>());
  return 0;
}

int run_transport(const CommonArgs& a, long steps) {
  if (a.particles == 0) {
    throw ConfigError("transport needs --particles >= 1");
  }
  Session s = open_session(a);
  // Walk statistics never touch the absorbing planes, so any channel kind is
  // accepted and measured on the unbounded dynamics.
  s.certified.kind = TubeKind::BiInfinite;
  s.certified.length = 0;
  const Engine engine(s.certified);
  auto opts = make_opts(a, s);
  const auto est = estimate_transport(engine, steps, opts);
  if (opts.stop_after > 0 && checkpoint_pending(s.out)) {
    return finish_interrupted(s, "transport");
  }

  RunManifest m = start_manifest("transport", a, s);
  m.parameters["particles"] = a.particles;
  m.parameters["steps"] = steps;
  m.results["kappa_bar"] = est.kappa_bar;
  m.results["sigma2"] = est.sigma2;
  m.results["sigma_hat2"] = est.sigma_hat2;
  m.particles = est.particles;
  m.events = est.particles * static_cast<std::uint64_t>(est.steps);
  write_transport_csv(s.out / "transport.csv", est);
  m.outputs = {"transport.csv"};
  finish_manifest(m, s);
  std::printf("kappa_bar %.6g +- %.2g, sigma2 %.6g +- %.2g\n", est.kappa_bar,
              est.kappa_bar_se, est.sigma2, est.sigma2_se);
  return 0;
}

int run_survival(const CommonArgs& a, const std::string& horizons_text) {
  Session s = open_session(a);
  const auto horizons = parse_double_list(horizons_text, "--horizons");
  const Engine engine(s.certified);
  auto opts = make_opts(a, s);
  const auto table = survival_tail(engine, s.measure, horizons, opts);
  if (opts.stop_after > 0 && checkpoint_pending(s.out)) {
    return finish_interrupted(s, "survival");
  }

  RunManifest m = start_manifest("survival", a, s);
  m.parameters["particles"] = a.particles;
  m.parameters["horizons"] = horizons;
  m.particles = table.particles;
  write_survival_csv(s.out / "survival.csv", table);
  m.outputs = {"survival.csv"};
  if (table.fit) {
    std::string fit_csv = "quantity,estimate,stderr\n";
    fit_csv += "log_slope," + format_g17(table.fit->slope) + ',' +
               format_g17(table.fit->slope_se) + '\n';
    fit_csv += "log_intercept," + format_g17(table.fit->intercept) + ',' +
               format_g17(table.fit->intercept_se) + '\n';
    fit_csv += "r_squared," + format_g17(table.fit->r_squared) + ",0\n";
    fit_csv += "c1_hat," + format_g17(table.c1_hat) + ",0\n";
    write_text_atomic(s.out / "survival_fit.csv", fit_csv);
    m.outputs.push_back("survival_fit.csv");
    m.results["log_slope"] = table.fit->slope;
    m.results["c1_hat"] = table.c1_hat;
  }
  finish_manifest(m, s);
  if (table.fit) {
    std::printf("tail slope %.4f +- %.4f, c1_hat %.4f\n", table.fit->slope,
                table.fit->slope_se, table.c1_hat);
  }
  return 0;
}

int run_meander(const CommonArgs& a, double horizon) {
  Session s = open_session(a);
  const Engine engine(s.certified);
  auto opts = make_opts(a, s);
  const auto samples = meander_statistics(engine, s.measure, horizon, opts);
  if (opts.stop_after > 0 && checkpoint_pending(s.out)) {
    return finish_interrupted(s, "meander");
  }

  RunManifest m = start_manifest("meander", a, s);
  m.parameters["particles"] = a.particles;
  m.parameters["horizon"] = horizon;
  m.particles = samples.particles;
  m.results["survivors"] = samples.survivors;
  write_meander_csv(s.out / "meander.csv", samples);
  m.outputs = {"meander.csv"};
  finish_manifest(m, s);
  std::printf("%llu survivors of %llu\n",
              static_cast<unsigned long long>(samples.survivors),
              static_cast<unsigned long long>(samples.particles));
  return 0;
}

int run_profile(const CommonArgs& a, const std::string& mode, double t_cap,
                long cells, double c1_hat) {
  Session s = open_session(a);
  if (mode == "semi") {
    if (s.certified.kind != TubeKind::SemiInfinite) {
      throw ConfigError("profile --mode semi needs a semi_infinite tube");
    }
  } else if (mode == "finite") {
    if (s.certified.kind != TubeKind::Finite) {
      throw ConfigError("profile --mode finite needs a finite tube");
    }
  } else {
    throw ConfigError("profile --mode must be semi or finite");
  }
  if (cells == 0) {
    cells = (s.certified.kind == TubeKind::Finite) ? s.certified.length : 30;
  }

  const Engine engine(s.certified);
  auto opts = make_opts(a, s);
  const auto profile =
      density_profile(engine, s.measure, s.rate, t_cap, cells, opts, c1_hat);
  if (opts.stop_after > 0 && checkpoint_pending(s.out)) {
    return finish_interrupted(s, "profile");
  }

  RunManifest m = start_manifest("profile", a, s);
  m.parameters["mode"] = mode;
  m.parameters["particles"] = a.particles;
  m.parameters["rate"] = s.rate;
  m.parameters["t_cap"] = t_cap;
  m.parameters["cells"] = cells;
  m.parameters["c1_hat"] = c1_hat;
  m.particles = profile.particles;
  m.results["tail_bias_bound"] = profile.tail_bias_bound;
  write_profile_csv(s.out / "profile.csv", profile);
  m.outputs = {"profile.csv"};
  finish_manifest(m, s);
  std::printf("%zu cells written, tail bias bound %.4g\n",
              profile.cells.size(), profile.tail_bias_bound);
  return 0;
}

int run_heat(const CommonArgs& a, long length_override,
             const std::string& initial, double f0, double f1, double lambda0,
             double lambda1, double scale, const std::string& times_text,
             double boundary_constant) {
  Session s = open_session(a);
  if (length_override > 0) {
    s.loaded.tube.length = length_override;
    s.certified.length = length_override;
    s.config_hash = config_fingerprint(s.loaded.tube);
  }
  const Engine engine(s.certified);

  HeatProtocol proto;
  proto.f = initial_profile(initial, f0, f1);
  proto.lambda0 = lambda0;
  proto.lambda1 = lambda1;
  proto.times = parse_double_list(times_text, "--times");
  proto.scale = scale;
  if (boundary_constant > 0.0) proto.boundary_constant = boundary_constant;

  auto opts = make_opts(a, s);
  const auto run = heat_evolution(engine, proto, opts);
  if (opts.stop_after > 0 && checkpoint_pending(s.out)) {
    return finish_interrupted(s, "heat");
  }

  RunManifest m = start_manifest("heat", a, s);
  m.parameters["initial"] = initial;
  m.parameters["f0"] = f0;
  m.parameters["f1"] = f1;
  m.parameters["lambda0"] = lambda0;
  m.parameters["lambda1"] = lambda1;
  m.parameters["scale"] = scale;
  m.parameters["times"] = proto.times;
  m.parameters["L"] = s.certified.length;
  m.particles = run.initial_particles + run.injected_particles;
  m.events = m.particles;
  m.results["warnings"] = run.warnings;
  write_occupancy_csv(s.out / "occupancy.csv", run.field);
  m.outputs = {"occupancy.csv"};
  finish_manifest(m, s);
  for (const auto& w : run.warnings) {
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  }
  std::printf("seeded %llu, injected %llu\n",
              static_cast<unsigned long long>(run.initial_particles),
              static_cast<unsigned long long>(run.injected_particles));
  return 0;
}

int run_localtime(const CommonArgs& a, const std::string& lengths_text) {
  Session s = open_session(a);
  const auto lengths = parse_long_list(lengths_text, "--lengths");
  const Engine engine(s.certified);
  auto opts = make_opts(a, s);
  const auto est = local_time_constant(engine, lengths, opts);
  if (opts.stop_after > 0 && checkpoint_pending(s.out)) {
    return finish_interrupted(s, "localtime");
  }

  RunManifest m = start_manifest("localtime", a, s);
  m.parameters["particles"] = a.particles;
  m.parameters["lengths"] = lengths;
  write_localtime_csv(s.out / "localtime.csv", est);
  m.outputs = {"localtime.csv"};
  if (est.visit_extrapolation) {
    m.results["visit_limit"] = est.visit_extrapolation->intercept;
  }
  finish_manifest(m, s);
  for (const auto& r : est.rows) {
    std::printf("L=%ld visit %.4f +- %.4f occupation %.4f +- %.4f\n", r.length,
                r.visit_ratio, r.visit_se, r.occupation_ratio,
                r.occupation_se);
  }
  return 0;
}

int run_llt(const CommonArgs& a, const std::string& mode_name,
            const LltParams& params) {
  Session s = open_session(a);
  LltMode mode;
  if (mode_name == "continuous") {
    mode = LltMode::Continuous;
  } else if (mode_name == "meander") {
    mode = LltMode::Meander;
  } else if (mode_name == "heat") {
    mode = LltMode::Heat;
  } else if (mode_name == "joint") {
    mode = LltMode::Joint;
  } else {
    throw ConfigError("llt --mode must be continuous, meander, heat, or joint");
  }

  // Wall-free modes run on the unbounded dynamics whatever the config says;
  // modes that need an absorbing plane insist on the matching channel kind
  // rather than inventing walls the file does not declare.
  if (mode == LltMode::Continuous || mode == LltMode::Joint) {
    s.certified.kind = TubeKind::BiInfinite;
    s.certified.length = 0;
  } else if (mode == LltMode::Meander &&
             s.certified.kind != TubeKind::SemiInfinite) {
    throw ConfigError("llt --mode meander needs a semi_infinite tube");
  } else if (mode == LltMode::Heat && s.certified.kind != TubeKind::Finite) {
    throw ConfigError("llt --mode heat needs a finite tube");
  }

  const Engine engine(s.certified);
  auto opts = make_opts(a, s);
  const auto r = llt_counts(engine, mode, params, s.measure, opts);
  if (opts.stop_after > 0 && checkpoint_pending(s.out)) {
    return finish_interrupted(s, "llt");
  }

  nlohmann::json pj;
  pj["horizon"] = params.horizon;
  pj["steps"] = params.steps;
  pj["x"] = params.x;
  pj["y"] = params.y;
  pj["window"] = params.window;
  pj["sigma_hat"] = params.sigma_hat;
  pj["c1_hat"] = params.c1_hat;
  pj["kappa_bar"] = params.kappa_bar;
  pj["cov"] = {params.covariance.a11, params.covariance.a12,
               params.covariance.a22};
  pj["min_hits"] = params.min_hits;
  pj["orbit_blocks"] = params.orbit_blocks;

  RunManifest m = start_manifest("llt", a, s);
  m.parameters["mode"] = mode_name;
  m.parameters["particles"] = a.particles;
  m.parameters["llt"] = pj;
  m.particles = a.particles;
  m.results["empirical"] = r.empirical;
  m.results["reference"] = r.reference;
  m.results["z"] = r.z;
  m.results["hits"] = r.hits;
  write_llt_csv(s.out / "llt.csv", mode_name, pj.dump(), r);
  m.outputs = {"llt.csv"};
  finish_manifest(m, s);
  std::printf("empirical %.6g vs reference %.6g (z = %.2f, hits %llu)\n",
              r.empirical, r.reference, r.z,
              static_cast<unsigned long long>(r.hits));
  return 0;
}

int run_reference(const CommonArgs& a, const std::string& law,
                  double sigma_hat, double t, double x_fixed, double y_fixed,
                  double grid_lo, double grid_hi, long grid_n,
                  const std::string& initial, double f0, double f1) {
  if (grid_n < 2 || !(grid_hi > grid_lo)) {
    throw ConfigError("reference needs --grid-lo < --grid-hi and --grid-n >= 2");
  }
  Session s;
  s.t0 = std::chrono::steady_clock::now();
  if (!a.config_path.empty()) {
    s.loaded = load_config(a.config_path);
    s.config_hash = config_fingerprint(s.loaded.tube);
  }
  s.master_seed = a.seed;
  s.out = fs::path(a.out_dir);
  fs::create_directories(s.out);

  const auto grid = [&](long i) {
    return grid_lo + (grid_hi - grid_lo) * static_cast<double>(i) /
                         static_cast<double>(grid_n - 1);
  };

  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
  if (law == "gaussian") {
    columns = {"x", "value", "tail_bound"};
    for (long i = 0; i < grid_n; ++i) {
      const double x = grid(i);
      rows.push_back({x, gaussian_density(sigma_hat, x), 0.0});
    }
  } else if (law == "meander" || law == "meander_cdf") {
    columns = {"x", "y", "value", "tail_bound"};
    const MeanderLaw ml{sigma_hat, 0, 1e-12};
    for (long i = 0; i < grid_n; ++i) {
      const double x = grid(i);
      const auto v = (law == "meander") ? meander_density(ml, x, y_fixed)
                                        : meander_cdf(ml, x, y_fixed);
      rows.push_back({x, y_fixed, v.value, v.tail_bound});
    }
  } else if (law == "killed_bm") {
    columns = {"x", "y", "t", "value", "tail_bound"};
    for (long i = 0; i < grid_n; ++i) {
      const double y = grid(i);
      const auto v = killed_bm_density(sigma_hat, t, x_fixed, y);
      rows.push_back({x_fixed, y, t, v.value, v.tail_bound});
    }
  } else if (law == "heat") {
    columns = {"x", "t", "value", "tail_bound"};
    HeatReference ref;
    ref.sigma_hat = sigma_hat;
    ref.f0 = f0;
    ref.f1 = f1;
    ref.f = initial_profile(initial, f0, f1);
    HeatSolution solution(ref);
    for (long i = 0; i < grid_n; ++i) {
      const double x = grid(i);
      rows.push_back({x, t, solution(t, x), 0.0});
    }
  } else {
    throw ConfigError(
        "reference --law must be gaussian, meander, meander_cdf, killed_bm, "
        "or heat");
  }

  RunManifest m;
  m.subcommand = "reference";
  m.config_hash = s.config_hash;
  m.master_seed = s.master_seed;
  m.parameters["law"] = law;
  m.parameters["sigma_hat"] = sigma_hat;
  m.parameters["t"] = t;
  m.parameters["x"] = x_fixed;
  m.parameters["y"] = y_fixed;
  m.parameters["grid"] = {grid_lo, grid_hi, grid_n};
  m.build_id = TUBE_BUILD_ID;
  write_reference_csv(s.out / "reference.csv", columns, rows);
  m.outputs = {"reference.csv"};
  finish_manifest(m, s);
  std::printf("%ld rows of %s written\n", grid_n, law.c_str());
  return 0;
}

std::string error_kind(const Error& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return "ConfigError";
  if (dynamic_cast<const ValidationFailed*>(&e)) return "ValidationFailed";
  if (dynamic_cast<const CorridorFound*>(&e)) return "CorridorFound";
  if (dynamic_cast<const EmptyConfiguration*>(&e)) return "EmptyConfiguration";
  if (dynamic_cast<const InvalidConfiguration*>(&e)) {
    return "InvalidConfiguration";
  }
  if (dynamic_cast<const CheckpointVersionMismatch*>(&e)) {
    return "CheckpointVersionMismatch";
  }
  if (dynamic_cast<const CorruptCheckpoint*>(&e)) return "CorruptCheckpoint";
  if (dynamic_cast<const DomainError*>(&e)) return "DomainError";
  if (dynamic_cast<const InsufficientSamples*>(&e)) {
    return "InsufficientSamples";
  }
  if (dynamic_cast<const TooFewSurvivors*>(&e)) return "TooFewSurvivors";
  if (dynamic_cast<const InsufficientHits*>(&e)) return "InsufficientHits";
  return "Error";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"event-driven Lorentz-channel simulator"};
  app.require_subcommand(1);

  CommonArgs a;
  int exit_code = 0;
  std::string active_out = ".";

  // validate
  {
    auto* sub = app.add_subcommand("validate",
                                   "check geometry and certify the horizon");
    add_common(sub, a);
    sub->callback([&] {
      active_out = a.out_dir;
      exit_code = run_validate(a);
    });
  }

  // transport
  {
    static long steps = 1000;
    auto* sub = app.add_subcommand(
        "transport", "mean free path and diffusion constants");
    add_common(sub, a);
    sub->add_option("--steps", steps, "collisions per particle");
    sub->callback([&] {
      active_out = a.out_dir;
      exit_code = run_transport(a, steps);
    });
  }

  // survival
  {
    static std::string horizons = "100,316.22776601683796,1000,3162.2776601683795,10000";
    auto* sub = app.add_subcommand("survival", "absorption-time tail");
    add_common(sub, a);
    sub->add_option("--horizons", horizons, "comma-separated horizons N");
    sub->callback([&] {
      active_out = a.out_dir;
      exit_code = run_survival(a, horizons);
    });
  }

  // meander
  {
    static double horizon = 10000.0;
    auto* sub = app.add_subcommand(
        "meander", "scaled endpoint and maximum of surviving paths");
    add_common(sub, a);
    sub->add_option("--t-cap", horizon, "survival horizon N");
    sub->callback([&] {
      active_out = a.out_dir;
      exit_code = run_meander(a, horizon);
    });
  }

  // profile
  {
    static std::string mode = "semi";
    static double t_cap = 40000.0;
    static long cells = 0;
    static double c1_hat = 0.0;
    auto* sub = app.add_subcommand("profile",
                                   "stationary density under injection");
    add_common(sub, a);
    sub->add_option("--mode", mode, "semi | finite");
    sub->add_option("--t-cap", t_cap, "per-particle time cap");
    sub->add_option("--cells", cells, "cells to report (0 = automatic)");
    sub->add_option("--c1-hat", c1_hat,
                    "survival constant for the tail-bias bound");
    sub->callback([&] {
      active_out = a.out_dir;
      exit_code = run_profile(a, mode, t_cap, cells, c1_hat);
    });
  }

  // heat
  {
    static long length_override = 0;
    static std::string initial = "ramp";
    static double f0 = 1.0, f1 = 0.5;
    static double lambda0 = 0.0, lambda1 = 0.0;
    static double scale = 1000.0;
    static std::string times = "0.05,0.1,0.3";
    static double boundary_constant = 0.0;
    auto* sub = app.add_subcommand("heat", "macroscopic occupation field");
    add_common(sub, a);
    sub->add_option("--L", length_override, "override the channel length");
    sub->add_option("--initial", initial, "initial profile: flat | ramp | sine");
    sub->add_option("--f0", f0, "initial profile left value");
    sub->add_option("--f1", f1, "initial profile right value");
    sub->add_option("--lambda0", lambda0, "left source rate");
    sub->add_option("--lambda1", lambda1, "right source rate");
    sub->add_option("--scale", scale, "intensity multiplier Lambda");
    sub->add_option("--times", times, "comma-separated snapshot times");
    sub->add_option("--boundary-constant", boundary_constant,
                    "sustained level per unit rate for the mismatch warning");
    sub->callback([&] {
      active_out = a.out_dir;
      exit_code = run_heat(a, length_override, initial, f0, f1, lambda0,
                           lambda1, scale, times, boundary_constant);
    });
  }

  // localtime
  {
    static std::string lengths = "6,10,15";
    auto* sub = app.add_subcommand("localtime",
                                   "visit and occupation ratios far away");
    add_common(sub, a);
    sub->add_option("--lengths", lengths, "comma-separated distances L");
    sub->callback([&] {
      active_out = a.out_dir;
      exit_code = run_localtime(a, lengths);
    });
  }

  // llt
  {
    static std::string mode = "continuous";
    static LltParams params;
    auto* sub = app.add_subcommand(
        "llt", "scaled point counts against the matching density");
    add_common(sub, a);
    sub->add_option("--mode", mode, "continuous | meander | heat | joint");
    sub->add_option("--t-cap", params.horizon,
                    "time horizon (continuous/meander) or macroscopic t (heat)");
    sub->add_option("--steps", params.steps, "collision count n (joint)");
    sub->add_option("--x", params.x, "target position");
    sub->add_option("--y", params.y,
                    "meander barrier / heat target / joint time offset");
    sub->add_option("--window", params.window, "joint flight-time window");
    sub->add_option("--sigma-hat", params.sigma_hat, "continuous-time spread");
    sub->add_option("--c1-hat", params.c1_hat, "survival constant (meander)");
    sub->add_option("--kappa-bar", params.kappa_bar, "mean free path (joint)");
    sub->add_option("--cov11", params.covariance.a11, "walk covariance xx");
    sub->add_option("--cov12", params.covariance.a12, "walk covariance xt");
    sub->add_option("--cov22", params.covariance.a22, "walk covariance tt");
    sub->add_option("--min-hits", params.min_hits, "required hit count");
    sub->add_option("--orbit-blocks", params.orbit_blocks,
                    "sliding span per orbit (joint)");
    sub->callback([&] {
      active_out = a.out_dir;
      exit_code = run_llt(a, mode, params);
    });
  }

  // reference
  {
    static std::string law = "gaussian";
    static double sigma_hat = 1.0;
    static double t = 0.25;
    static double x_fixed = 0.5;
    static double y_fixed = 6.0;
    static double grid_lo = 0.0;
    static double grid_hi = 3.0;
    static long grid_n = 301;
    static std::string initial = "ramp";
    static double f0 = 1.0, f1 = 0.5;
    auto* sub = app.add_subcommand("reference",
                                   "tabulate an analytic law for plotting");
    add_common(sub, a, /*config_required=*/false);
    sub->add_option("--law", law,
                    "gaussian | meander | meander_cdf | killed_bm | heat");
    sub->add_option("--sigma-hat", sigma_hat, "spread parameter");
    sub->add_option("--t", t, "time argument (killed_bm, heat)");
    sub->add_option("--x", x_fixed, "start point (killed_bm)");
    sub->add_option("--y", y_fixed, "barrier / second argument (meander)");
    sub->add_option("--grid-lo", grid_lo, "grid start");
    sub->add_option("--grid-hi", grid_hi, "grid end");
    sub->add_option("--grid-n", grid_n, "grid points");
    sub->add_option("--initial", initial, "heat profile: flat | ramp | sine");
    sub->add_option("--f0", f0, "heat profile left value");
    sub->add_option("--f1", f1, "heat profile right value");
    sub->callback([&] {
      active_out = a.out_dir;
      exit_code = run_reference(a, law, sigma_hat, t, x_fixed, y_fixed,
                                grid_lo, grid_hi, grid_n, initial, f0, f1);
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  } catch (const Error& e) {
    const auto rec = error_record(error_kind(e), e.what());
    std::fprintf(stderr, "%s\n", rec.c_str());
    try {
      std::filesystem::create_directories(active_out);
      write_text_atomic(std::filesystem::path(active_out) / "error.json",
                        rec + "\n");
    } catch (...) {
      // the record already went to stderr
    }
    return 1;
  }
  return exit_code;
}
