// SPDX-License-Identifier: MIT
#pragma once

// Result files: CSV tables plus a sibling JSON manifest per run directory.
// Every floating-point value is printed with %.17g, which round-trips
// doubles exactly, so a rerun with the same inputs can be compared to a
// previous run byte for byte.  Files are written to a temporary name and
// renamed into place, so readers never observe a half-written table.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tube/errors.hpp"
#include "tube/experiments.hpp"

namespace tube {

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string format_hex64(std::uint64_t v) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

// A CSV field is quoted only when it must be (embedded comma, quote, or
// newline); inner quotes are doubled.
inline std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (const char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline void write_text_atomic(const std::filesystem::path& path,
                              const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) {
      throw Error("cannot open " + tmp.string() + " for writing");
    }
    os << content;
    os.flush();
    if (!os) {
      throw Error("short write to " + tmp.string());
    }
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// CSV writers, one per result shape.

inline void write_profile_csv(const std::filesystem::path& path,
                              const DensityProfile& profile) {
  std::string out = "cell,estimate,stderr,n\n";
  for (std::size_t k = 0; k < profile.cells.size(); ++k) {
    const auto& cell = profile.cells[k];
    out += std::to_string(k) + ',' + format_g17(cell.estimate) + ',' +
           format_g17(cell.stderr_) + ',' +
           std::to_string(cell.n_contributing) + '\n';
  }
  write_text_atomic(path, out);
}

inline void write_survival_csv(const std::filesystem::path& path,
                               const SurvivalTable& table) {
  std::string out = "N,p_hat,stderr\n";
  for (std::size_t i = 0; i < table.horizons.size(); ++i) {
    out += format_g17(table.horizons[i]) + ',' + format_g17(table.survival[i]) +
           ',' + format_g17(table.stderr_[i]) + '\n';
  }
  write_text_atomic(path, out);
}

inline void write_occupancy_csv(const std::filesystem::path& path,
                                const OccupancyField& field) {
  std::string out = "t,cell,u_hat,stderr\n";
  for (std::size_t ti = 0; ti < field.times.size(); ++ti) {
    for (long k = 0; k < field.cells; ++k) {
      out += format_g17(field.times[ti]) + ',' + std::to_string(k) + ',' +
             format_g17(field.at(ti, k)) + ',' + format_g17(field.se_at(ti, k)) +
             '\n';
    }
  }
  write_text_atomic(path, out);
}

inline void write_llt_csv(const std::filesystem::path& path,
                          const std::string& mode,
                          const std::string& param_json, const LltResult& r) {
  std::string out = "mode,param_json,empirical,reference,z\n";
  out += csv_quote(mode) + ',' + csv_quote(param_json) + ',' +
         format_g17(r.empirical) + ',' + format_g17(r.reference) + ',' +
         format_g17(r.z) + '\n';
  write_text_atomic(path, out);
}

inline void write_transport_csv(const std::filesystem::path& path,
                                const TransportEstimates& t) {
  std::string out = "quantity,estimate,stderr\n";
  const auto row = [&out](const char* name, double v, double se) {
    out += std::string(name) + ',' + format_g17(v) + ',' + format_g17(se) +
           '\n';
  };
  row("sigma2", t.sigma2, t.sigma2_se);
  row("kappa_bar", t.kappa_bar, t.kappa_bar_se);
  row("sigma_hat2", t.sigma_hat2, t.sigma_hat2_se);
  row("cov11", t.covariance.a11, t.covariance_se.a11);
  row("cov12", t.covariance.a12, t.covariance_se.a12);
  row("cov22", t.covariance.a22, t.covariance_se.a22);
  write_text_atomic(path, out);
}

inline void write_meander_csv(const std::filesystem::path& path,
                              const MeanderSamples& samples) {
  std::string out = "endpoint,maximum\n";
  for (std::size_t i = 0; i < samples.endpoints.size(); ++i) {
    out += format_g17(samples.endpoints[i]) + ',' +
           format_g17(samples.maxima[i]) + '\n';
  }
  write_text_atomic(path, out);
}

inline void write_localtime_csv(const std::filesystem::path& path,
                                const LocalTimeEstimates& est) {
  std::string out =
      "L,visit_ratio,visit_se,occupation_ratio,occupation_se,"
      "capped_fraction,particles\n";
  for (const auto& r : est.rows) {
    out += std::to_string(r.length) + ',' + format_g17(r.visit_ratio) + ',' +
           format_g17(r.visit_se) + ',' + format_g17(r.occupation_ratio) +
           ',' + format_g17(r.occupation_se) + ',' +
           format_g17(r.capped_fraction) + ',' + std::to_string(r.particles) +
           '\n';
  }
  write_text_atomic(path, out);
}

inline void write_escape_csv(const std::filesystem::path& path,
                             const EscapeEstimate& est) {
  std::string out = "L,c_bar,stderr,wins,particles\n";
  for (const auto& r : est.rows) {
    out += std::to_string(r.length) + ',' + format_g17(r.c_bar) + ',' +
           format_g17(r.stderr_) + ',' + std::to_string(r.wins) + ',' +
           std::to_string(r.particles) + '\n';
  }
  write_text_atomic(path, out);
}

// Tabulated analytic curves: caller supplies the column names (for example
// {"x", "value", "tail_bound"}) and the rows.
inline void write_reference_csv(const std::filesystem::path& path,
                                const std::vector<std::string>& columns,
                                const std::vector<std::vector<double>>& rows) {
  std::string out;
  for (std::size_t c = 0; c < columns.size(); ++c) {
    out += csv_quote(columns[c]);
    out += (c + 1 < columns.size()) ? ',' : '\n';
  }
  for (const auto& row : rows) {
    if (row.size() != columns.size()) {
      throw GridMismatch("reference table row width does not match header");
    }
    for (std::size_t c = 0; c < row.size(); ++c) {
      out += format_g17(row[c]);
      out += (c + 1 < row.size()) ? ',' : '\n';
    }
  }
  write_text_atomic(path, out);
}

// ---------------------------------------------------------------------------
// Run manifest: the identity of a run (everything its outputs depend on)
// plus descriptive telemetry.  Two runs whose identity sections agree must
// produce byte-identical result files.

struct RunManifest {
  int format_version = 1;
  std::string subcommand;
  std::uint64_t config_hash = 0;
  std::uint64_t master_seed = 0;
  nlohmann::json parameters = nlohmann::json::object();

  // Derived scalar results worth surfacing without parsing the CSVs; a pure
  // function of the identity fields above.
  nlohmann::json results = nlohmann::json::object();

  // Telemetry: descriptive only, never part of the identity.
  std::string build_id;
  double wall_seconds = 0.0;
  std::uint64_t particles = 0;
  std::uint64_t events = 0;
  std::vector<std::string> outputs;
};

inline nlohmann::json manifest_json(const RunManifest& m) {
  nlohmann::json j;
  j["format_version"] = m.format_version;
  j["subcommand"] = m.subcommand;
  j["config_hash"] = format_hex64(m.config_hash);
  j["master_seed"] = m.master_seed;
  j["parameters"] = m.parameters;
  j["results"] = m.results;
  j["outputs"] = m.outputs;
  j["telemetry"] = {{"build_id", m.build_id},
                    {"wall_seconds", m.wall_seconds},
                    {"particles", m.particles},
                    {"events", m.events}};
  return j;
}

inline void save_manifest(const std::filesystem::path& dir,
                          const RunManifest& m) {
  write_text_atomic(dir / "manifest.json", manifest_json(m).dump(2) + "\n");
}

// Machine-readable failure report: one JSON line naming the error type.
inline std::string error_record(const std::string& kind,
                                const std::string& message) {
  nlohmann::json j;
  j["error"] = kind;
  j["message"] = message;
  return j.dump();
}

}  // namespace tube
