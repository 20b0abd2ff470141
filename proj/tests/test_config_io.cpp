// SPDX-License-Identifier: MIT
//
// Config-file loading, configuration fingerprints, CSV result tables, and
// the run manifest.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "catch2/catch_amalgamated.hpp"
#include "json.hpp"
#include "tube/config.hpp"
#include "tube/io.hpp"

using namespace tube;

namespace {

struct TempDir {
  std::filesystem::path root;
  explicit TempDir(const std::string& name)
      : root(std::filesystem::temp_directory_path() / "tube_cfg_tests" / name) {
    std::filesystem::remove_all(root);
    std::filesystem::create_directories(root);
  }
  ~TempDir() { std::filesystem::remove_all(root); }
  std::filesystem::path file(const std::string& leaf) const {
    return root / leaf;
  }
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  REQUIRE(os.good());
  os << text;
}

const char* kGoodConfig = R"({
  // the default two-disk layout, one comment to prove comments parse
  "disks": [
    {"center": [0.5, 0.5], "radius": 0.45},
    {"center": [0.0, 0.0], "radius": 0.2}
  ],
  "tube": {"kind": "finite", "length": 12},
  "horizon": {"max_denominator": 8, "mc_trajectories": 10000, "mc_steps": 1000},
  "margin": 1e-6,
  "seed": 31415,
  "injection": "mu0",
  "rate": 1.5
})";

}  // namespace

TEST_CASE("config files load with comments and populate every field") {
  const auto cfg = parse_config_text(kGoodConfig, "inline");
  REQUIRE(cfg.tube.disks.size() == 2);
  CHECK(cfg.tube.disks[0].center.x == 0.5);
  CHECK(cfg.tube.disks[0].center.y == 0.5);
  CHECK(cfg.tube.disks[0].radius == 0.45);
  CHECK(cfg.tube.disks[1].center.x == 0.0);
  CHECK(cfg.tube.disks[1].radius == 0.2);
  CHECK(cfg.tube.kind == TubeKind::Finite);
  CHECK(cfg.tube.length == 12);
  CHECK(cfg.tube.audit.max_denominator == 8);
  CHECK(cfg.tube.audit.mc_trajectories == 10000);
  CHECK(cfg.tube.audit.mc_steps == 1000);
  CHECK(cfg.tube.margin == 1e-6);
  REQUIRE(cfg.seed.has_value());
  CHECK(*cfg.seed == 31415);
  REQUIRE(cfg.injection.has_value());
  CHECK(*cfg.injection == "mu0");
  REQUIRE(cfg.rate.has_value());
  CHECK(*cfg.rate == 1.5);

  TempDir dir("load");
  write_file(dir.file("a.cfg"), kGoodConfig);
  const auto from_disk = load_config(dir.file("a.cfg").string());
  CHECK(from_disk.tube.disks.size() == 2);
  CHECK(from_disk.tube.length == 12);
}

TEST_CASE("optional config keys default sensibly") {
  const auto cfg = parse_config_text(
      R"({"disks": [{"center": [0.5, 0.5], "radius": 0.3}],
          "tube": {"kind": "bi_infinite"}})",
      "inline");
  CHECK(cfg.tube.kind == TubeKind::BiInfinite);
  CHECK(cfg.tube.margin == 1e-6);
  CHECK(cfg.tube.audit.max_denominator == 8);
  CHECK(cfg.tube.audit.mc_trajectories == 10000);
  CHECK(cfg.tube.audit.mc_steps == 1000);
  CHECK_FALSE(cfg.seed.has_value());
  CHECK_FALSE(cfg.injection.has_value());
  CHECK_FALSE(cfg.rate.has_value());
}

TEST_CASE("malformed config files are rejected with the offending key") {
  const auto reject = [](const std::string& text) {
    CHECK_THROWS_AS(parse_config_text(text, "inline"), ConfigError);
  };
  reject("[1, 2]");
  reject("{ not json");
  reject(R"({"disks": [], "tube": {"kind": "bi_infinite"}})");
  reject(R"({"tube": {"kind": "bi_infinite"}})");
  reject(R"({"disks": [{"center": [0.5], "radius": 0.3}],
             "tube": {"kind": "bi_infinite"}})");
  reject(R"({"disks": [{"center": [0.5, 0.5], "radius": "big"}],
             "tube": {"kind": "bi_infinite"}})");
  reject(R"({"disks": [{"center": [0.5, 0.5], "radius": 0.3, "color": 1}],
             "tube": {"kind": "bi_infinite"}})");
  reject(R"({"disks": [{"center": [0.5, 0.5], "radius": 0.3}]})");
  reject(R"({"disks": [{"center": [0.5, 0.5], "radius": 0.3}],
             "tube": {"kind": "moebius"}})");
  reject(R"({"disks": [{"center": [0.5, 0.5], "radius": 0.3}],
             "tube": {"kind": "finite"}})");
  reject(R"({"disks": [{"center": [0.5, 0.5], "radius": 0.3}],
             "tube": {"kind": "finite", "length": 12.5}})");
  reject(R"({"disks": [{"center": [0.5, 0.5], "radius": 0.3}],
             "tube": {"kind": "semi_infinite", "length": 9}})");
  reject(R"({"disks": [{"center": [0.5, 0.5], "radius": 0.3}],
             "tube": {"kind": "bi_infinite"}, "disc_count": 2})");
  reject(R"({"disks": [{"center": [0.5, 0.5], "radius": 0.3}],
             "tube": {"kind": "bi_infinite"}, "seed": -4})");
  reject(R"({"disks": [{"center": [0.5, 0.5], "radius": 0.3}],
             "tube": {"kind": "bi_infinite"}, "seed": 1.5})");
  reject(R"({"disks": [{"center": [0.5, 0.5], "radius": 0.3}],
             "tube": {"kind": "bi_infinite"}, "injection": 7})");
  reject(R"({"disks": [{"center": [0.5, 0.5], "radius": 0.3}],
             "tube": {"kind": "bi_infinite"}, "rate": "fast"})");
  reject(R"({"disks": [{"center": [0.5, 0.5], "radius": 0.3}],
             "tube": {"kind": "bi_infinite"},
             "horizon": {"max_denominator": 8.5}})");
  CHECK_THROWS_AS(load_config("/nonexistent/path/to.cfg"), ConfigError);
}

TEST_CASE("fingerprints ignore formatting but track every identity field") {
  const auto a = parse_config_text(kGoodConfig, "a");
  const auto b = parse_config_text(
      R"({"rate": 1.5, "seed": 31415, "injection": "mu0",
          "margin": 0.000001,
          "horizon": {"mc_steps": 1000, "mc_trajectories": 10000,
                      "max_denominator": 8},
          "tube": {"length": 12, "kind": "finite"},
          "disks": [{"center": [0.5, 0.5], "radius": 0.45},
                    {"center": [0.0, 0.0], "radius": 0.2}]})",
      "b");
  CHECK(config_fingerprint(a.tube) == config_fingerprint(b.tube));

  auto tweaked = a.tube;
  tweaked.disks[1].radius = 0.25;
  CHECK(config_fingerprint(tweaked) != config_fingerprint(a.tube));

  tweaked = a.tube;
  tweaked.kind = TubeKind::SemiInfinite;
  tweaked.length = 0;
  CHECK(config_fingerprint(tweaked) != config_fingerprint(a.tube));

  tweaked = a.tube;
  tweaked.audit.mc_steps = 2000;
  CHECK(config_fingerprint(tweaked) != config_fingerprint(a.tube));

  tweaked = a.tube;
  tweaked.margin = 1e-7;
  CHECK(config_fingerprint(tweaked) != config_fingerprint(a.tube));

  // Certification fills in derived flight bounds; a certified copy must be
  // able to resume runs started before certification.
  tweaked = a.tube;
  tweaked.kappa_min_bound = 0.05;
  tweaked.kappa_max_bound = 3.2;
  tweaked.horizon_certified = true;
  CHECK(config_fingerprint(tweaked) == config_fingerprint(a.tube));
}

TEST_CASE("g17 formatting round-trips doubles exactly") {
  const double values[] = {0.0,     1.0 / 3.0,  0.1,    6.03,
                           1e-300,  3.5e300,    -0.45,  1.2345678901234567,
                           0.87,    1e-6,       144.0,  -7.25e-12};
  for (const double v : values) {
    const std::string s = format_g17(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
  CHECK(format_g17(0.25) == "0.25");
  CHECK(format_g17(2.0) == "2");
  CHECK(format_g17(1.0 / 3.0) == "0.33333333333333331");
  CHECK(format_hex64(0x0123456789abcdefULL) == "0123456789abcdef");
  CHECK(format_hex64(0) == "0000000000000000");
}

TEST_CASE("csv fields are quoted only when needed") {
  CHECK(csv_quote("plain") == "plain");
  CHECK(csv_quote("a,b") == "\"a,b\"");
  CHECK(csv_quote("say \"hi\"") == "\"say \"\"hi\"\"\"");
  CHECK(csv_quote("a\"b,c") == "\"a\"\"b,c\"");
}

TEST_CASE("profile, survival, and occupancy tables have the agreed schema") {
  TempDir dir("csv");

  DensityProfile profile;
  profile.cells.push_back({1.0 / 3.0, 0.25, 7});
  profile.cells.push_back({2.0, 0.5, 11});
  write_profile_csv(dir.file("profile.csv"), profile);
  CHECK(read_file(dir.file("profile.csv")) ==
        "cell,estimate,stderr,n\n"
        "0,0.33333333333333331,0.25,7\n"
        "1,2,0.5,11\n");

  SurvivalTable table;
  table.horizons = {100.0, 1000.0};
  table.survival = {0.25, 0.0625};
  table.stderr_ = {0.5, 0.25};
  write_survival_csv(dir.file("survival.csv"), table);
  CHECK(read_file(dir.file("survival.csv")) ==
        "N,p_hat,stderr\n"
        "100,0.25,0.5\n"
        "1000,0.0625,0.25\n");

  OccupancyField field;
  field.times = {0.5, 2.0};
  field.cells = 2;
  field.u_hat = {1.0, 0.5, 0.25, 0.125};
  field.stderr_ = {0.5, 0.25, 0.125, 0.0625};
  field.scale = 100.0;
  write_occupancy_csv(dir.file("occupancy.csv"), field);
  CHECK(read_file(dir.file("occupancy.csv")) ==
        "t,cell,u_hat,stderr\n"
        "0.5,0,1,0.5\n"
        "0.5,1,0.5,0.25\n"
        "2,0,0.25,0.125\n"
        "2,1,0.125,0.0625\n");
}

TEST_CASE("llt rows quote the parameter json") {
  TempDir dir("llt");
  LltResult r;
  r.empirical = 0.5;
  r.reference = 0.25;
  r.stderr_ = 0.125;
  r.z = 2.0;
  r.hits = 10;
  r.samples = 20;
  write_llt_csv(dir.file("llt.csv"), "meander", R"({"T":100,"x":0.5})", r);
  CHECK(read_file(dir.file("llt.csv")) ==
        "mode,param_json,empirical,reference,z\n"
        "meander,\"{\"\"T\"\":100,\"\"x\"\":0.5}\",0.5,0.25,2\n");
}

TEST_CASE("transport, meander, localtime, and escape tables write cleanly") {
  TempDir dir("more");

  TransportEstimates t;
  t.sigma2 = 0.25;
  t.sigma2_se = 0.5;
  t.kappa_bar = 2.0;
  t.kappa_bar_se = 0.25;
  t.sigma_hat2 = 0.125;
  t.sigma_hat2_se = 0.0625;
  t.covariance = {0.25, 0.0, 0.5};
  t.covariance_se = {0.125, 0.0625, 0.25};
  write_transport_csv(dir.file("transport.csv"), t);
  CHECK(read_file(dir.file("transport.csv")) ==
        "quantity,estimate,stderr\n"
        "sigma2,0.25,0.5\n"
        "kappa_bar,2,0.25\n"
        "sigma_hat2,0.125,0.0625\n"
        "cov11,0.25,0.125\n"
        "cov12,0,0.0625\n"
        "cov22,0.5,0.25\n");

  MeanderSamples samples;
  samples.endpoints = {0.5, 0.25};
  samples.maxima = {1.0, 0.75};
  write_meander_csv(dir.file("meander.csv"), samples);
  CHECK(read_file(dir.file("meander.csv")) ==
        "endpoint,maximum\n"
        "0.5,1\n"
        "0.25,0.75\n");

  LocalTimeEstimates lt;
  LocalTimeRow row;
  row.length = 6;
  row.visit_ratio = 0.5;
  row.visit_se = 0.25;
  row.occupation_ratio = 0.125;
  row.occupation_se = 0.0625;
  row.capped_fraction = 0.25;
  row.particles = 400;
  lt.rows.push_back(row);
  write_localtime_csv(dir.file("localtime.csv"), lt);
  CHECK(read_file(dir.file("localtime.csv")) ==
        "L,visit_ratio,visit_se,occupation_ratio,occupation_se,"
        "capped_fraction,particles\n"
        "6,0.5,0.25,0.125,0.0625,0.25,400\n");

  EscapeEstimate esc;
  EscapeRow er;
  er.length = 5;
  er.c_bar = 0.375;
  er.stderr_ = 0.125;
  er.wins = 30;
  er.particles = 400;
  esc.rows.push_back(er);
  write_escape_csv(dir.file("escape.csv"), esc);
  CHECK(read_file(dir.file("escape.csv")) ==
        "L,c_bar,stderr,wins,particles\n"
        "5,0.375,0.125,30,400\n");

  write_reference_csv(dir.file("ref.csv"), {"x", "value", "tail_bound"},
                      {{0.5, 0.25, 0.0}, {1.0, 0.125, 0.0}});
  CHECK(read_file(dir.file("ref.csv")) ==
        "x,value,tail_bound\n"
        "0.5,0.25,0\n"
        "1,0.125,0\n");
  CHECK_THROWS_AS(
      write_reference_csv(dir.file("bad.csv"), {"x", "value"}, {{1.0}}),
      GridMismatch);
}

TEST_CASE("atomic writes replace the target and leave no temporary") {
  TempDir dir("atomic");
  const auto path = dir.file("out.txt");
  write_text_atomic(path, "first\n");
  write_text_atomic(path, "second\n");
  CHECK(read_file(path) == "second\n");
  CHECK_FALSE(std::filesystem::exists(dir.file("out.txt.tmp")));
}

TEST_CASE("manifests round-trip through disk as json") {
  TempDir dir("manifest");
  RunManifest m;
  m.subcommand = "transport";
  m.config_hash = 0xdeadbeef01234567ULL;
  m.master_seed = 18446744073709551615ULL;  // largest 64-bit value survives
  m.parameters = {{"particles", 1000}, {"steps", 50}};
  m.build_id = "test";
  m.wall_seconds = 1.5;
  m.particles = 1000;
  m.events = 50000;
  m.outputs = {"transport.csv"};
  save_manifest(dir.root, m);

  const auto j = nlohmann::json::parse(read_file(dir.file("manifest.json")));
  CHECK(j["format_version"] == 1);
  CHECK(j["subcommand"] == "transport");
  CHECK(j["config_hash"] == "deadbeef01234567");
  CHECK(j["master_seed"].get<std::uint64_t>() == 18446744073709551615ULL);
  CHECK(j["parameters"]["particles"] == 1000);
  CHECK(j["parameters"]["steps"] == 50);
  CHECK(j["outputs"][0] == "transport.csv");
  CHECK(j["telemetry"]["events"] == 50000);
  CHECK(j["telemetry"]["build_id"] == "test");
}

TEST_CASE("error records are single-line json naming the type") {
  const auto rec = error_record("ConfigError", "bad \"key\" found");
  CHECK(rec.find('\n') == std::string::npos);
  const auto j = nlohmann::json::parse(rec);
  CHECK(j["error"] == "ConfigError");
  CHECK(j["message"] == "bad \"key\" found");
}
