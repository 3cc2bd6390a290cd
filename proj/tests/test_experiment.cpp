#include "doctest.h"

#include "feddrl/data.hpp"
#include "feddrl/errors.hpp"
#include "feddrl/experiment.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sys/wait.h>
#include <unistd.h>

using namespace feddrl;
using namespace feddrl::experiment;
namespace fs = std::filesystem;

namespace {

const fs::path kManifests = FEDDRL_MANIFEST_DIR;

// Scratch directory removed on scope exit.
struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("feddrl-test-" + tag + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(path / name) << text;
    return path / name;
  }
};

const std::string kSmallFederated =
    "[run]\nmode = federated\nseed = 3\n\n"
    "[data]\nsource = synthetic\nclients = 2\nlength = 800\n\n"
    "[federation]\nsync_interval = 5\nglobal_epochs = 10\nlocal_episodes = 1\n"
    "warm_start_episodes = 0\n";

bool mentions(const std::vector<std::string>& problems, const std::string& a, const std::string& b = "") {
  for (const auto& p : problems) {
    if (p.find(a) != std::string::npos && p.find(b) != std::string::npos) return true;
  }
  return false;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct CliResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

CliResult cli(const std::string& args, const TempDir& dir, const std::string& env = "") {
  const auto out = dir.path / "stdout.txt";
  const auto err = dir.path / "stderr.txt";
  const std::string command = env + " '" + std::string(FEDDRL_CLI) + "' " + args + " > '" +
                              out.string() + "' 2> '" + err.string() + "'";
  const int status = std::system(command.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

}  // namespace

TEST_CASE("parse_bytes: plain counts and decimal or binary units") {
  CHECK(parse_bytes("40000") == 40000);
  CHECK(parse_bytes("40KB") == 40000);
  CHECK(parse_bytes(" 4 MB ") == 4000000);
  CHECK(parse_bytes("1.5GB") == 1500000000);
  CHECK(parse_bytes("2KiB") == 2048);
  CHECK(parse_bytes("7b") == 7);
  CHECK_THROWS_AS(parse_bytes("4XB"), DomainError);
  CHECK_THROWS_AS(parse_bytes("-1KB"), DomainError);
  CHECK_THROWS_AS(parse_bytes("0.5B"), DomainError);
  CHECK_THROWS_AS(parse_bytes("MB"), DomainError);
}

TEST_CASE("validate: declared sizes give the hand-computed load estimate") {
  // L_C = 4 * 4e6 * 1, L_F = 4e4 * 2 rounds * (4 up + 4 down) = 6.4e5.
  const auto diag = validate_manifest(kManifests / "load_estimate.ini");
  CHECK(diag.problems.empty());
  REQUIRE(diag.load_estimate);
  CHECK(diag.load_estimate->centralized == 1.6e7);
  CHECK(diag.load_estimate->federated == 6.4e5);
  CHECK(diag.load_estimate->gain == 0.96);
  CHECK(diag.model_bytes == 40000);
  CHECK(diag.data_bytes == std::vector<std::uint64_t>(4, 4000000));
}

TEST_CASE("validate: bundled manifests are clean") {
  for (const auto* name : {"federated.ini", "baseline_persistence.ini", "baselines.ini", "grid.ini"}) {
    INFO(name);
    const auto diag = validate_manifest(kManifests / name);
    CHECK(diag.problems.empty());
    CHECK(diag.load_estimate.has_value());
  }
}

TEST_CASE("validate: K above W names the constraint") {
  TempDir dir("k-above-w");
  const auto path = dir.write("m.ini",
                              "[run]\nmode = federated\nseed = 1\n[data]\nclients = 2\n"
                              "[federation]\nsync_interval = 300\nglobal_epochs = 200\n");
  const auto diag = validate_manifest(path);
  CHECK(mentions(diag.problems, "sync_interval", "global_epochs"));
  CHECK_FALSE(diag.load_estimate.has_value());
  CHECK_THROWS_AS(load_manifest(path), ManifestError);
}

TEST_CASE("validate: schema problems are all reported") {
  TempDir dir("schema");
  const auto path = dir.write("m.ini",
                              "[run]\nmode = federated\ncolour = blue\n"
                              "[data]\nclients = four\n"
                              "[federation]\nclient_ratio = 0.5\n"
                              "[extras]\nx = 1\n");
  const auto diag = validate_manifest(path);
  CHECK(mentions(diag.problems, "seed", "required"));
  CHECK(mentions(diag.problems, "colour"));
  CHECK(mentions(diag.problems, "clients", "four"));
  CHECK(mentions(diag.problems, "[extras]"));
  CHECK(diag.problems.size() >= 4);
}

TEST_CASE("validate: mode-required sections") {
  TempDir dir("modes");
  CHECK(mentions(validate_manifest(dir.write("a.ini", "[run]\nmode = federated\nseed = 1\n[data]\n")).problems,
                 "[federation]"));
  CHECK(mentions(validate_manifest(dir.write("b.ini", "[run]\nmode = robustness-grid\nseed = 1\n[data]\n"
                                                      "[federation]\n")).problems,
                 "[grid]"));
  CHECK(mentions(validate_manifest(dir.write("c.ini", "[run]\nmode = baseline\nseed = 1\n[data]\n")).problems,
                 "baselines"));
  CHECK(mentions(validate_manifest(dir.write("d.ini", "[run]\nmode = sideways\nseed = 1\n[data]\n")).problems,
                 "mode"));
  CHECK(mentions(validate_manifest(dir.write("e.ini", "[run]\nmode = baseline\nseed = 1\nbaselines = lstm\n"
                                                      "[data]\n")).problems,
                 "lstm"));
  CHECK_FALSE(validate_manifest(dir.path / "missing.ini").problems.empty());
}

TEST_CASE("load grid defaults to the standard intervals that fit within W") {
  fed::FedConfig cfg;
  cfg.global_epochs = 200;
  cfg.sync_interval = 100;
  CHECK(load_sync_intervals({}, cfg) == std::vector<std::size_t>{50, 100, 200});
  cfg.global_epochs = 20;
  cfg.sync_interval = 5;
  CHECK(load_sync_intervals({}, cfg) == std::vector<std::size_t>{5});
  LoadSpec explicit_grid;
  explicit_grid.sync_intervals = {1, 2};
  CHECK(load_sync_intervals(explicit_grid, cfg) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("csv paths resolve against the manifest directory") {
  TempDir dir("csv");
  data::SyntheticConfig sc;
  sc.length = 600;
  for (const auto* name : {"north", "south"}) {
    sc.seed += 1;
    data::write_csv(data::generate_synthetic(sc), dir.path / (std::string(name) + ".csv"));
  }
  const auto path = dir.write("m.ini",
                              "[run]\nmode = baseline\nseed = 1\nbaselines = persistence\n"
                              "[data]\nsource = csv\npaths = north.csv, south.csv\nhops = 2, 3\n");
  const auto m = load_manifest(path);
  CHECK(m.data.clients == 2);
  CHECK(m.data.paths[0] == dir.path / "north.csv");
  const auto inputs = prepare_inputs(m);
  REQUIRE(inputs.datasets.size() == 2);
  CHECK(inputs.datasets[0].series.name == "north");
  CHECK(inputs.datasets[1].hops == 3);
  CHECK(inputs.datasets[0].train_length == 480);
  const auto diag = validate_manifest(path);
  CHECK(diag.data_bytes == std::vector<std::uint64_t>{9600, 9600});
}

TEST_CASE("baseline run with persistence only yields one metrics row") {
  const auto result = run(load_manifest(kManifests / "baseline_persistence.ini"));
  REQUIRE(result.metrics.size() == 1);
  CHECK(result.metrics[0].method == "persistence");
  CHECK_FALSE(result.federated_state.has_value());
  TempDir dir("baseline");
  write_reports(result, dir.path);
  const auto metrics = slurp(dir.path / "metrics.csv");
  CHECK(std::count(metrics.begin(), metrics.end(), '\n') == 2);
  CHECK(fs::exists(dir.path / "predictions" / "synthetic-0.csv"));
  CHECK(fs::exists(dir.path / "summary.json"));
  CHECK_FALSE(fs::exists(dir.path / "journal.csv"));
}

TEST_CASE("federated run with centralized comparison reports every artifact") {
  TempDir dir("federated");
  auto m = load_manifest(dir.write("m.ini", kSmallFederated));
  m.with_centralized = true;
  m.baselines = {"persistence"};
  const auto result = run(m);
  REQUIRE(result.federated_state);
  CHECK(result.federated_state->journal.size() == 10);
  CHECK(result.centralized_trace.size() == 10);
  REQUIRE(result.equivalence);
  CHECK(result.equivalence->sigma == 0.02);
  CHECK(result.metrics.size() == 6);
  write_reports(result, dir.path / "out");
  const auto journal = slurp(dir.path / "out" / "journal.csv");
  CHECK(std::count(journal.begin(), journal.end(), '\n') == 11);
  const auto summary = nlohmann::json::parse(slurp(dir.path / "out" / "summary.json"));
  CHECK(summary["equivalence"]["pass"].is_boolean());
  CHECK(summary["methods"].contains("federated"));
  const auto predictions = slurp(dir.path / "out" / "predictions" / "synthetic-1.csv");
  CHECK(predictions.starts_with("timestamp,actual,federated,centralized,persistence\n"));
}

TEST_CASE("grid run writes one journal per cell and a comparison table") {
  TempDir dir("grid");
  const auto path = dir.write("m.ini", kSmallFederated + "[grid]\nsync_intervals = 2, 5\nclient_ratios = 0.5, 1\n");
  std::ifstream in(path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  text.replace(text.find("mode = federated"), 16, "mode = robustness-grid");
  dir.write("m.ini", text);
  const auto result = run(load_manifest(path));
  CHECK(result.grid.size() == 4);
  write_reports(result, dir.path / "out");
  for (const auto* cell : {"K2_E0.5", "K2_E1", "K5_E0.5", "K5_E1"}) {
    CHECK(fs::exists(dir.path / "out" / "grid" / cell / "journal.csv"));
  }
  const auto table = slurp(dir.path / "out" / "grid_comparison.csv");
  CHECK(std::count(table.begin(), table.end(), '\n') == 5);
}

TEST_CASE("assess_convergence compares final-quarter spread with the worst early reward") {
  std::vector<double> steady{-0.8, -0.5, -0.3, -0.2, -0.1, -0.1, -0.1, -0.1};
  auto c = assess_convergence(steady);
  CHECK(c.worst_initial == -0.8);
  CHECK(c.final_quarter_std == 0.0);
  CHECK(c.converged);
  std::vector<double> noisy{-0.8, -0.5, -0.3, -0.2, -0.1, -0.1, -0.6, 0.0};
  c = assess_convergence(noisy);
  CHECK(c.final_quarter_std == doctest::Approx(0.3));
  CHECK_FALSE(c.converged);
  CHECK_THROWS_AS(assess_convergence(std::vector<double>{}), RangeError);
}

TEST_CASE("cli: validate prints the dry-run estimate") {
  TempDir dir("cli-validate");
  const auto r = cli("validate '" + (kManifests / "load_estimate.ini").string() + "'", dir);
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("U = 0.96") != std::string::npos);
  const auto j = cli("validate --json '" + (kManifests / "load_estimate.ini").string() + "'", dir);
  CHECK(nlohmann::json::parse(j.out)["load_estimate"]["gain"] == 0.96);
}

TEST_CASE("cli: exit codes distinguish manifest, data and numeric failures") {
  TempDir dir("cli-errors");
  const auto bad = dir.write("bad.ini", "[run]\nmode = federated\nseed = 1\n[data]\n"
                                        "[federation]\nsync_interval = 9\nglobal_epochs = 3\n");
  auto r = cli("validate '" + bad.string() + "'", dir);
  CHECK(r.exit_code == 2);
  r = cli("run '" + bad.string() + "'", dir);
  CHECK(r.exit_code == 2);
  CHECK(nlohmann::json::parse(r.err)["error"] == "manifest");

  const auto missing = dir.write("missing.ini", "[run]\nmode = baseline\nseed = 1\nbaselines = persistence\n"
                                                "[data]\nsource = csv\npaths = nowhere.csv\n");
  r = cli("run '" + missing.string() + "' -o '" + (dir.path / "o1").string() + "'", dir);
  CHECK(r.exit_code == 3);
  CHECK(nlohmann::json::parse(r.err)["error"] == "data");

  const auto diverging = dir.write("diverge.ini", kSmallFederated +
                                                      "[ddpg]\noptimizer = sgd\nactor_lr = 1e200\n"
                                                      "critic_lr = 1e200\n");
  r = cli("run '" + diverging.string() + "' -o '" + (dir.path / "o2").string() + "'", dir);
  CHECK(r.exit_code == 4);
  const auto err = nlohmann::json::parse(r.err);
  CHECK(err["error"] == "numeric");
  CHECK(err.contains("client"));

  r = cli("run '" + (kManifests / "baseline_persistence.ini").string() + "' -o '" +
              (dir.path / "o3").string() + "'",
          dir, "FEDDRL_WORKERS=zero");
  CHECK(r.exit_code == 2);
}

TEST_CASE("cli: output and seed overrides, identical reports for identical runs") {
  TempDir dir("cli-run");
  const auto m = dir.write("m.ini", kSmallFederated);
  const auto a = cli("run '" + m.string() + "' -o '" + (dir.path / "a").string() + "' --seed 9", dir,
                     "FEDDRL_WORKERS=2");
  const auto b = cli("run '" + m.string() + "' -o '" + (dir.path / "b").string() + "' --seed 9", dir);
  const auto c = cli("run '" + m.string() + "' -o '" + (dir.path / "c").string() + "'", dir);
  REQUIRE(a.exit_code == 0);
  REQUIRE(b.exit_code == 0);
  REQUIRE(c.exit_code == 0);
  for (const auto* file : {"journal.csv", "metrics.csv", "summary.json", "predictions/synthetic-0.csv"}) {
    INFO(file);
    CHECK(slurp(dir.path / "a" / file) == slurp(dir.path / "b" / file));
  }
  CHECK(slurp(dir.path / "a" / "metrics.csv") != slurp(dir.path / "c" / "metrics.csv"));
  CHECK(nlohmann::json::parse(slurp(dir.path / "a" / "summary.json"))["seed"] == 9);
}
