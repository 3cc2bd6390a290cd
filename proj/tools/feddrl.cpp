// feddrl: run or validate an experiment manifest.
//
// Exit codes: 0 success, 1 unexpected failure, 2 manifest error,
// 3 data error, 4 numeric divergence. Failures also print one JSON object
// on stderr: {"error": kind, "message": text, "exit_code": n}.

#include "feddrl/experiment.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <iostream>
#include <optional>

namespace {

using namespace feddrl;

enum ExitCode { kOk = 0, kFailure = 1, kManifest = 2, kData = 3, kNumeric = 4 };

int report_error(std::string_view kind, std::string_view message, int code) {
  nlohmann::ordered_json error{{"error", kind}, {"message", message}, {"exit_code", code}};
  std::cerr << error.dump() << '\n';
  return code;
}

// Maps the exception in flight to an exit code.
int handle_exception() {
  try {
    throw;
  } catch (const experiment::ManifestError& e) {
    return report_error("manifest", e.what(), kManifest);
  } catch (const ClientDivergedError& e) {
    nlohmann::ordered_json error{{"error", "numeric"},
                                 {"message", e.what()},
                                 {"client", e.client_id()},
                                 {"epoch", e.epoch()},
                                 {"exit_code", kNumeric}};
    std::cerr << error.dump() << '\n';
    return kNumeric;
  } catch (const NumericError& e) {
    return report_error("numeric", e.what(), kNumeric);
  } catch (const DataError& e) {
    return report_error("data", e.what(), kData);
  } catch (const RangeError& e) {
    return report_error("data", e.what(), kData);
  } catch (const std::exception& e) {
    return report_error("failure", e.what(), kFailure);
  }
}

std::optional<std::size_t> workers_from_env() {
  const char* text = std::getenv("FEDDRL_WORKERS");
  if (text == nullptr || *text == '\0') return std::nullopt;
  std::size_t value = 0;
  const std::string_view view(text);
  const auto [ptr, ec] = std::from_chars(view.data(), view.data() + view.size(), value);
  if (ec != std::errc{} || ptr != view.data() + view.size() || value == 0) {
    throw experiment::ManifestError(
        fmt::format("FEDDRL_WORKERS must be a positive integer, got '{}'", view));
  }
  return value;
}

int run_command(const std::string& manifest_path, const std::optional<std::string>& output,
                const std::optional<std::uint64_t>& seed) {
  auto manifest = experiment::load_manifest(manifest_path);
  if (output) manifest.output = *output;
  if (seed) {
    manifest.seed = *seed;
    manifest.fed.master_seed = *seed;
  }
  if (const auto workers = workers_from_env()) manifest.fed.workers = *workers;

  spdlog::info("running {} ({} mode, seed {})", manifest_path, experiment::to_string(manifest.mode),
               manifest.seed);
  const auto result =
      experiment::run(manifest, [](std::string_view message) { spdlog::info("{}", message); });
  for (const auto& warning : result.warnings) spdlog::warn("{}", warning);
  experiment::write_reports(result, manifest.output);

  std::vector<std::string> methods;
  for (const auto& row : result.metrics) {
    if (std::find(methods.begin(), methods.end(), row.method) == methods.end()) {
      methods.push_back(row.method);
    }
  }
  for (const auto& method : methods) {
    std::cout << fmt::format("{:<24} mean NMAE {:.5f}\n", method, result.mean_nmae(method));
  }
  if (result.equivalence) {
    const auto& eq = *result.equivalence;
    std::cout << fmt::format("equivalence |{:.5f} - {:.5f}| < {}: {}\n", eq.centralized,
                             eq.federated, eq.sigma, eq.pass ? "pass" : "fail");
  }
  std::cout << fmt::format("reports written to {}\n", manifest.output.string());
  return kOk;
}

int validate_command(const std::string& manifest_path, bool as_json) {
  const auto diag = experiment::validate_manifest(manifest_path);
  if (as_json) {
    nlohmann::ordered_json out{{"problems", diag.problems}};
    if (diag.load_estimate) {
      const auto& g = *diag.load_estimate;
      out["load_estimate"] = {{"model_bytes", diag.model_bytes},
                              {"data_bytes", diag.data_bytes},
                              {"sync_rounds", g.sync_rounds},
                              {"centralized_load", g.centralized},
                              {"federated_load", g.federated},
                              {"gain", g.gain}};
    }
    std::cout << out.dump(2) << '\n';
  } else {
    for (const auto& problem : diag.problems) std::cout << "problem: " << problem << '\n';
    if (diag.load_estimate) {
      const auto& g = *diag.load_estimate;
      std::cout << fmt::format("manifest ok\nL_C = {} bytes\nL_F = {} bytes\nU = {}\n",
                               g.centralized, g.federated, g.gain);
    }
  }
  return diag.problems.empty() ? kOk : kManifest;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated DDPG wind-power forecasting simulator"};
  app.require_subcommand(1);

  std::string manifest_path;
  std::optional<std::string> output;
  std::optional<std::uint64_t> seed;
  bool verbose = false;
  auto* run = app.add_subcommand("run", "Run a manifest and write reports");
  run->add_option("manifest", manifest_path, "Manifest file (INI)")->required();
  run->add_option("-o,--output", output, "Report directory (overrides [run] output)");
  run->add_option("-s,--seed", seed, "Master seed (overrides [run] seed)");
  run->add_flag("-v,--verbose", verbose, "Log progress to stderr");

  bool as_json = false;
  auto* validate = app.add_subcommand("validate", "Check a manifest and estimate the load gain");
  validate->add_option("manifest", manifest_path, "Manifest file (INI)")->required();
  validate->add_flag("--json", as_json, "Print diagnostics as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  auto logger = spdlog::stderr_color_mt("feddrl");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(verbose ? spdlog::level::info : spdlog::level::warn);

  try {
    if (*run) return run_command(manifest_path, output, seed);
    return validate_command(manifest_path, as_json);
  } catch (...) {
    return handle_exception();
  }
}
