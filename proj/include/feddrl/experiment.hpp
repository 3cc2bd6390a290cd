#pragma once

// Manifest-driven experiments: load or synthesize client datasets, run the
// federated and centralized pipelines and the baselines, and write reports.

#include "feddrl/baselines.hpp"
#include "feddrl/data.hpp"
#include "feddrl/ddpg.hpp"
#include "feddrl/env.hpp"
#include "feddrl/errors.hpp"
#include "feddrl/fed.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace feddrl::experiment {

class ManifestError : public Error {
 public:
  using Error::Error;
};

enum class Mode { federated, centralized, baseline, robustness_grid };
std::string_view to_string(Mode mode);

enum class DataSource { synthetic, csv };

struct DataSpec {
  DataSource source = DataSource::synthetic;
  std::size_t clients = 4;
  double train_ratio = 0.8;
  data::SyntheticConfig synthetic;       // base config; seed filled from the run seed if unset
  std::optional<std::uint64_t> synthetic_seed;
  std::vector<std::filesystem::path> paths;
  data::CsvColumns columns;
  std::vector<std::uint32_t> hops;       // empty: one hop each
  // Warm-start series: "synthetic", "none", or a CSV path.
  std::string public_series = "synthetic";
};

struct GridSpec {
  std::vector<std::size_t> sync_intervals{50, 100, 200};
  std::vector<double> client_ratios{0.5, 1.0};
};

struct LoadSpec {
  std::optional<std::uint64_t> model_bytes;  // I; default: serialized agent size
  std::optional<std::uint64_t> data_bytes;   // D_n per client; default: 16 bytes per sample
  // Empty: those of 50, 100, 200 not above W, plus the run's own K.
  std::vector<std::size_t> sync_intervals;
};

/// The K values tabulated in the load-gain report.
std::vector<std::size_t> load_sync_intervals(const LoadSpec& load, const fed::FedConfig& config);

struct Manifest {
  Mode mode = Mode::federated;
  std::filesystem::path output = "feddrl-out";
  std::uint64_t seed = 1;
  double sigma = 0.02;
  bool with_centralized = false;
  std::vector<std::string> baselines;  // persistence, arima, bpnn
  std::size_t warm_start_episodes = 200;

  DataSpec data;
  fed::FedConfig fed;
  ddpg::DdpgConfig ddpg;
  env::EnvConfig env;
  baselines::ArimaConfig arima;
  baselines::BpnnConfig bpnn;
  GridSpec grid;
  LoadSpec load;
};

/// Parses an INI manifest. Relative data paths resolve against the
/// manifest's directory. Throws ManifestError listing every problem found.
Manifest load_manifest(const std::filesystem::path& path);
/// Cross-field checks; an empty list means the manifest is runnable.
std::vector<std::string> check_manifest(const Manifest& manifest);

struct Diagnostics {
  std::vector<std::string> problems;
  std::optional<fed::LoadGain> load_estimate;
  std::uint64_t model_bytes = 0;
  std::vector<std::uint64_t> data_bytes;  // per client
};
/// Schema and cross-field problems plus a dry-run load estimate; never throws
/// and never trains.
Diagnostics validate_manifest(const std::filesystem::path& path);

/// Client datasets and the optional public warm-start series.
struct Inputs {
  std::vector<fed::Dataset> datasets;
  std::optional<data::TimeSeries> public_series;
};
Inputs prepare_inputs(const Manifest& manifest);

struct MethodPredictions {
  std::string method;
  std::vector<double> values;
};

struct ClientPredictions {
  std::string client;
  std::int64_t first_target_unix_seconds = 0;
  std::int64_t step_seconds = 300;
  std::vector<double> actual;
  std::vector<MethodPredictions> methods;
};

struct MetricRow {
  std::string method;
  std::string client;
  double nmae = 0.0;
  double nrmse = 0.0;
};

struct GridCell {
  std::size_t sync_interval = 0;
  double client_ratio = 0.0;
  fed::FedRunState state;
  double final_nmae = 0.0;
  double final_quarter_std = 0.0;
  double worst_initial = 0.0;
  bool converged = false;
};

struct Equivalence {
  double centralized = 0.0;
  double federated = 0.0;
  double sigma = 0.0;
  bool pass = false;
};

struct Result {
  Manifest manifest;
  std::optional<fed::FedRunState> federated_state;
  std::vector<double> centralized_trace;
  std::vector<ClientPredictions> predictions;
  std::vector<MetricRow> metrics;
  std::vector<std::pair<std::size_t, fed::LoadGain>> load_gain;
  std::vector<GridCell> grid;
  std::optional<Equivalence> equivalence;
  std::vector<std::string> warnings;

  /// Mean NMAE over clients for `method`; throws StateError if absent.
  double mean_nmae(std::string_view method) const;
};

using Progress = std::function<void(std::string_view)>;

Result run(const Manifest& manifest, const Progress& progress = {});
/// Writes journal.csv, predictions/, metrics.csv, load_gain.csv,
/// summary.json and, for grids, grid/ plus grid_comparison.csv.
void write_reports(const Result& result, const std::filesystem::path& directory);

/// Convergence of a per-epoch reward trace: the standard deviation over the
/// final quarter is below `fraction` of |worst value in the first quarter|.
struct Convergence {
  double final_quarter_std = 0.0;
  double worst_initial = 0.0;
  bool converged = false;
};
Convergence assess_convergence(std::span<const double> trace, double fraction = 0.25);

/// Parses "40000", "40KB", "4MB", "1.5GB" (decimal units).
std::uint64_t parse_bytes(std::string_view text);

}  // namespace feddrl::experiment
