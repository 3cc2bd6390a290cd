#pragma once

#include "feddrl/errors.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace feddrl::data {

/// Uniformly sampled wind-power series.
struct TimeSeries {
  std::vector<double> values;
  std::chrono::seconds sampling_interval{300};
  std::int64_t origin_unix_seconds = 0;
  std::string name;

  std::size_t size() const { return values.size(); }
  double max() const;
  /// Throws DataError on a NaN/Inf/negative sample or fewer than `min_length` points.
  void validate(std::size_t min_length = 0) const;
};

enum class CsvErrorKind { missing_file, missing_column, ragged_row, bad_value, non_monotone, gap };

class CsvError : public DataError {
 public:
  CsvError(CsvErrorKind kind, std::size_t row, const std::string& message)
      : DataError(message), kind_(kind), row_(row) {}
  CsvErrorKind kind() const { return kind_; }
  /// 1-based line number in the file, 0 when not tied to a row.
  std::size_t row() const { return row_; }

 private:
  CsvErrorKind kind_;
  std::size_t row_;
};

struct CsvColumns {
  std::string timestamp = "timestamp";
  std::string power = "power";
};

/// Two required columns: ISO-8601 timestamp and power (MW); others ignored.
TimeSeries load_csv(const std::filesystem::path& path, const CsvColumns& columns = {});
void write_csv(const TimeSeries& series, const std::filesystem::path& path,
               const CsvColumns& columns = {});

std::int64_t parse_iso8601(const std::string& text);
std::string format_iso8601(std::int64_t unix_seconds);

struct Split {
  TimeSeries train;
  TimeSeries test;
};

/// Chronological split; train gets floor(ratio * n) points. Throws RangeError
/// when either part would be shorter than lag_count + 2.
Split split(const TimeSeries& series, double ratio, std::size_t lag_count = 7);

/// Actuals/predictions pair scored by NMAE and NRMSE. Both are normalized by
/// the maximum actual in the window unless `normalization_max` is set.
struct EvalSeries {
  std::vector<double> actual;
  std::vector<double> predicted;
  std::optional<double> normalization_max;

  double divisor() const;
};

double nmae(const EvalSeries& eval);
double nrmse(const EvalSeries& eval);

/// Pass iff |psi_c - psi_f| < sigma.
bool equivalence_check(double psi_c, double psi_f, double sigma);

struct SyntheticConfig {
  std::uint64_t seed = 1;
  std::size_t length = 5000;
  double capacity = 100.0;  // MW at normalized level 1
  double offset = 0.45;
  double diurnal_amplitude = 0.25;
  double diurnal_period = 288.0;  // samples: one day at 5 minutes
  double diurnal_phase = 0.0;
  double short_amplitude = 0.15;
  double short_period = 36.0;  // samples: three hours
  double short_phase = 0.0;
  double noise_level = 0.01;     // AR(1) innovation standard deviation
  double noise_ar = 0.95;        // AR(1) coefficient
  std::string name = "synthetic";
};

/// capacity * max(0, offset + diurnal + short sinusoid + AR(1) noise).
TimeSeries generate_synthetic(const SyntheticConfig& config);

/// Per-client variant of `base`: seed and both phases derived from
/// (base.seed, client_index).
SyntheticConfig client_synthetic_config(const SyntheticConfig& base, std::size_t client_index);

double lag1_autocorrelation(std::span<const double> values);

}  // namespace feddrl::data
