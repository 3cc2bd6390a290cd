#include "feddrl/data.hpp"

#include "feddrl/seeding.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

namespace feddrl::data {

double TimeSeries::max() const {
  if (values.empty()) throw DataError("empty series has no maximum");
  return *std::max_element(values.begin(), values.end());
}

void TimeSeries::validate(std::size_t min_length) const {
  if (values.size() < min_length) {
    throw DataError("series '" + name + "' has " + std::to_string(values.size()) +
                    " points, need at least " + std::to_string(min_length));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i]) || values[i] < 0.0) {
      throw DataError("series '" + name + "' has an invalid sample at index " + std::to_string(i));
    }
  }
  if (sampling_interval.count() <= 0) throw DataError("sampling interval must be positive");
}

namespace {

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r");
  return std::string(text.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string_view rest(line);
  while (true) {
    const auto comma = rest.find(',');
    fields.push_back(trim(rest.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return fields;
}

}  // namespace

std::int64_t parse_iso8601(const std::string& text) {
  int year = 0;
  unsigned month = 0, day = 0, hour = 0, minute = 0, second = 0;
  char separator = 0;
  int consumed = 0;
  const int matched = std::sscanf(text.c_str(), "%4d-%2u-%2u%c%2u:%2u:%2u%n", &year, &month, &day,
                                  &separator, &hour, &minute, &second, &consumed);
  if (matched != 7 || (separator != 'T' && separator != ' ')) {
    throw DataError("malformed ISO-8601 timestamp '" + text + "'");
  }
  const std::string tail = text.substr(static_cast<std::size_t>(consumed));
  if (!tail.empty() && tail != "Z") throw DataError("unsupported timestamp suffix in '" + text + "'");
  const std::chrono::year_month_day date{std::chrono::year{year}, std::chrono::month{month},
                                         std::chrono::day{day}};
  if (!date.ok() || hour > 23 || minute > 59 || second > 59) {
    throw DataError("invalid calendar time '" + text + "'");
  }
  const auto days = std::chrono::sys_days{date}.time_since_epoch();
  return std::chrono::duration_cast<std::chrono::seconds>(days).count() + hour * 3600LL +
         minute * 60LL + second;
}

std::string format_iso8601(std::int64_t unix_seconds) {
  const std::chrono::sys_seconds tp{std::chrono::seconds{unix_seconds}};
  const auto day_point = std::chrono::floor<std::chrono::days>(tp);
  const std::chrono::year_month_day date{day_point};
  const auto secs = (tp - day_point).count();
  return fmt::format("{:04d}-{:02d}-{:02d}T{:02d}:{:02d}:{:02d}Z", static_cast<int>(date.year()),
                     static_cast<unsigned>(date.month()), static_cast<unsigned>(date.day()),
                     secs / 3600, (secs / 60) % 60, secs % 60);
}

TimeSeries load_csv(const std::filesystem::path& path, const CsvColumns& columns) {
  std::ifstream in(path);
  if (!in) {
    throw CsvError(CsvErrorKind::missing_file, 0, "cannot open '" + path.string() + "'");
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw CsvError(CsvErrorKind::missing_column, 1, "'" + path.string() + "' has no header");
  }
  const auto header = split_fields(line);
  const auto find_column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) {
      throw CsvError(CsvErrorKind::missing_column, 1,
                     "'" + path.string() + "' lacks column '" + name + "'");
    }
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t time_col = find_column(columns.timestamp);
  const std::size_t power_col = find_column(columns.power);

  TimeSeries series;
  series.name = path.stem().string();
  std::vector<std::int64_t> stamps;
  std::size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw CsvError(CsvErrorKind::ragged_row, line_number,
                     fmt::format("row {} has {} fields, header has {}", line_number, fields.size(),
                                 header.size()));
    }
    std::int64_t stamp = 0;
    try {
      stamp = parse_iso8601(fields[time_col]);
    } catch (const DataError& e) {
      throw CsvError(CsvErrorKind::bad_value, line_number,
                     fmt::format("row {}: {}", line_number, e.what()));
    }
    const auto& cell = fields[power_col];
    double value = 0.0;
    const auto [end, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), value);
    if (ec != std::errc{} || end != cell.data() + cell.size() || !std::isfinite(value) ||
        value < 0.0) {
      throw CsvError(CsvErrorKind::bad_value, line_number,
                     fmt::format("row {}: invalid power value '{}'", line_number, cell));
    }
    if (!stamps.empty()) {
      const auto delta = stamp - stamps.back();
      if (delta <= 0) {
        throw CsvError(CsvErrorKind::non_monotone, line_number,
                       fmt::format("row {}: timestamp does not increase", line_number));
      }
      if (stamps.size() >= 2 && delta != stamps[1] - stamps[0]) {
        throw CsvError(CsvErrorKind::gap, line_number,
                       fmt::format("row {}: sampling gap of {} s (expected {} s)", line_number,
                                   delta, stamps[1] - stamps[0]));
      }
    }
    stamps.push_back(stamp);
    series.values.push_back(value);
  }
  if (!stamps.empty()) series.origin_unix_seconds = stamps.front();
  if (stamps.size() >= 2) series.sampling_interval = std::chrono::seconds{stamps[1] - stamps[0]};
  return series;
}

void write_csv(const TimeSeries& series, const std::filesystem::path& path,
               const CsvColumns& columns) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << columns.timestamp << ',' << columns.power << '\n';
  const auto step = series.sampling_interval.count();
  for (std::size_t i = 0; i < series.values.size(); ++i) {
    out << format_iso8601(series.origin_unix_seconds + static_cast<std::int64_t>(i) * step) << ','
        << fmt::format("{}", series.values[i]) << '\n';
  }
}

Split split(const TimeSeries& series, double ratio, std::size_t lag_count) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw DomainError("split ratio must lie in (0,1)");
  const std::size_t n = series.values.size();
  const auto train_length =
      static_cast<std::size_t>(std::floor(static_cast<double>(n) * ratio + 1e-9));
  const std::size_t minimum = lag_count + 2;
  if (train_length < minimum || n - train_length < minimum) {
    throw RangeError(fmt::format("series of length {} is too short to split at {} (each part needs {})",
                                 n, ratio, minimum));
  }
  Split parts;
  parts.train = series;
  parts.train.values.assign(series.values.begin(),
                            series.values.begin() + static_cast<std::ptrdiff_t>(train_length));
  parts.train.name = series.name + "/train";
  parts.test = series;
  parts.test.values.assign(series.values.begin() + static_cast<std::ptrdiff_t>(train_length),
                           series.values.end());
  parts.test.origin_unix_seconds =
      series.origin_unix_seconds +
      static_cast<std::int64_t>(train_length) * series.sampling_interval.count();
  parts.test.name = series.name + "/test";
  return parts;
}

double EvalSeries::divisor() const {
  if (actual.size() != predicted.size()) throw ShapeError("actual and predicted lengths differ");
  if (actual.empty()) throw RangeError("evaluation window is empty");
  const double scale =
      normalization_max ? *normalization_max : *std::max_element(actual.begin(), actual.end());
  if (!(scale > 0.0)) throw DataError("normalization maximum must be positive");
  return scale;
}

double nmae(const EvalSeries& eval) {
  const double scale = eval.divisor();
  double sum = 0.0;
  for (std::size_t i = 0; i < eval.actual.size(); ++i) {
    sum += std::abs(eval.actual[i] / scale - eval.predicted[i] / scale);
  }
  return sum / static_cast<double>(eval.actual.size());
}

double nrmse(const EvalSeries& eval) {
  const double scale = eval.divisor();
  double sum = 0.0;
  for (std::size_t i = 0; i < eval.actual.size(); ++i) {
    const double e = eval.actual[i] / scale - eval.predicted[i] / scale;
    sum += e * e;
  }
  return std::sqrt(sum / static_cast<double>(eval.actual.size()));
}

bool equivalence_check(double psi_c, double psi_f, double sigma) {
  if (!(sigma > 0.0)) throw DomainError("sigma must be positive");
  return std::abs(psi_c - psi_f) < sigma;
}

TimeSeries generate_synthetic(const SyntheticConfig& config) {
  if (config.length < 500) throw DomainError("synthetic series length must be at least 500");
  if (!(config.capacity > 0.0) || !(config.diurnal_period > 0.0) || !(config.short_period > 0.0) ||
      !(config.noise_level >= 0.0) || !(std::abs(config.noise_ar) < 1.0)) {
    throw DomainError("invalid synthetic series configuration");
  }
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> innovation(0.0, 1.0);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  TimeSeries series;
  series.name = config.name;
  series.values.reserve(config.length);
  double noise = 0.0;
  for (std::size_t t = 0; t < config.length; ++t) {
    const double time = static_cast<double>(t);
    double level = config.offset +
                   config.diurnal_amplitude *
                       std::sin(two_pi * time / config.diurnal_period + config.diurnal_phase) +
                   config.short_amplitude *
                       std::sin(two_pi * time / config.short_period + config.short_phase);
    if (config.noise_level > 0.0) {
      noise = config.noise_ar * noise + config.noise_level * innovation(rng);
      level += noise;
    }
    series.values.push_back(config.capacity * std::max(0.0, level));
  }
  return series;
}

SyntheticConfig client_synthetic_config(const SyntheticConfig& base, std::size_t client_index) {
  SyntheticConfig config = base;
  config.seed = derive_seed(base.seed, {0x5e71e5ULL, client_index});
  std::mt19937_64 rng(derive_seed(base.seed, {0x9a5eULL, client_index}));
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  config.diurnal_phase = phase(rng);
  config.short_phase = phase(rng);
  config.name = fmt::format("{}-{}", base.name, client_index);
  return config;
}

double lag1_autocorrelation(std::span<const double> values) {
  if (values.size() < 3) throw RangeError("autocorrelation needs at least three points");
  double mean = 0.0;
  for (const double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double numerator = 0.0;
  double denominator = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double d = values[i] - mean;
    denominator += d * d;
    if (i + 1 < values.size()) numerator += d * (values[i + 1] - mean);
  }
  if (denominator == 0.0) throw DataError("autocorrelation of a constant series is undefined");
  return numerator / denominator;
}

}  // namespace feddrl::data
