#include "feddrl/env.hpp"

#include "feddrl/errors.hpp"

#include <fmt/format.h>

#include <cmath>

namespace feddrl::env {

void EnvConfig::validate() const {
  if (lag_count < 1) throw DomainError("lag_count must be at least 1");
  if (episode_length < 1) throw DomainError("episode_length must be at least 1");
  if (!(normalization_max > 0.0)) throw DomainError("normalization_max must be positive");
}

std::vector<double> normalize(std::span<const double> values, double normalization_max) {
  if (!(normalization_max > 0.0)) throw DomainError("normalization_max must be positive");
  std::vector<double> out(values.begin(), values.end());
  for (auto& v : out) v /= normalization_max;
  return out;
}

namespace {

std::vector<double> window(std::span<const double> series, std::size_t cursor, std::size_t lags) {
  const auto first = series.begin() + static_cast<std::ptrdiff_t>(cursor + 1 - lags);
  return {first, first + static_cast<std::ptrdiff_t>(lags)};
}

}  // namespace

EnvState reset(std::span<const double> series, const EnvConfig& config, std::size_t start_index) {
  config.validate();
  if (start_index + 1 < config.lag_count) {
    throw RangeError(fmt::format("start index {} leaves fewer than {} lags", start_index,
                                 config.lag_count));
  }
  if (start_index + config.episode_length + 1 > series.size()) {
    throw RangeError(fmt::format("episode of {} steps from {} overruns a series of length {}",
                                 config.episode_length, start_index, series.size()));
  }
  return {series, start_index, 0, window(series, start_index, config.lag_count)};
}

StepResult step(const EnvState& state, const EnvConfig& config, double action) {
  if (!(action >= 0.0 && action <= 1.0)) {
    throw DomainError(fmt::format("action {} outside [0,1]", action));
  }
  if (state.cursor + 1 >= state.series.size()) throw RangeError("no true value after cursor");
  StepResult result;
  result.reward = -std::abs(state.series[state.cursor + 1] - action);
  result.next.series = state.series;
  result.next.cursor = state.cursor + 1;
  result.next.steps_taken = state.steps_taken + 1;
  result.next.observation = window(state.series, result.next.cursor, config.lag_count);
  result.done = result.next.steps_taken >= config.episode_length ||
                result.next.cursor + 1 >= state.series.size();
  return result;
}

ForecastRange targets_from(std::size_t target_begin, std::size_t series_length) {
  if (target_begin == 0 || target_begin >= series_length) {
    throw RangeError("forecast targets must start inside the series after its first point");
  }
  return {target_begin - 1, series_length - target_begin};
}

void check_range(const ForecastRange& range, std::size_t series_length, std::size_t lag_count) {
  if (range.first + 1 < lag_count || range.first + range.count + 1 > series_length) {
    throw RangeError(fmt::format("forecast range [{}, +{}) invalid for length {} with {} lags",
                                 range.first, range.count, series_length, lag_count));
  }
}

std::vector<double> range_actuals(std::span<const double> series, const ForecastRange& range) {
  check_range(range, series.size(), 1);
  const auto first = series.begin() + static_cast<std::ptrdiff_t>(range.first + 1);
  return {first, first + static_cast<std::ptrdiff_t>(range.count)};
}

std::vector<double> rollout_forecast(const nn::NetworkParams& actor, std::span<const double> series,
                                     const EnvConfig& config, const ForecastRange& range) {
  config.validate();
  check_range(range, series.size(), config.lag_count);
  if (actor.input_width() != config.lag_count || actor.output_width() != 1) {
    throw ShapeError("actor does not map a lag window to a scalar");
  }
  const auto lags = static_cast<Eigen::Index>(config.lag_count);
  Eigen::MatrixXd states(lags, static_cast<Eigen::Index>(range.count));
  for (std::size_t k = 0; k < range.count; ++k) {
    const std::size_t cursor = range.first + k;
    for (Eigen::Index i = 0; i < lags; ++i) {
      states(i, static_cast<Eigen::Index>(k)) =
          series[cursor + 1 - config.lag_count + static_cast<std::size_t>(i)] /
          config.normalization_max;
    }
  }
  const Eigen::MatrixXd out = nn::evaluate(actor, states);
  std::vector<double> predictions(range.count);
  for (std::size_t k = 0; k < range.count; ++k) {
    predictions[k] = out(0, static_cast<Eigen::Index>(k)) * config.normalization_max;
  }
  return predictions;
}

EpisodeStats run_training_episode(ddpg::DdpgAgent& agent, std::span<const double> normalized,
                                  const EnvConfig& config, std::mt19937_64& rng) {
  config.validate();
  const std::size_t lowest = config.lag_count - 1;
  if (normalized.size() < lowest + config.episode_length + 1) {
    throw DataError("series too short for one training episode");
  }
  const std::size_t highest = normalized.size() - config.episode_length - 1;
  std::uniform_int_distribution<std::size_t> pick(lowest, highest);

  EnvState state = reset(normalized, config, pick(rng));
  agent.begin_episode();
  EpisodeStats stats;
  while (true) {
    const double action = agent.act(state.observation, true);
    StepResult outcome = step(state, config, action);
    agent.remember({state.observation, action, outcome.reward, outcome.next.observation});
    agent.train_step();
    stats.total_reward += outcome.reward;
    ++stats.steps;
    if (outcome.done) break;
    state = std::move(outcome.next);
  }
  return stats;
}

}  // namespace feddrl::env
