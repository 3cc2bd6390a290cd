#pragma once

// Wind-power forecasting as a decision process: the state is the window of
// the j most recent normalized samples, the action is the predicted next
// sample and the reward is the negative absolute prediction error.

#include "feddrl/ddpg.hpp"
#include "feddrl/nn.hpp"

#include <random>
#include <span>
#include <vector>

namespace feddrl::env {

struct EnvConfig {
  std::size_t lag_count = 7;
  std::size_t episode_length = 48;
  double normalization_max = 1.0;  // divisor mapping MW to [0,1]

  void validate() const;
};

/// Lag window over a normalized series. Holds a view; the series must outlive it.
struct EnvState {
  std::span<const double> series;
  std::size_t cursor = 0;
  std::size_t steps_taken = 0;
  std::vector<double> observation;

  friend bool operator==(const EnvState& a, const EnvState& b) {
    return a.series.data() == b.series.data() && a.series.size() == b.series.size() &&
           a.cursor == b.cursor && a.steps_taken == b.steps_taken &&
           a.observation == b.observation;
  }
};

struct StepResult {
  double reward = 0.0;
  EnvState next;
  bool done = false;
};

std::vector<double> normalize(std::span<const double> values, double normalization_max);

/// Throws RangeError unless start_index >= j-1 and
/// start_index + episode_length + 1 <= series length.
EnvState reset(std::span<const double> series, const EnvConfig& config, std::size_t start_index);

/// Throws DomainError for an action outside [0,1].
StepResult step(const EnvState& state, const EnvConfig& config, double action);

/// Cursor positions t = first .. first+count-1; forecast targets are t+1.
struct ForecastRange {
  std::size_t first = 0;
  std::size_t count = 0;
};

/// Range whose targets are exactly series[target_begin .. size-1].
ForecastRange targets_from(std::size_t target_begin, std::size_t series_length);
void check_range(const ForecastRange& range, std::size_t series_length, std::size_t lag_count);
std::vector<double> range_actuals(std::span<const double> series, const ForecastRange& range);

/// One-step-ahead forecasts in raw units from the actor applied to raw
/// series values (normalized internally by config.normalization_max).
std::vector<double> rollout_forecast(const nn::NetworkParams& actor, std::span<const double> series,
                                     const EnvConfig& config, const ForecastRange& range);

struct EpisodeStats {
  double total_reward = 0.0;
  std::size_t steps = 0;
  double mean_reward() const { return steps == 0 ? 0.0 : total_reward / static_cast<double>(steps); }
};

/// One training episode over a random window of a normalized series: act
/// with exploration, store each transition, train after every step.
EpisodeStats run_training_episode(ddpg::DdpgAgent& agent, std::span<const double> normalized,
                                  const EnvConfig& config, std::mt19937_64& rng);

}  // namespace feddrl::env
