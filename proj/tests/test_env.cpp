#include "doctest.h"

#include "feddrl/baselines.hpp"
#include "feddrl/env.hpp"
#include "feddrl/errors.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace feddrl;
using env::EnvConfig;

namespace {

const std::vector<double> kNine{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};

EnvConfig config(std::size_t episode_length) {
  EnvConfig c;
  c.lag_count = 7;
  c.episode_length = episode_length;
  return c;
}

// relu(last lag) -> linear unit weight: copies the most recent sample.
nn::NetworkParams last_lag_copier(std::size_t lags) {
  auto params = nn::NetworkParams::zeros(std::vector<nn::LayerSpec>{
      {lags, 1, nn::Activation::relu}, {1, 1, nn::Activation::linear}});
  params.layers()[0].weights(0, static_cast<Eigen::Index>(lags - 1)) = 1.0;
  params.layers()[1].weights(0, 0) = 1.0;
  return params;
}

std::vector<double> wavy(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  std::vector<double> v(n);
  for (std::size_t t = 0; t < n; ++t) {
    v[t] = 0.5 + 0.3 * std::sin(0.1 * static_cast<double>(t)) + jitter(rng);
  }
  return v;
}

}  // namespace

TEST_CASE("reset assembles the lag window in chronological order") {
  const auto s = env::reset(kNine, config(1), 6);
  CHECK(s.cursor == 6);
  CHECK(s.observation == std::vector<double>(kNine.begin(), kNine.begin() + 7));
}

TEST_CASE("reset rejects a start before the first full window") {
  CHECK_THROWS_AS(env::reset(kNine, config(1), 5), RangeError);
}

TEST_CASE("reset rejects an episode running past the series") {
  CHECK_NOTHROW(env::reset(kNine, config(2), 6));
  CHECK_THROWS_AS(env::reset(kNine, config(3), 6), RangeError);
}

TEST_CASE("reset is deterministic") {
  CHECK(env::reset(kNine, config(1), 6) == env::reset(kNine, config(1), 6));
}

TEST_CASE("step rewards the negative absolute error") {
  const auto s = env::reset(kNine, config(2), 6);
  CHECK(env::step(s, config(2), 0.8).reward == 0.0);
  const std::vector<double> series{0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.6, 0.1};
  const auto r = env::reset(series, config(1), 6);
  CHECK(env::step(r, config(1), 0.4).reward == doctest::Approx(-0.2).epsilon(1e-15));
}

TEST_CASE("step rejects actions outside the unit interval") {
  const auto s = env::reset(kNine, config(1), 6);
  CHECK_THROWS_AS(env::step(s, config(1), 1.01), DomainError);
  CHECK_THROWS_AS(env::step(s, config(1), -0.01), DomainError);
}

TEST_CASE("consecutive windows overlap in j-1 entries") {
  const auto series = wavy(40, 1);
  auto state = env::reset(series, config(20), 10);
  for (int k = 0; k < 20; ++k) {
    const auto out = env::step(state, config(20), 0.5);
    CHECK(std::equal(state.observation.begin() + 1, state.observation.end(),
                     out.next.observation.begin()));
    CHECK(out.next.observation.back() == series[state.cursor + 1]);
    CHECK(out.done == (k == 19));
    state = out.next;
  }
}

TEST_CASE("episode total |reward| equals the total absolute forecast error") {
  const auto series = wavy(200, 2);
  const auto cfg = config(50);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t start = 30;

  std::vector<double> actions;
  double reward_sum = 0.0;
  auto state = env::reset(series, cfg, start);
  while (true) {
    actions.push_back(unit(rng));
    const auto out = env::step(state, cfg, actions.back());
    CHECK(out.reward <= 0.0);
    CHECK(out.reward >= -1.0);
    reward_sum += std::abs(out.reward);
    if (out.done) break;
    state = out.next;
  }
  REQUIRE(actions.size() == 50);
  double error = 0.0;
  for (std::size_t k = 0; k < actions.size(); ++k) error += std::abs(series[start + 1 + k] - actions[k]);
  CHECK(std::abs(reward_sum - error) < 1e-12);
}

TEST_CASE("rollout of a last-lag copier reproduces persistence exactly") {
  auto series = wavy(120, 4);
  for (auto& v : series) v *= 37.0;
  for (const double scale : {1.0, 64.0}) {
    auto cfg = config(10);
    cfg.normalization_max = scale;
    const auto range = env::targets_from(50, series.size());
    const auto predicted = env::rollout_forecast(last_lag_copier(7), series, cfg, range);
    CHECK(predicted == baselines::persistence_forecast(series, range));
    CHECK(predicted.size() == range.count);
  }
}

TEST_CASE("rollout on a constant series is constant") {
  const std::vector<double> series(30, 0.42);
  std::mt19937_64 rng(5);
  const auto actor = nn::NetworkParams::glorot_uniform(ddpg::actor_layout(7, 30), rng);
  const auto predicted = env::rollout_forecast(actor, series, config(1), {6, 20});
  REQUIRE(predicted.size() == 20);
  for (const double p : predicted) CHECK(p == predicted.front());
}

TEST_CASE("rollout is pure and checks its range") {
  const auto series = wavy(60, 6);
  std::mt19937_64 rng(7);
  const auto actor = nn::NetworkParams::glorot_uniform(ddpg::actor_layout(7, 30), rng);
  const env::ForecastRange range{6, 53};
  CHECK(env::rollout_forecast(actor, series, config(1), range) ==
        env::rollout_forecast(actor, series, config(1), range));
  CHECK_THROWS_AS(env::rollout_forecast(actor, series, config(1), {5, 10}), RangeError);
  CHECK_THROWS_AS(env::rollout_forecast(actor, series, config(1), {6, 54}), RangeError);
}

TEST_CASE("targets_from aligns predictions with the requested targets") {
  const auto range = env::targets_from(8, 20);
  CHECK(range.first == 7);
  CHECK(range.count == 12);
  std::vector<double> series(20);
  for (std::size_t i = 0; i < series.size(); ++i) series[i] = static_cast<double>(i);
  const auto actual = env::range_actuals(series, range);
  CHECK(actual.front() == 8.0);
  CHECK(actual.back() == 19.0);
}

TEST_CASE("training episode stores one transition per step") {
  ddpg::DdpgConfig dc;
  dc.minibatch_size = 8;
  dc.buffer_capacity = 100;
  ddpg::DdpgAgent agent(dc, 7, 1);
  const auto series = wavy(100, 8);
  std::mt19937_64 rng(9);
  const auto stats = env::run_training_episode(agent, series, config(24), rng);
  CHECK(stats.steps == 24);
  CHECK(agent.buffer().size() == 24);
  CHECK(stats.total_reward <= 0.0);
  CHECK(agent.export_params().all_finite());
}
