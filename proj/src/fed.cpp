#include "feddrl/fed.hpp"

#include "feddrl/baselines.hpp"
#include "feddrl/errors.hpp"
#include "feddrl/seeding.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

namespace feddrl::fed {

void FedConfig::validate() const {
  if (num_clients == 0) throw DomainError("num_clients must be positive");
  if (!(client_ratio > 0.0 && client_ratio <= 1.0)) {
    throw DomainError("client_ratio must lie in (0,1]");
  }
  if (sync_interval == 0) throw DomainError("sync_interval must be positive");
  if (global_epochs == 0) throw DomainError("global_epochs must be positive");
  if (local_episodes == 0) throw DomainError("local_episodes must be positive");
  if (sync_interval > global_epochs) {
    throw DomainError("sync_interval K must not exceed global_epochs W");
  }
}

std::size_t FedConfig::clients_per_epoch() const {
  const double raw = client_ratio * static_cast<double>(num_clients);
  const auto count = static_cast<std::size_t>(std::ceil(raw - 1e-9));
  return std::clamp<std::size_t>(count, 1, num_clients);
}

std::size_t FedConfig::sync_rounds() const { return global_epochs / sync_interval; }

std::vector<std::size_t> select_clients(const FedConfig& config, std::size_t epoch) {
  std::vector<std::size_t> order(config.num_clients);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t count = config.clients_per_epoch();
  if (count < config.num_clients) {
    std::mt19937_64 rng(derive_seed(config.master_seed, {4, epoch}));
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, config.num_clients - 1);
      std::swap(order[i], order[pick(rng)]);
    }
    order.resize(count);
    std::sort(order.begin(), order.end());
  }
  return order;
}

ParamPayload pack(const ddpg::AgentParams& params) {
  return {ddpg::serialize_agent_params(params)};
}

ddpg::AgentParams unpack(const ParamPayload& payload) {
  return ddpg::deserialize_agent_params(payload.bytes);
}

ddpg::AgentParams aggregate(std::span<const ddpg::AgentParams> uploads) {
  if (uploads.empty()) throw ProtocolError("aggregation needs at least one upload");
  std::vector<nn::NetworkParams> actors, actor_targets, critics, critic_targets;
  for (const auto& upload : uploads) {
    if (!upload.compatible_with(uploads.front())) {
      throw ProtocolError("uploaded parameter sets have mismatched shapes");
    }
    actors.push_back(upload.actor);
    actor_targets.push_back(upload.actor_target);
    critics.push_back(upload.critic);
    critic_targets.push_back(upload.critic_target);
  }
  return {nn::average_params(actors), nn::average_params(actor_targets),
          nn::average_params(critics), nn::average_params(critic_targets)};
}

Server::Server(ddpg::AgentParams initial) : global_(std::move(initial)) {}

void Server::aggregate(std::span<const ParamPayload> uploads) {
  std::vector<ddpg::AgentParams> sets;
  sets.reserve(uploads.size());
  for (const auto& payload : uploads) sets.push_back(unpack(payload));
  auto mean = fed::aggregate(sets);
  if (!mean.compatible_with(global_)) {
    throw ProtocolError("uploads do not match the global model's shapes");
  }
  global_ = std::move(mean);
}

ParamPayload Server::broadcast() const { return pack(global_); }

ParticipantSeeds participant_seeds(std::uint64_t master_seed, std::size_t client_index) {
  return {derive_seed(master_seed, {2, client_index}), derive_seed(master_seed, {3, client_index})};
}

std::uint64_t global_init_seed(std::uint64_t master_seed) { return derive_seed(master_seed, {1}); }

std::uint64_t Dataset::data_bytes() const { return 16ULL * series.values.size(); }

double Dataset::train_max() const {
  if (train_length == 0 || train_length > series.values.size()) {
    throw RangeError("dataset train length out of range");
  }
  const auto end = series.values.begin() + static_cast<std::ptrdiff_t>(train_length);
  return *std::max_element(series.values.begin(), end);
}

env::EnvConfig env_for(const Dataset& dataset, const env::EnvConfig& base) {
  env::EnvConfig config = base;
  config.normalization_max = dataset.train_max();
  if (!(config.normalization_max > 0.0)) {
    throw DataError("training series '" + dataset.series.name + "' is all zero");
  }
  return config;
}

std::vector<double> normalized_train(const Dataset& dataset, const env::EnvConfig& env_config) {
  return env::normalize(
      std::span<const double>(dataset.series.values).first(dataset.train_length),
      env_config.normalization_max);
}

namespace {

env::ForecastRange test_range(const Dataset& dataset) {
  return env::targets_from(dataset.train_length, dataset.series.values.size());
}

}  // namespace

Forecast forecast_test(const nn::NetworkParams& actor, const Dataset& dataset,
                       const env::EnvConfig& env_config) {
  const auto range = test_range(dataset);
  return {env::range_actuals(dataset.series.values, range),
          env::rollout_forecast(actor, dataset.series.values, env_config, range)};
}

Forecast persistence_test(const Dataset& dataset) {
  const auto range = test_range(dataset);
  return {env::range_actuals(dataset.series.values, range),
          baselines::persistence_forecast(dataset.series.values, range)};
}

ClientScore score(const std::string& name, const Forecast& forecast) {
  const data::EvalSeries eval{forecast.actual, forecast.predicted, std::nullopt};
  return {name, data::nmae(eval), data::nrmse(eval)};
}

Client::Client(std::size_t index, Dataset dataset, const env::EnvConfig& env_config,
               const ddpg::DdpgConfig& ddpg_config, ParticipantSeeds seeds)
    : index_(index),
      dataset_(std::move(dataset)),
      env_(env_for(dataset_, env_config)),
      normalized_train_(normalized_train(dataset_, env_)),
      agent_(ddpg_config, env_config.lag_count, seeds.agent),
      episode_rng_(seeds.episodes) {
  dataset_.series.validate(env_.lag_count + 2);
  if (dataset_.hops == 0) throw DomainError("hop count must be positive");
}

std::vector<double> Client::train_local(std::size_t episodes) {
  std::vector<double> rewards;
  rewards.reserve(episodes);
  for (std::size_t m = 0; m < episodes; ++m) {
    rewards.push_back(
        env::run_training_episode(agent_, normalized_train_, env_, episode_rng_).mean_reward());
  }
  return rewards;
}

ParamPayload Client::upload() const { return pack(agent_.export_params()); }

void Client::receive(const ParamPayload& payload) { agent_.import_params(unpack(payload)); }

Forecast Client::forecast(const nn::NetworkParams& actor) const {
  return forecast_test(actor, dataset_, env_);
}

ClientScore Client::evaluate(const nn::NetworkParams& actor) const {
  return score(name(), forecast(actor));
}

ClientScore Client::evaluate_persistence() const {
  return score(name(), persistence_test(dataset_));
}

ddpg::DdpgAgent init_global(const data::TimeSeries& public_series, const env::EnvConfig& env_config,
                            const ddpg::DdpgConfig& ddpg_config, std::uint64_t master_seed,
                            std::size_t warm_start_episodes) {
  ddpg::DdpgAgent agent(ddpg_config, env_config.lag_count, global_init_seed(master_seed));
  if (public_series.values.size() < env_config.lag_count + env_config.episode_length + 1) {
    throw DataError("public series is too short for one episode");
  }
  public_series.validate();
  if (warm_start_episodes == 0) return agent;
  env::EnvConfig config = env_config;
  config.normalization_max = public_series.max();
  if (!(config.normalization_max > 0.0)) throw DataError("public series is all zero");
  const auto normalized = env::normalize(public_series.values, config.normalization_max);
  std::mt19937_64 rng(derive_seed(master_seed, {5}));
  for (std::size_t m = 0; m < warm_start_episodes; ++m) {
    env::run_training_episode(agent, normalized, config, rng);
  }
  return agent;
}

std::vector<double> FedRunState::reward_trace() const {
  std::vector<double> trace;
  trace.reserve(journal.size());
  for (const auto& record : journal) trace.push_back(record.mean_reward);
  return trace;
}

double MetricsReport::mean_nmae() const {
  if (clients.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& c : clients) sum += c.nmae;
  return sum / static_cast<double>(clients.size());
}

double MetricsReport::mean_nrmse() const {
  if (clients.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& c : clients) sum += c.nrmse;
  return sum / static_cast<double>(clients.size());
}

namespace {

std::vector<std::vector<double>> train_selected(std::vector<Client>& clients,
                                                const std::vector<std::size_t>& selected,
                                                std::size_t episodes, std::size_t workers,
                                                std::size_t epoch) {
  std::vector<std::vector<double>> rewards(selected.size());
  std::vector<std::exception_ptr> failures(selected.size());
  auto train_one = [&](std::size_t slot) {
    try {
      rewards[slot] = clients[selected[slot]].train_local(episodes);
    } catch (...) {
      failures[slot] = std::current_exception();
    }
  };
  const std::size_t pool = std::max<std::size_t>(1, std::min(workers, selected.size()));
  if (pool == 1) {
    for (std::size_t slot = 0; slot < selected.size(); ++slot) train_one(slot);
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(pool);
    for (std::size_t w = 0; w < pool; ++w) {
      threads.emplace_back([&, w] {
        for (std::size_t slot = w; slot < selected.size(); slot += pool) train_one(slot);
      });
    }
  }
  for (std::size_t slot = 0; slot < selected.size(); ++slot) {
    const std::size_t id = selected[slot];
    if (failures[slot]) {
      try {
        std::rethrow_exception(failures[slot]);
      } catch (const NumericError&) {
        throw ClientDivergedError(id, epoch);
      }
    }
    if (!clients[id].agent().export_params().all_finite()) throw ClientDivergedError(id, epoch);
  }
  return rewards;
}

double mean_of(const std::vector<std::vector<double>>& groups) {
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& g : groups) {
    for (const double v : g) {
      sum += v;
      ++count;
    }
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double mean_of(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (const double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

}  // namespace

FederatedResult run_federated(std::vector<Client>& clients, const FedConfig& config,
                              const ddpg::AgentParams& initial_global,
                              const TrafficObserver& observer) {
  config.validate();
  if (clients.size() != config.num_clients) {
    throw ProtocolError(fmt::format("config declares {} clients, {} supplied", config.num_clients,
                                    clients.size()));
  }
  for (const auto& client : clients) {
    if (!client.agent().export_params().compatible_with(initial_global)) {
      throw ProtocolError("client " + client.name() + " is not shape-compatible with the global model");
    }
  }

  Server server(initial_global);
  const ParamPayload initial = server.broadcast();
  for (auto& client : clients) {
    if (observer) observer(Direction::initial, client.index(), initial);
    client.receive(initial);
  }

  FederatedResult result;
  auto& state = result.state;
  state.client_rewards.resize(clients.size());
  for (std::size_t epoch = 1; epoch <= config.global_epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.selected = select_clients(config, epoch);
    const auto rewards =
        train_selected(clients, record.selected, config.local_episodes, config.workers, epoch);
    for (std::size_t slot = 0; slot < record.selected.size(); ++slot) {
      state.client_rewards[record.selected[slot]].push_back(mean_of(rewards[slot]));
    }
    record.mean_reward = mean_of(rewards);

    if (epoch % config.sync_interval == 0) {
      std::vector<ParamPayload> uploads;
      uploads.reserve(record.selected.size());
      for (const std::size_t id : record.selected) {
        uploads.push_back(clients[id].upload());
        if (observer) observer(Direction::upload, id, uploads.back());
        state.uploaded_bytes += uploads.back().bytes.size();
      }
      server.aggregate(uploads);
      const ParamPayload update = server.broadcast();
      for (auto& client : clients) {
        if (observer) observer(Direction::download, client.index(), update);
        state.downloaded_bytes += update.bytes.size();
        client.receive(update);
      }
      record.synced = true;
      ++state.sync_events;
    }
    record.uploaded_bytes = state.uploaded_bytes;
    record.downloaded_bytes = state.downloaded_bytes;
    state.journal.push_back(std::move(record));
    state.epoch = epoch;
  }

  result.global = server.global();
  result.metrics.method = "federated";
  result.metrics.reward_trace = state.reward_trace();
  for (const auto& client : clients) {
    result.metrics.clients.push_back(client.evaluate(result.global.actor));
  }
  return result;
}

std::vector<Client> make_clients(const std::vector<Dataset>& datasets,
                                 const env::EnvConfig& env_config,
                                 const ddpg::DdpgConfig& ddpg_config, std::uint64_t master_seed) {
  std::vector<Client> clients;
  clients.reserve(datasets.size());
  for (std::size_t n = 0; n < datasets.size(); ++n) {
    clients.emplace_back(n, datasets[n], env_config, ddpg_config,
                         participant_seeds(master_seed, n));
  }
  return clients;
}

CentralizedResult run_centralized(const std::vector<Dataset>& datasets,
                                  const env::EnvConfig& env_config,
                                  const ddpg::DdpgConfig& ddpg_config, const FedConfig& config,
                                  const ddpg::AgentParams& initial_global) {
  if (datasets.empty()) throw DataError("centralized training needs at least one dataset");
  const auto seeds = participant_seeds(config.master_seed, 0);
  ddpg::DdpgAgent agent(ddpg_config, env_config.lag_count, seeds.agent);
  agent.import_params(initial_global);
  std::mt19937_64 episode_rng(seeds.episodes);

  std::vector<env::EnvConfig> envs;
  std::vector<std::vector<double>> pooled;
  for (const auto& dataset : datasets) {
    envs.push_back(env_for(dataset, env_config));
    pooled.push_back(normalized_train(dataset, envs.back()));
  }

  CentralizedResult result;
  for (std::size_t epoch = 1; epoch <= config.global_epochs; ++epoch) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t n = 0; n < datasets.size(); ++n) {
      for (std::size_t m = 0; m < config.local_episodes; ++m) {
        sum += env::run_training_episode(agent, pooled[n], envs[n], episode_rng).mean_reward();
        ++count;
      }
    }
    if (!agent.export_params().all_finite()) {
      throw NumericError(fmt::format("centralized agent diverged at epoch {}", epoch));
    }
    result.reward_trace.push_back(sum / static_cast<double>(count));
  }
  result.params = agent.export_params();
  result.metrics.method = "centralized";
  result.metrics.reward_trace = result.reward_trace;
  for (std::size_t n = 0; n < datasets.size(); ++n) {
    result.metrics.clients.push_back(
        score(datasets[n].series.name, forecast_test(result.params.actor, datasets[n], envs[n])));
  }
  return result;
}

LoadGain compute_load_gain(const LoadModel& model, const FedConfig& config) {
  config.validate();
  if (model.data_bytes.size() != config.num_clients || model.hops.size() != config.num_clients) {
    throw ProtocolError("load model must list data size and hops for every client");
  }
  if (model.model_bytes == 0) throw DomainError("model size I must be positive");
  LoadGain gain;
  for (std::size_t n = 0; n < config.num_clients; ++n) {
    gain.centralized += static_cast<double>(model.data_bytes[n]) * model.hops[n];
  }
  if (gain.centralized == 0.0) throw DomainError("centralized load L_C is zero");

  double all_hops = 0.0;
  for (const auto h : model.hops) all_hops += h;
  double hop_sum = 0.0;
  for (std::size_t epoch = config.sync_interval; epoch <= config.global_epochs;
       epoch += config.sync_interval) {
    for (const std::size_t id : select_clients(config, epoch)) hop_sum += model.hops[id];
    if (config.count_download) hop_sum += all_hops;
    ++gain.sync_rounds;
  }
  gain.federated = static_cast<double>(model.model_bytes) * hop_sum;
  gain.gain = 1.0 - gain.federated / gain.centralized;
  return gain;
}

LoadModel load_model_for(const std::vector<Client>& clients) {
  LoadModel model;
  for (const auto& client : clients) {
    model.data_bytes.push_back(client.data_bytes());
    model.hops.push_back(client.hops());
    model.model_bytes = client.upload().bytes.size();
  }
  return model;
}

std::uint64_t agent_payload_bytes(const ddpg::DdpgConfig& config, std::size_t lag_count) {
  const auto actor = ddpg::actor_layout(lag_count, config.actor_hidden);
  const auto critic = ddpg::critic_layout(lag_count, config.critic_hidden);
  return 2 * (nn::serialized_size(actor) + nn::serialized_size(critic));
}

}  // namespace feddrl::fed
