#pragma once

// Federated training of DDPG forecasters. Clients own their series and
// train locally; the server only ever sees serialized parameter payloads.

#include "feddrl/data.hpp"
#include "feddrl/ddpg.hpp"
#include "feddrl/env.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace feddrl::fed {

struct FedConfig {
  std::size_t num_clients = 1;       // N
  double client_ratio = 1.0;         // E
  std::size_t sync_interval = 100;   // K
  std::size_t global_epochs = 200;   // W
  std::size_t local_episodes = 2;    // M
  std::uint64_t master_seed = 1;
  bool count_download = true;
  std::size_t workers = 1;           // client threads between sync points

  void validate() const;
  std::size_t clients_per_epoch() const;  // ceil(E * N)
  std::size_t sync_rounds() const;        // floor(W / K)
};

/// Uniform sampling without replacement, reproducible from (master_seed,
/// epoch). Returned indices are ascending.
std::vector<std::size_t> select_clients(const FedConfig& config, std::size_t epoch);

/// Serialized four-network parameter set; the only thing that crosses the
/// client/server boundary.
struct ParamPayload {
  std::vector<std::uint8_t> bytes;
};

ParamPayload pack(const ddpg::AgentParams& params);
ddpg::AgentParams unpack(const ParamPayload& payload);

/// Each network averaged independently over `uploads` in the given order.
ddpg::AgentParams aggregate(std::span<const ddpg::AgentParams> uploads);

class Server {
 public:
  explicit Server(ddpg::AgentParams initial);

  /// Replaces the global model with the FedAvg mean of the uploads.
  /// Throws ProtocolError on an empty list or mismatched shapes.
  void aggregate(std::span<const ParamPayload> uploads);
  ParamPayload broadcast() const;
  const ddpg::AgentParams& global() const { return global_; }

 private:
  ddpg::AgentParams global_;
};

struct ClientScore {
  std::string client;
  double nmae = 0.0;
  double nrmse = 0.0;
};

struct Forecast {
  std::vector<double> actual;
  std::vector<double> predicted;
};

/// Seeds used by one training participant.
struct ParticipantSeeds {
  std::uint64_t agent;
  std::uint64_t episodes;
};
ParticipantSeeds participant_seeds(std::uint64_t master_seed, std::size_t client_index);
std::uint64_t global_init_seed(std::uint64_t master_seed);

/// One wind farm's private record: the first `train_length` points train
/// the model and define its normalization maximum, the rest is held out.
struct Dataset {
  data::TimeSeries series;
  std::size_t train_length = 0;
  std::uint32_t hops = 1;

  /// D_n: 16 bytes (timestamp and value) per raw sample.
  std::uint64_t data_bytes() const;
  double train_max() const;
};

/// Env config for `dataset`: `base` with the training-set maximum as divisor.
env::EnvConfig env_for(const Dataset& dataset, const env::EnvConfig& base);
std::vector<double> normalized_train(const Dataset& dataset, const env::EnvConfig& env_config);

/// Forecasts whose targets are the held-out samples.
Forecast forecast_test(const nn::NetworkParams& actor, const Dataset& dataset,
                       const env::EnvConfig& env_config);
Forecast persistence_test(const Dataset& dataset);
/// NMAE/NRMSE with the held-out window's own maximum as divisor.
ClientScore score(const std::string& name, const Forecast& forecast);

/// A wind farm. The series is private: no member returns raw samples.
class Client {
 public:
  Client(std::size_t index, Dataset dataset, const env::EnvConfig& env_config,
         const ddpg::DdpgConfig& ddpg_config, ParticipantSeeds seeds);

  std::size_t index() const { return index_; }
  const std::string& name() const { return dataset_.series.name; }
  std::uint32_t hops() const { return dataset_.hops; }
  std::uint64_t data_bytes() const { return dataset_.data_bytes(); }

  /// Runs `episodes` training episodes; returns each episode's mean reward.
  std::vector<double> train_local(std::size_t episodes);
  ParamPayload upload() const;
  void receive(const ParamPayload& payload);

  /// Scores `actor` on this client's held-out window.
  ClientScore evaluate(const nn::NetworkParams& actor) const;
  Forecast forecast(const nn::NetworkParams& actor) const;
  ClientScore evaluate_persistence() const;

  const ddpg::DdpgAgent& agent() const { return agent_; }
  const env::EnvConfig& env_config() const { return env_; }

 private:
  std::size_t index_;
  Dataset dataset_;
  env::EnvConfig env_;
  std::vector<double> normalized_train_;
  ddpg::DdpgAgent agent_;
  std::mt19937_64 episode_rng_;
};

/// Global agent seeded from the master seed, optionally warm-started for
/// `warm_start_episodes` episodes on a public series. Throws DataError when
/// the public series cannot host one episode.
ddpg::DdpgAgent init_global(const data::TimeSeries& public_series, const env::EnvConfig& env_config,
                            const ddpg::DdpgConfig& ddpg_config, std::uint64_t master_seed,
                            std::size_t warm_start_episodes);

enum class Direction { upload, download, initial };

/// Called with every payload that crosses the boundary.
using TrafficObserver = std::function<void(Direction, std::size_t client, const ParamPayload&)>;

struct EpochRecord {
  std::size_t epoch = 0;
  std::vector<std::size_t> selected;
  double mean_reward = 0.0;  // over the selected clients' episodes
  bool synced = false;
  std::uint64_t uploaded_bytes = 0;    // cumulative
  std::uint64_t downloaded_bytes = 0;  // cumulative
};

struct FedRunState {
  std::size_t epoch = 0;
  std::vector<EpochRecord> journal;
  std::vector<std::vector<double>> client_rewards;  // per client, per trained epoch
  std::uint64_t uploaded_bytes = 0;
  std::uint64_t downloaded_bytes = 0;
  std::size_t sync_events = 0;

  std::vector<double> reward_trace() const;
};

struct MetricsReport {
  std::string method;
  std::vector<ClientScore> clients;
  std::vector<double> reward_trace;

  double mean_nmae() const;
  double mean_nrmse() const;
};

struct FederatedResult {
  ddpg::AgentParams global;
  FedRunState state;
  MetricsReport metrics;
};

/// Algorithm: for w = 1..W, sample ceil(E*N) clients, train each for M
/// episodes, and when w mod K == 0 average the selected clients' uploads on
/// the server and send the result back to every client. Throws
/// ClientDivergedError when a client ends an epoch with non-finite
/// parameters.
FederatedResult run_federated(std::vector<Client>& clients, const FedConfig& config,
                              const ddpg::AgentParams& initial_global,
                              const TrafficObserver& observer = {});

struct CentralizedResult {
  ddpg::AgentParams params;
  std::vector<double> reward_trace;  // per epoch
  MetricsReport metrics;
};

/// Single agent trained on all pooled training series with the same
/// schedule (W epochs, M episodes per series per epoch). Seeds match those
/// of client 0 in a federated run, so N=1 reproduces that run bit for bit.
CentralizedResult run_centralized(const std::vector<Dataset>& datasets,
                                  const env::EnvConfig& env_config,
                                  const ddpg::DdpgConfig& ddpg_config, const FedConfig& config,
                                  const ddpg::AgentParams& initial_global);

std::vector<Client> make_clients(const std::vector<Dataset>& datasets,
                                 const env::EnvConfig& env_config,
                                 const ddpg::DdpgConfig& ddpg_config, std::uint64_t master_seed);

struct LoadModel {
  std::uint64_t model_bytes = 0;          // I
  std::vector<std::uint64_t> data_bytes;  // D_n
  std::vector<std::uint32_t> hops;        // h_n
};

struct LoadGain {
  double centralized = 0.0;  // L_C
  double federated = 0.0;    // L_F
  double gain = 0.0;         // U
  std::size_t sync_rounds = 0;
};

/// L_C = sum D_n h_n. L_F = I * sum over sync rounds of (hops of the
/// uploading selected clients + hops of every client receiving the
/// broadcast when downloads are counted). U = 1 - L_F / L_C.
LoadGain compute_load_gain(const LoadModel& model, const FedConfig& config);

LoadModel load_model_for(const std::vector<Client>& clients);
std::uint64_t agent_payload_bytes(const ddpg::DdpgConfig& config, std::size_t lag_count);

}  // namespace feddrl::fed
