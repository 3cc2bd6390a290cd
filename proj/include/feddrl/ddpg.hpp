#pragma once

#include "feddrl/nn.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace feddrl::ddpg {

struct DdpgConfig {
  double gamma = 0.9;   // discount factor
  double tau = 0.01;    // soft target update factor
  std::size_t minibatch_size = 64;
  std::size_t buffer_capacity = 10000;
  double actor_lr = 0.0003;
  double critic_lr = 0.003;
  double noise_sigma_initial = 0.1;
  double noise_sigma_decay = 0.99;  // multiplicative, applied per episode
  std::size_t actor_hidden = 30;
  std::size_t critic_hidden = 28;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;

  /// Throws DomainError naming the first violated constraint.
  void validate() const;
};

struct Transition {
  std::vector<double> state;
  double action = 0.0;
  double reward = 0.0;
  std::vector<double> next_state;
};

/// Fixed-capacity ring; the oldest transition is evicted first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1);

  void push(Transition transition);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  std::uint64_t inserted() const { return inserted_; }
  /// i-th oldest transition currently held.
  const Transition& at(std::size_t i) const;

  /// Uniform sampling with replacement. Throws StateError when fewer than
  /// `count` transitions are stored.
  std::vector<Transition> sample(std::size_t count, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
  std::size_t next_slot_ = 0;
  std::uint64_t inserted_ = 0;
};

/// The four networks exchanged with the federated server.
struct AgentParams {
  nn::NetworkParams actor;
  nn::NetworkParams actor_target;
  nn::NetworkParams critic;
  nn::NetworkParams critic_target;

  bool compatible_with(const AgentParams& other) const;
  bool all_finite() const;
  friend bool operator==(const AgentParams&, const AgentParams&) = default;
};

struct TrainStepResult {
  bool trained = false;
  double critic_loss = 0.0;
  double actor_objective = 0.0;
};

class DdpgAgent {
 public:
  DdpgAgent(DdpgConfig config, std::size_t state_width, std::uint64_t seed);

  /// Actor output in [0,1]; with `explore`, Gaussian noise of the current
  /// episode's sigma is added and the result clamped to [0,1].
  double act(std::span<const double> state, bool explore);

  /// Advances the exploration schedule: episode k uses sigma0 * decay^k.
  void begin_episode();
  double noise_sigma() const { return noise_sigma_; }

  void remember(Transition transition);

  /// Samples a minibatch and runs critic_update, actor_update, soft_update.
  /// No-op until the buffer holds a full minibatch.
  TrainStepResult train_step();

  /// One optimizer step on the main critic; returns the pre-step loss.
  double critic_update(std::span<const Transition> minibatch);
  /// One ascent step on the main actor; returns mean Q(s, pi(s)) before it.
  double actor_update(std::span<const Transition> minibatch);
  void soft_update();

  AgentParams export_params() const;
  /// Replaces all four networks. Optimizer moments are reset unless the
  /// imported parameters equal the current ones. Throws ProtocolError on a
  /// shape mismatch.
  void import_params(const AgentParams& params);

  const DdpgConfig& config() const { return config_; }
  std::size_t state_width() const { return state_width_; }
  const nn::NetworkParams& actor() const { return params_.actor; }
  const nn::NetworkParams& critic() const { return params_.critic; }
  const nn::NetworkParams& actor_target() const { return params_.actor_target; }
  const nn::NetworkParams& critic_target() const { return params_.critic_target; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const nn::Optimizer& actor_optimizer() const { return actor_opt_; }
  const nn::Optimizer& critic_optimizer() const { return critic_opt_; }

  /// Direct network access for tests and hand-built agents. Keeps targets
  /// untouched.
  void set_actor(nn::NetworkParams actor);
  void set_critic(nn::NetworkParams critic);

 private:
  DdpgConfig config_;
  std::size_t state_width_;
  std::mt19937_64 rng_;
  AgentParams params_;
  nn::Optimizer actor_opt_;
  nn::Optimizer critic_opt_;
  ReplayBuffer buffer_;
  double noise_sigma_;
  std::uint64_t episodes_started_ = 0;
};

std::vector<nn::LayerSpec> actor_layout(std::size_t state_width, std::size_t hidden);
std::vector<nn::LayerSpec> critic_layout(std::size_t state_width, std::size_t hidden);

/// Critic input matrix: one column per transition, the state (or next state)
/// stacked over the given action.
Eigen::MatrixXd critic_input(std::span<const Transition> batch, bool next_state,
                             const Eigen::RowVectorXd& actions);
Eigen::MatrixXd state_matrix(std::span<const Transition> batch, bool next_state);

/// Concatenated parameter records of the four networks, in the order actor,
/// actor target, critic, critic target.
std::vector<std::uint8_t> serialize_agent_params(const AgentParams& params);
AgentParams deserialize_agent_params(std::span<const std::uint8_t> bytes);

}  // namespace feddrl::ddpg
