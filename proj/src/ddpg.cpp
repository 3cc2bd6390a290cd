#include "feddrl/ddpg.hpp"

#include "feddrl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace feddrl::ddpg {

void DdpgConfig::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw DomainError("gamma must lie in [0,1]");
  if (!(tau > 0.0 && tau <= 1.0)) throw DomainError("tau must lie in (0,1]");
  if (minibatch_size == 0) throw DomainError("minibatch_size must be positive");
  if (buffer_capacity == 0) throw DomainError("buffer_capacity must be positive");
  if (minibatch_size > buffer_capacity) {
    throw DomainError("minibatch_size must not exceed buffer_capacity");
  }
  if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw DomainError("learning rates must be positive");
  if (!(noise_sigma_initial >= 0.0) || !(noise_sigma_decay >= 0.0)) {
    throw DomainError("noise parameters must be nonnegative");
  }
  if (actor_hidden == 0 || critic_hidden == 0) throw DomainError("hidden widths must be positive");
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw DomainError("replay buffer capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
}

void ReplayBuffer::push(Transition transition) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(transition));
  } else {
    items_[next_slot_] = std::move(transition);
  }
  next_slot_ = (next_slot_ + 1) % capacity_;
  ++inserted_;
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw RangeError("replay index out of range");
  if (items_.size() < capacity_) return items_[i];
  return items_[(next_slot_ + i) % capacity_];
}

std::vector<Transition> ReplayBuffer::sample(std::size_t count, std::mt19937_64& rng) const {
  if (count == 0 || items_.size() < count) {
    throw StateError("replay buffer holds " + std::to_string(items_.size()) +
                     " transitions, minibatch needs " + std::to_string(count));
  }
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<Transition> batch;
  batch.reserve(count);
  for (std::size_t k = 0; k < count; ++k) batch.push_back(items_[pick(rng)]);
  return batch;
}

bool AgentParams::compatible_with(const AgentParams& other) const {
  return actor.compatible_with(other.actor) && actor_target.compatible_with(other.actor_target) &&
         critic.compatible_with(other.critic) && critic_target.compatible_with(other.critic_target);
}

bool AgentParams::all_finite() const {
  return actor.all_finite() && actor_target.all_finite() && critic.all_finite() &&
         critic_target.all_finite();
}

std::vector<nn::LayerSpec> actor_layout(std::size_t state_width, std::size_t hidden) {
  return {{state_width, hidden, nn::Activation::relu}, {hidden, 1, nn::Activation::sigmoid}};
}

std::vector<nn::LayerSpec> critic_layout(std::size_t state_width, std::size_t hidden) {
  return {{state_width + 1, hidden, nn::Activation::relu}, {hidden, 1, nn::Activation::linear}};
}

Eigen::MatrixXd state_matrix(std::span<const Transition> batch, bool next_state) {
  const auto width = static_cast<Eigen::Index>(batch.front().state.size());
  Eigen::MatrixXd states(width, static_cast<Eigen::Index>(batch.size()));
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const auto& s = next_state ? batch[k].next_state : batch[k].state;
    if (static_cast<Eigen::Index>(s.size()) != width) throw ShapeError("ragged minibatch states");
    states.col(static_cast<Eigen::Index>(k)) = Eigen::Map<const Eigen::VectorXd>(s.data(), width);
  }
  return states;
}

Eigen::MatrixXd critic_input(std::span<const Transition> batch, bool next_state,
                             const Eigen::RowVectorXd& actions) {
  const Eigen::MatrixXd states = state_matrix(batch, next_state);
  Eigen::MatrixXd input(states.rows() + 1, states.cols());
  input.topRows(states.rows()) = states;
  input.bottomRows(1) = actions;
  return input;
}

DdpgAgent::DdpgAgent(DdpgConfig config, std::size_t state_width, std::uint64_t seed)
    : config_(config),
      state_width_(state_width),
      rng_(seed),
      buffer_(config.buffer_capacity),
      noise_sigma_(config.noise_sigma_initial) {
  config_.validate();
  if (state_width_ == 0) throw DomainError("state width must be positive");
  const auto actor_specs = actor_layout(state_width_, config_.actor_hidden);
  const auto critic_specs = critic_layout(state_width_, config_.critic_hidden);
  params_.actor = nn::NetworkParams::glorot_uniform(actor_specs, rng_);
  params_.critic = nn::NetworkParams::glorot_uniform(critic_specs, rng_);
  params_.actor_target = params_.actor;
  params_.critic_target = params_.critic;
  actor_opt_ = nn::Optimizer({config_.optimizer, config_.actor_lr}, params_.actor);
  critic_opt_ = nn::Optimizer({config_.optimizer, config_.critic_lr}, params_.critic);
}

double DdpgAgent::act(std::span<const double> state, bool explore) {
  if (state.size() != state_width_) {
    throw ShapeError("state length " + std::to_string(state.size()) + " != " +
                     std::to_string(state_width_));
  }
  double action = nn::forward(params_.actor, state).output.front();
  if (!std::isfinite(action)) throw NumericError("actor produced a non-finite action");
  if (explore) {
    std::normal_distribution<double> noise(0.0, 1.0);
    action += noise_sigma_ * noise(rng_);
  }
  return std::clamp(action, 0.0, 1.0);
}

void DdpgAgent::begin_episode() {
  noise_sigma_ = config_.noise_sigma_initial *
                 std::pow(config_.noise_sigma_decay, static_cast<double>(episodes_started_));
  ++episodes_started_;
}

void DdpgAgent::remember(Transition transition) {
  if (transition.state.size() != state_width_ || transition.next_state.size() != state_width_) {
    throw ShapeError("transition state width mismatch");
  }
  buffer_.push(std::move(transition));
}

TrainStepResult DdpgAgent::train_step() {
  TrainStepResult result;
  if (buffer_.size() < config_.minibatch_size) return result;
  const auto batch = buffer_.sample(config_.minibatch_size, rng_);
  result.critic_loss = critic_update(batch);
  result.actor_objective = actor_update(batch);
  soft_update();
  result.trained = true;
  return result;
}

double DdpgAgent::critic_update(std::span<const Transition> minibatch) {
  if (minibatch.empty()) throw ProtocolError("critic update on an empty minibatch");
  const auto count = static_cast<Eigen::Index>(minibatch.size());

  const Eigen::MatrixXd next_states = state_matrix(minibatch, true);
  const Eigen::RowVectorXd next_actions = nn::evaluate(params_.actor_target, next_states);
  const Eigen::RowVectorXd next_q =
      nn::evaluate(params_.critic_target, critic_input(minibatch, true, next_actions));

  Eigen::RowVectorXd actions(count);
  Eigen::RowVectorXd target_q(count);
  for (Eigen::Index k = 0; k < count; ++k) {
    actions(k) = minibatch[static_cast<std::size_t>(k)].action;
    target_q(k) = minibatch[static_cast<std::size_t>(k)].reward + config_.gamma * next_q(k);
  }

  const nn::Tape tape = nn::forward_batch(params_.critic, critic_input(minibatch, false, actions));
  const Eigen::RowVectorXd error = target_q - tape.output().row(0);
  const double loss = error.squaredNorm() / static_cast<double>(count);

  // d/dQ of mean (TargetQ - Q)^2
  const Eigen::MatrixXd output_gradient = (-2.0 / static_cast<double>(count)) * error;
  const auto grads = nn::backward(params_.critic, tape, output_gradient);
  critic_opt_.apply(params_.critic, grads.params);
  return loss;
}

double DdpgAgent::actor_update(std::span<const Transition> minibatch) {
  if (minibatch.empty()) throw ProtocolError("actor update on an empty minibatch");
  const auto count = static_cast<double>(minibatch.size());

  const Eigen::MatrixXd states = state_matrix(minibatch, false);
  const nn::Tape actor_tape = nn::forward_batch(params_.actor, states);
  const Eigen::RowVectorXd actions = actor_tape.output().row(0);
  const nn::Tape critic_tape =
      nn::forward_batch(params_.critic, critic_input(minibatch, false, actions));
  const double objective = critic_tape.output().sum() / count;

  const Eigen::MatrixXd mean_weights =
      Eigen::MatrixXd::Constant(1, critic_tape.output().cols(), 1.0 / count);
  const auto critic_grads = nn::backward(params_.critic, critic_tape, mean_weights);
  // Gradient of the mean Q with respect to each action; descend on its negation.
  const Eigen::MatrixXd action_gradient = -critic_grads.input.bottomRows(1);
  const auto actor_grads = nn::backward(params_.actor, actor_tape, action_gradient);
  actor_opt_.apply(params_.actor, actor_grads.params);
  return objective;
}

void DdpgAgent::soft_update() {
  params_.actor_target.blend_toward(params_.actor, config_.tau);
  params_.critic_target.blend_toward(params_.critic, config_.tau);
}

AgentParams DdpgAgent::export_params() const { return params_; }

void DdpgAgent::import_params(const AgentParams& params) {
  if (!params_.compatible_with(params)) {
    throw ProtocolError("imported parameters do not match the agent's network shapes");
  }
  if (params == params_) return;
  params_ = params;
  actor_opt_.reset();
  critic_opt_.reset();
}

void DdpgAgent::set_actor(nn::NetworkParams actor) {
  if (!actor.compatible_with(params_.actor)) throw ShapeError("actor shape mismatch");
  params_.actor = std::move(actor);
}

void DdpgAgent::set_critic(nn::NetworkParams critic) {
  if (!critic.compatible_with(params_.critic)) throw ShapeError("critic shape mismatch");
  params_.critic = std::move(critic);
}

std::vector<std::uint8_t> serialize_agent_params(const AgentParams& params) {
  std::vector<std::uint8_t> out;
  nn::serialize_params_into(params.actor, out);
  nn::serialize_params_into(params.actor_target, out);
  nn::serialize_params_into(params.critic, out);
  nn::serialize_params_into(params.critic_target, out);
  return out;
}

AgentParams deserialize_agent_params(std::span<const std::uint8_t> bytes) {
  std::size_t offset = 0;
  AgentParams params;
  params.actor = nn::deserialize_params_at(bytes, offset);
  params.actor_target = nn::deserialize_params_at(bytes, offset);
  params.critic = nn::deserialize_params_at(bytes, offset);
  params.critic_target = nn::deserialize_params_at(bytes, offset);
  if (offset != bytes.size()) throw FormatError("trailing bytes after agent parameters");
  return params;
}

}  // namespace feddrl::ddpg
