#pragma once

// Dense feed-forward networks with exact backpropagation, the Adam/SGD
// optimizer used by the actor, critic and BPNN, parameter averaging and a
// binary parameter format.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace feddrl::nn {

enum class Activation : std::uint8_t { relu = 0, sigmoid = 1, linear = 2 };

std::string_view to_string(Activation activation);
/// Throws FormatError on an unknown name or code.
Activation activation_from_string(std::string_view name);
Activation activation_from_code(std::uint32_t code);

struct LayerSpec {
  std::size_t input_width = 0;
  std::size_t output_width = 0;
  Activation activation = Activation::linear;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct DenseLayer {
  Eigen::MatrixXd weights;  // output_width x input_width
  Eigen::VectorXd bias;     // output_width
  Activation activation = Activation::linear;

  LayerSpec spec() const {
    return {static_cast<std::size_t>(weights.cols()),
            static_cast<std::size_t>(weights.rows()), activation};
  }
};

/// Ordered layers of one network. The chain invariant (layer i output width ==
/// layer i+1 input width) is checked on construction.
class NetworkParams {
 public:
  NetworkParams() = default;
  explicit NetworkParams(std::vector<DenseLayer> layers);

  static NetworkParams zeros(std::span<const LayerSpec> specs);
  /// Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  static NetworkParams glorot_uniform(std::span<const LayerSpec> specs,
                                      std::mt19937_64& rng);

  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }

  std::vector<LayerSpec> shape_signature() const;
  std::size_t input_width() const;
  std::size_t output_width() const;
  std::size_t parameter_count() const;
  bool compatible_with(const NetworkParams& other) const;
  bool all_finite() const;
  bool empty() const { return layers_.empty(); }

  /// Flat view in serialization order: per layer, weights row-major then bias.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);

  void set_zero();
  NetworkParams& operator+=(const NetworkParams& other);
  NetworkParams& operator*=(double factor);
  /// this <- factor * source + (1 - factor) * this
  void blend_toward(const NetworkParams& source, double factor);
  double distance(const NetworkParams& other) const;

  friend bool operator==(const NetworkParams& a, const NetworkParams& b);

 private:
  std::vector<DenseLayer> layers_;
};

/// Activation record of a forward pass over a batch stored column-wise.
/// inputs[i] feeds layer i; inputs.back() is the network output.
struct Tape {
  std::vector<Eigen::MatrixXd> inputs;
  std::vector<Eigen::MatrixXd> pre_activations;

  const Eigen::MatrixXd& output() const { return inputs.back(); }
  std::size_t batch_size() const {
    return inputs.empty() ? 0 : static_cast<std::size_t>(inputs.front().cols());
  }
};

struct ForwardResult {
  std::vector<double> output;
  Tape tape;
};

struct Gradients {
  NetworkParams params;          // summed over the batch
  Eigen::MatrixXd input;         // input_width x batch
};

ForwardResult forward(const NetworkParams& params, std::span<const double> input);
/// Batched forward; `batch` holds one sample per column.
Tape forward_batch(const NetworkParams& params, const Eigen::MatrixXd& batch);
/// Output only, no tape retained.
Eigen::MatrixXd evaluate(const NetworkParams& params, const Eigen::MatrixXd& batch);

/// Exact gradients of sum(output .* output_gradient) with respect to every
/// parameter and every input column.
Gradients backward(const NetworkParams& params, const Tape& tape,
                   const Eigen::MatrixXd& output_gradient);
Gradients backward(const NetworkParams& params, const Tape& tape,
                   std::span<const double> output_gradient);

enum class OptimizerKind : std::uint8_t { sgd, adam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First-order optimizer whose moment accumulators mirror one network.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(OptimizerConfig config, const NetworkParams& shape);

  /// Gradient descent step: parameters move against `gradients`. Throws
  /// NumericError (leaving everything untouched) on a non-finite gradient.
  void apply(NetworkParams& params, const NetworkParams& gradients);
  void reset();

  const OptimizerConfig& config() const { return config_; }
  std::uint64_t step_count() const { return steps_; }
  const NetworkParams& first_moment() const { return first_moment_; }
  const NetworkParams& second_moment() const { return second_moment_; }

 private:
  OptimizerConfig config_;
  NetworkParams first_moment_;
  NetworkParams second_moment_;
  std::uint64_t steps_ = 0;
};

/// Arithmetic mean, accumulated in list order. Throws ProtocolError on an
/// empty list or incompatible shapes.
NetworkParams average_params(std::span<const NetworkParams> param_sets);

// Parameter file layout (all integers little-endian uint32):
//   magic "FDNP" | version (1) | layer count L |
//   L x (input width, output width, activation code) |
//   parameters as little-endian IEEE-754 binary64, per layer weights
//   row-major then bias.
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderFixedBytes = 12;
inline constexpr std::size_t kHeaderBytesPerLayer = 12;

std::size_t serialized_size(std::span<const LayerSpec> signature);
std::vector<std::uint8_t> serialize_params(const NetworkParams& params);
/// Appends to `out` for multi-network payloads.
void serialize_params_into(const NetworkParams& params, std::vector<std::uint8_t>& out);
/// Throws FormatError on truncated or corrupt input.
NetworkParams deserialize_params(std::span<const std::uint8_t> bytes);
/// Reads one network starting at `offset`, advancing it past the record.
NetworkParams deserialize_params_at(std::span<const std::uint8_t> bytes, std::size_t& offset);

}  // namespace feddrl::nn
