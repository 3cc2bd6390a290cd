#include "feddrl/nn.hpp"

#include "feddrl/errors.hpp"

#include <bit>
#include <cmath>
#include <string>

namespace feddrl::nn {

std::string_view to_string(Activation activation) {
  switch (activation) {
    case Activation::relu:
      return "relu";
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::linear:
      return "linear";
  }
  return "unknown";
}

Activation activation_from_string(std::string_view name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "linear") return Activation::linear;
  throw FormatError("unknown activation '" + std::string(name) + "'");
}

Activation activation_from_code(std::uint32_t code) {
  if (code > static_cast<std::uint32_t>(Activation::linear)) {
    throw FormatError("unknown activation code " + std::to_string(code));
  }
  return static_cast<Activation>(code);
}

namespace {

void check_chain(const std::vector<DenseLayer>& layers) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& layer = layers[i];
    if (layer.weights.rows() < 1 || layer.weights.cols() < 1) {
      throw ShapeError("layer " + std::to_string(i) + " has a zero width");
    }
    if (layer.bias.size() != layer.weights.rows()) {
      throw ShapeError("layer " + std::to_string(i) + " bias length mismatch");
    }
    if (i > 0 && layers[i - 1].weights.rows() != layer.weights.cols()) {
      throw ShapeError("layer " + std::to_string(i) + " input width does not chain");
    }
  }
}

void check_same_shape(const NetworkParams& a, const NetworkParams& b) {
  if (!a.compatible_with(b)) throw ShapeError("network shapes differ");
}

Eigen::MatrixXd activate(const Eigen::MatrixXd& pre, Activation activation) {
  switch (activation) {
    case Activation::relu:
      return pre.cwiseMax(0.0);
    case Activation::sigmoid:
      return pre.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    case Activation::linear:
      return pre;
  }
  return pre;
}

}  // namespace

NetworkParams::NetworkParams(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  check_chain(layers_);
}

NetworkParams NetworkParams::zeros(std::span<const LayerSpec> specs) {
  std::vector<DenseLayer> layers;
  layers.reserve(specs.size());
  for (const auto& spec : specs) {
    if (spec.input_width < 1 || spec.output_width < 1) {
      throw ShapeError("layer widths must be positive");
    }
    const auto rows = static_cast<Eigen::Index>(spec.output_width);
    const auto cols = static_cast<Eigen::Index>(spec.input_width);
    layers.push_back({Eigen::MatrixXd::Zero(rows, cols), Eigen::VectorXd::Zero(rows),
                      spec.activation});
  }
  return NetworkParams(std::move(layers));
}

NetworkParams NetworkParams::glorot_uniform(std::span<const LayerSpec> specs,
                                            std::mt19937_64& rng) {
  NetworkParams params = zeros(specs);
  for (auto& layer : params.layers_) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(layer.weights.rows() + layer.weights.cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    // Row-major fill so the draw order matches the serialized order.
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
        layer.weights(r, c) = dist(rng);
      }
    }
  }
  return params;
}

std::vector<LayerSpec> NetworkParams::shape_signature() const {
  std::vector<LayerSpec> specs;
  specs.reserve(layers_.size());
  for (const auto& layer : layers_) specs.push_back(layer.spec());
  return specs;
}

std::size_t NetworkParams::input_width() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weights.cols());
}

std::size_t NetworkParams::output_width() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weights.rows());
}

std::size_t NetworkParams::parameter_count() const {
  std::size_t count = 0;
  for (const auto& layer : layers_) {
    count += static_cast<std::size_t>(layer.weights.size() + layer.bias.size());
  }
  return count;
}

bool NetworkParams::compatible_with(const NetworkParams& other) const {
  return shape_signature() == other.shape_signature();
}

bool NetworkParams::all_finite() const {
  for (const auto& layer : layers_) {
    if (!layer.weights.allFinite() || !layer.bias.allFinite()) return false;
  }
  return true;
}

std::vector<double> NetworkParams::flatten() const {
  std::vector<double> flat;
  flat.reserve(parameter_count());
  for (const auto& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) flat.push_back(layer.weights(r, c));
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) flat.push_back(layer.bias(r));
  }
  return flat;
}

void NetworkParams::assign(std::span<const double> flat) {
  if (flat.size() != parameter_count()) throw ShapeError("flat parameter length mismatch");
  std::size_t k = 0;
  for (auto& layer : layers_) {
    for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) layer.weights(r, c) = flat[k++];
    }
    for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = flat[k++];
  }
}

void NetworkParams::set_zero() {
  for (auto& layer : layers_) {
    layer.weights.setZero();
    layer.bias.setZero();
  }
}

NetworkParams& NetworkParams::operator+=(const NetworkParams& other) {
  check_same_shape(*this, other);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].weights += other.layers_[i].weights;
    layers_[i].bias += other.layers_[i].bias;
  }
  return *this;
}

NetworkParams& NetworkParams::operator*=(double factor) {
  for (auto& layer : layers_) {
    layer.weights *= factor;
    layer.bias *= factor;
  }
  return *this;
}

void NetworkParams::blend_toward(const NetworkParams& source, double factor) {
  check_same_shape(*this, source);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].weights = factor * source.layers_[i].weights + (1.0 - factor) * layers_[i].weights;
    layers_[i].bias = factor * source.layers_[i].bias + (1.0 - factor) * layers_[i].bias;
  }
}

double NetworkParams::distance(const NetworkParams& other) const {
  check_same_shape(*this, other);
  double sum = 0.0;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    sum += (layers_[i].weights - other.layers_[i].weights).squaredNorm();
    sum += (layers_[i].bias - other.layers_[i].bias).squaredNorm();
  }
  return std::sqrt(sum);
}

bool operator==(const NetworkParams& a, const NetworkParams& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& x = a.layers_[i];
    const auto& y = b.layers_[i];
    if (x.activation != y.activation || x.weights.rows() != y.weights.rows() ||
        x.weights.cols() != y.weights.cols()) {
      return false;
    }
    if (x.weights != y.weights || x.bias != y.bias) return false;
  }
  return true;
}

Tape forward_batch(const NetworkParams& params, const Eigen::MatrixXd& batch) {
  if (params.empty()) throw ShapeError("forward on an empty network");
  if (static_cast<std::size_t>(batch.rows()) != params.input_width()) {
    throw ShapeError("input length " + std::to_string(batch.rows()) + " != network input width " +
                     std::to_string(params.input_width()));
  }
  Tape tape;
  const auto& layers = params.layers();
  tape.inputs.reserve(layers.size() + 1);
  tape.pre_activations.reserve(layers.size());
  tape.inputs.push_back(batch);
  for (const auto& layer : layers) {
    Eigen::MatrixXd pre = layer.weights * tape.inputs.back();
    pre.colwise() += layer.bias;
    tape.inputs.push_back(activate(pre, layer.activation));
    tape.pre_activations.push_back(std::move(pre));
  }
  return tape;
}

Eigen::MatrixXd evaluate(const NetworkParams& params, const Eigen::MatrixXd& batch) {
  if (params.empty()) throw ShapeError("forward on an empty network");
  if (static_cast<std::size_t>(batch.rows()) != params.input_width()) {
    throw ShapeError("input length does not match network input width");
  }
  Eigen::MatrixXd current = batch;
  for (const auto& layer : params.layers()) {
    Eigen::MatrixXd pre = layer.weights * current;
    pre.colwise() += layer.bias;
    current = activate(pre, layer.activation);
  }
  return current;
}

ForwardResult forward(const NetworkParams& params, std::span<const double> input) {
  const Eigen::Map<const Eigen::VectorXd> column(input.data(),
                                                 static_cast<Eigen::Index>(input.size()));
  ForwardResult result;
  result.tape = forward_batch(params, Eigen::MatrixXd(column));
  const auto& out = result.tape.output();
  result.output.assign(out.data(), out.data() + out.size());
  return result;
}

Gradients backward(const NetworkParams& params, const Tape& tape,
                   const Eigen::MatrixXd& output_gradient) {
  const auto& layers = params.layers();
  if (tape.pre_activations.size() != layers.size() || tape.inputs.size() != layers.size() + 1) {
    throw StateError("tape was not produced by this network");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (tape.inputs[i].rows() != layers[i].weights.cols() ||
        tape.pre_activations[i].rows() != layers[i].weights.rows()) {
      throw StateError("tape layer " + std::to_string(i) + " does not match network");
    }
  }
  if (output_gradient.rows() != tape.output().rows() ||
      output_gradient.cols() != tape.output().cols()) {
    throw ShapeError("output gradient shape does not match forward output");
  }

  Gradients grads;
  grads.params = NetworkParams::zeros(params.shape_signature());
  Eigen::MatrixXd upstream = output_gradient;
  for (std::size_t i = layers.size(); i-- > 0;) {
    const auto& layer = layers[i];
    Eigen::MatrixXd delta;
    switch (layer.activation) {
      case Activation::relu:
        delta = upstream.cwiseProduct(
            tape.pre_activations[i].unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; }));
        break;
      case Activation::sigmoid: {
        const auto& out = tape.inputs[i + 1];
        delta = upstream.cwiseProduct(out.cwiseProduct((1.0 - out.array()).matrix()));
        break;
      }
      case Activation::linear:
        delta = upstream;
        break;
    }
    auto& g = grads.params.layers()[i];
    g.weights = delta * tape.inputs[i].transpose();
    g.bias = delta.rowwise().sum();
    upstream = layer.weights.transpose() * delta;
  }
  grads.input = std::move(upstream);
  return grads;
}

Gradients backward(const NetworkParams& params, const Tape& tape,
                   std::span<const double> output_gradient) {
  const Eigen::Map<const Eigen::MatrixXd> g(output_gradient.data(),
                                            static_cast<Eigen::Index>(params.output_width()),
                                            static_cast<Eigen::Index>(tape.batch_size()));
  if (output_gradient.size() != params.output_width() * tape.batch_size()) {
    throw ShapeError("output gradient length mismatch");
  }
  return backward(params, tape, Eigen::MatrixXd(g));
}

Optimizer::Optimizer(OptimizerConfig config, const NetworkParams& shape)
    : config_(config),
      first_moment_(NetworkParams::zeros(shape.shape_signature())),
      second_moment_(NetworkParams::zeros(shape.shape_signature())) {
  if (!(config_.learning_rate > 0.0)) throw DomainError("learning rate must be positive");
}

void Optimizer::reset() {
  first_moment_.set_zero();
  second_moment_.set_zero();
  steps_ = 0;
}

void Optimizer::apply(NetworkParams& params, const NetworkParams& gradients) {
  check_same_shape(params, gradients);
  check_same_shape(params, first_moment_);
  if (!gradients.all_finite()) throw NumericError("non-finite gradient");

  auto& layers = params.layers();
  const auto& grad_layers = gradients.layers();
  const double lr = config_.learning_rate;
  if (config_.kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].weights -= lr * grad_layers[i].weights;
      layers[i].bias -= lr * grad_layers[i].bias;
    }
    ++steps_;
    return;
  }

  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double eps = config_.epsilon;
  auto update = [&](auto& value, const auto& grad, auto& m, auto& v) {
    m = b1 * m + (1.0 - b1) * grad;
    v = b2 * v + (1.0 - b2) * grad.cwiseProduct(grad);
    value.array() -= lr * (m.array() / correction1) /
                     ((v.array() / correction2).sqrt() + eps);
  };
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& m = first_moment_.layers()[i];
    auto& v = second_moment_.layers()[i];
    update(layers[i].weights, grad_layers[i].weights, m.weights, v.weights);
    update(layers[i].bias, grad_layers[i].bias, m.bias, v.bias);
  }
  if (!params.all_finite()) throw NumericError("optimizer step produced non-finite parameters");
}

NetworkParams average_params(std::span<const NetworkParams> param_sets) {
  if (param_sets.empty()) throw ProtocolError("cannot average an empty parameter list");
  const auto signature = param_sets.front().shape_signature();
  for (const auto& p : param_sets) {
    if (p.shape_signature() != signature) {
      throw ProtocolError("parameter sets are not averaging-compatible");
    }
  }
  // Running mean in list order: mean_k = mean_{k-1} + (x_k - mean_{k-1}) / k.
  // Identical inputs therefore come back bit-exact.
  NetworkParams mean = param_sets.front();
  auto& layers = mean.layers();
  for (std::size_t k = 1; k < param_sets.size(); ++k) {
    const double count = static_cast<double>(k + 1);
    const auto& next = param_sets[k].layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].weights += (next[i].weights - layers[i].weights) / count;
      layers[i].bias += (next[i].bias - layers[i].bias) / count;
    }
  }
  return mean;
}

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'D', 'N', 'P'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t value) {
  for (int shift = 0; shift < 32; shift += 8) {
    out.push_back(static_cast<std::uint8_t>(value >> shift));
  }
}

void put_f64(std::vector<std::uint8_t>& out, double value) {
  const auto bits = std::bit_cast<std::uint64_t>(value);
  for (int shift = 0; shift < 64; shift += 8) {
    out.push_back(static_cast<std::uint8_t>(bits >> shift));
  }
}

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t& offset)
      : bytes_(bytes), offset_(offset) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t value = 0;
    for (int k = 0; k < 4; ++k) value |= static_cast<std::uint32_t>(bytes_[offset_ + k]) << (8 * k);
    offset_ += 4;
    return value;
  }

  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(bytes_[offset_ + k]) << (8 * k);
    offset_ += 8;
    return std::bit_cast<double>(bits);
  }

  void need(std::size_t count) const {
    if (offset_ + count > bytes_.size()) throw FormatError("truncated parameter record");
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t& offset_;
};

}  // namespace

std::size_t serialized_size(std::span<const LayerSpec> signature) {
  std::size_t size = kHeaderFixedBytes + kHeaderBytesPerLayer * signature.size();
  for (const auto& spec : signature) {
    size += 8 * (spec.output_width * spec.input_width + spec.output_width);
  }
  return size;
}

void serialize_params_into(const NetworkParams& params, std::vector<std::uint8_t>& out) {
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(params.layers().size()));
  for (const auto& spec : params.shape_signature()) {
    put_u32(out, static_cast<std::uint32_t>(spec.input_width));
    put_u32(out, static_cast<std::uint32_t>(spec.output_width));
    put_u32(out, static_cast<std::uint32_t>(spec.activation));
  }
  for (const double value : params.flatten()) put_f64(out, value);
}

std::vector<std::uint8_t> serialize_params(const NetworkParams& params) {
  std::vector<std::uint8_t> out;
  out.reserve(serialized_size(params.shape_signature()));
  serialize_params_into(params, out);
  return out;
}

NetworkParams deserialize_params_at(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  Reader reader(bytes, offset);
  reader.need(4);
  for (std::size_t k = 0; k < 4; ++k) {
    if (bytes[offset + k] != kMagic[k]) throw FormatError("bad parameter magic");
  }
  offset += 4;
  if (const auto version = reader.u32(); version != kFormatVersion) {
    throw FormatError("unsupported parameter format version " + std::to_string(version));
  }
  const auto layer_count = reader.u32();
  if (layer_count == 0) throw FormatError("parameter record has no layers");
  reader.need(static_cast<std::size_t>(layer_count) * kHeaderBytesPerLayer);
  std::vector<LayerSpec> specs;
  specs.reserve(layer_count);
  for (std::uint32_t i = 0; i < layer_count; ++i) {
    LayerSpec spec;
    spec.input_width = reader.u32();
    spec.output_width = reader.u32();
    spec.activation = activation_from_code(reader.u32());
    if (spec.input_width == 0 || spec.output_width == 0) {
      throw FormatError("parameter record has a zero-width layer");
    }
    if (!specs.empty() && specs.back().output_width != spec.input_width) {
      throw FormatError("parameter record layers do not chain");
    }
    specs.push_back(spec);
  }
  NetworkParams params = NetworkParams::zeros(specs);
  const std::size_t count = params.parameter_count();
  reader.need(8 * count);
  std::vector<double> flat(count);
  for (auto& value : flat) value = reader.f64();
  params.assign(flat);
  return params;
}

NetworkParams deserialize_params(std::span<const std::uint8_t> bytes) {
  std::size_t offset = 0;
  NetworkParams params = deserialize_params_at(bytes, offset);
  if (offset != bytes.size()) throw FormatError("trailing bytes after parameter record");
  return params;
}

}  // namespace feddrl::nn
