#include "feddrl/baselines.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <gsl/gsl_vector.h>

#include <fmt/format.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <random>

namespace feddrl::baselines {

std::vector<double> persistence_forecast(std::span<const double> series,
                                         const env::ForecastRange& range) {
  env::check_range(range, series.size(), 1);
  const auto first = series.begin() + static_cast<std::ptrdiff_t>(range.first);
  return {first, first + static_cast<std::ptrdiff_t>(range.count)};
}

void ArimaConfig::validate() const {
  if (p + q < 1) throw DomainError("ARIMA needs p + q >= 1");
  if (max_iterations == 0) throw DomainError("ARIMA iteration budget must be positive");
  if (!(tolerance > 0.0)) throw DomainError("ARIMA tolerance must be positive");
}

std::vector<double> difference(std::span<const double> series, std::size_t order) {
  std::vector<double> out(series.begin(), series.end());
  for (std::size_t k = 0; k < order; ++k) {
    if (out.size() < 2) throw RangeError("series too short to difference");
    for (std::size_t i = 0; i + 1 < out.size(); ++i) out[i] = out[i + 1] - out[i];
    out.pop_back();
  }
  return out;
}

namespace {

// Innovations e_i = w_i - prediction_i for i >= p; earlier ones are zero.
// Returns the prediction for every index 0..n (index n lies past the end),
// NaN where fewer than p lags exist.
std::vector<double> differenced_predictions(std::span<const double> w, double intercept,
                                            std::span<const double> ar,
                                            std::span<const double> ma,
                                            std::vector<double>* innovations = nullptr) {
  const std::size_t p = ar.size();
  const std::size_t q = ma.size();
  std::vector<double> e(w.size(), 0.0);
  std::vector<double> predictions(w.size() + 1, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = p; i <= w.size(); ++i) {
    double prediction = intercept;
    for (std::size_t k = 1; k <= p; ++k) prediction += ar[k - 1] * w[i - k];
    for (std::size_t j = 1; j <= q && j <= i; ++j) prediction += ma[j - 1] * e[i - j];
    predictions[i] = prediction;
    if (i < w.size()) e[i] = w[i] - prediction;
  }
  if (innovations) *innovations = std::move(e);
  return predictions;
}

double binomial(std::size_t n, std::size_t k) {
  double value = 1.0;
  for (std::size_t i = 1; i <= k; ++i) {
    value = value * static_cast<double>(n - k + i) / static_cast<double>(i);
  }
  return value;
}

// Raw-scale predictions for raw indices 0..n.
std::vector<double> raw_predictions(const ArimaModel& model, std::span<const double> series) {
  const auto w = difference(series, model.d);
  const auto diff_pred = differenced_predictions(w, model.intercept, model.ar, model.ma);
  std::vector<double> out(series.size() + 1, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < diff_pred.size(); ++i) {
    if (std::isnan(diff_pred[i])) continue;
    const std::size_t r = i + model.d;
    double value = diff_pred[i];
    for (std::size_t k = 1; k <= model.d; ++k) {
      const double sign = (k % 2 == 1) ? 1.0 : -1.0;
      value += sign * binomial(model.d, k) * series[r - k];
    }
    out[r] = value;
  }
  return out;
}

struct CssProblem {
  std::span<const double> z;
  std::size_t p;
  std::size_t q;
};

double css_from_vector(const gsl_vector* x, void* raw) {
  const auto& problem = *static_cast<const CssProblem*>(raw);
  std::vector<double> ar(problem.p), ma(problem.q);
  for (std::size_t k = 0; k < problem.p; ++k) ar[k] = gsl_vector_get(x, 1 + k);
  for (std::size_t k = 0; k < problem.q; ++k) ma[k] = gsl_vector_get(x, 1 + problem.p + k);
  const double value = conditional_sum_of_squares(problem.z, gsl_vector_get(x, 0), ar, ma);
  return std::isfinite(value) ? value : 1e300;
}

bool ar_stationary(std::span<const double> ar) {
  if (ar.empty()) return true;
  const auto p = static_cast<Eigen::Index>(ar.size());
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index k = 0; k < p; ++k) companion(0, k) = ar[static_cast<std::size_t>(k)];
  for (Eigen::Index k = 1; k < p; ++k) companion(k, k - 1) = 1.0;
  const Eigen::VectorXcd roots = companion.eigenvalues();
  return (roots.array().abs() < 1.0).all();
}

struct GslVectorDeleter {
  void operator()(gsl_vector* v) const { gsl_vector_free(v); }
};
struct GslMinimizerDeleter {
  void operator()(gsl_multimin_fminimizer* m) const { gsl_multimin_fminimizer_free(m); }
};

}  // namespace

double conditional_sum_of_squares(std::span<const double> differenced, double intercept,
                                  std::span<const double> ar, std::span<const double> ma) {
  std::vector<double> e;
  differenced_predictions(differenced, intercept, ar, ma, &e);
  double sum = 0.0;
  for (std::size_t i = ar.size(); i < e.size(); ++i) sum += e[i] * e[i];
  return sum;
}

ArimaModel arima_fit(std::span<const double> series, const ArimaConfig& config) {
  config.validate();
  const std::size_t p = config.p;
  const std::size_t q = config.q;
  if (series.size() < 10 * (p + q)) {
    throw RangeError(fmt::format("ARIMA({},{},{}) needs at least {} points, got {}", p, config.d, q,
                                 10 * (p + q), series.size()));
  }
  const auto w = difference(series, config.d);
  if (w.size() <= p + 1) throw RangeError("too few points after differencing");

  // Fit on standardized data so one simplex scale suits every coordinate.
  double mean = 0.0;
  for (const double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  double var = 0.0;
  for (const double v : w) var += (v - mean) * (v - mean);
  double scale = std::sqrt(var / static_cast<double>(w.size()));
  if (!(scale > 0.0)) scale = 1.0;
  std::vector<double> z(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) z[i] = (w[i] - mean) / scale;

  // OLS AR(p) warm start, MA terms zero.
  const std::size_t dim = 1 + p + q;
  std::vector<double> start(dim, 0.0);
  if (p > 0) {
    const auto rows = static_cast<Eigen::Index>(z.size() - p);
    Eigen::MatrixXd design(rows, static_cast<Eigen::Index>(p + 1));
    Eigen::VectorXd target(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
      const std::size_t t = static_cast<std::size_t>(r) + p;
      design(r, 0) = 1.0;
      for (std::size_t k = 1; k <= p; ++k) design(r, static_cast<Eigen::Index>(k)) = z[t - k];
      target(r) = z[t];
    }
    const Eigen::VectorXd beta = design.colPivHouseholderQr().solve(target);
    for (std::size_t k = 0; k <= p; ++k) start[k] = beta(static_cast<Eigen::Index>(k));
  }

  CssProblem problem{z, p, q};
  gsl_multimin_function objective{&css_from_vector, dim, &problem};
  std::unique_ptr<gsl_vector, GslVectorDeleter> x0(gsl_vector_alloc(dim));
  std::unique_ptr<gsl_vector, GslVectorDeleter> steps(gsl_vector_alloc(dim));
  for (std::size_t k = 0; k < dim; ++k) gsl_vector_set(x0.get(), k, start[k]);
  gsl_vector_set_all(steps.get(), 0.1);
  std::unique_ptr<gsl_multimin_fminimizer, GslMinimizerDeleter> minimizer(
      gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, dim));
  gsl_set_error_handler_off();
  gsl_multimin_fminimizer_set(minimizer.get(), &objective, x0.get(), steps.get());

  bool converged = false;
  std::size_t iteration = 0;
  while (iteration < config.max_iterations) {
    ++iteration;
    if (gsl_multimin_fminimizer_iterate(minimizer.get()) != GSL_SUCCESS) break;
    const double size = gsl_multimin_fminimizer_size(minimizer.get());
    if (gsl_multimin_test_size(size, config.tolerance) == GSL_SUCCESS) {
      converged = true;
      break;
    }
  }

  const gsl_vector* best = gsl_multimin_fminimizer_x(minimizer.get());
  ArimaModel model;
  model.d = config.d;
  model.ar.resize(p);
  model.ma.resize(q);
  double ar_sum = 0.0;
  for (std::size_t k = 0; k < p; ++k) {
    model.ar[k] = gsl_vector_get(best, 1 + k);
    ar_sum += model.ar[k];
  }
  for (std::size_t k = 0; k < q; ++k) model.ma[k] = gsl_vector_get(best, 1 + p + k);
  model.intercept = mean * (1.0 - ar_sum) + scale * gsl_vector_get(best, 0);
  model.css = conditional_sum_of_squares(w, model.intercept, model.ar, model.ma);
  model.innovation_variance = model.css / static_cast<double>(w.size() - p);
  model.iterations = iteration;
  model.stationary = ar_stationary(model.ar);

  std::vector<double> start_ar(start.begin() + 1, start.begin() + 1 + static_cast<std::ptrdiff_t>(p));
  double start_sum = 0.0;
  for (const double phi : start_ar) start_sum += phi;
  model.warm_start_css = conditional_sum_of_squares(
      w, mean * (1.0 - start_sum) + scale * start[0], start_ar, std::vector<double>(q, 0.0));

  if (!converged) {
    throw ArimaFitError(
        fmt::format("ARIMA fit did not converge within {} iterations", config.max_iterations),
        model);
  }
  return model;
}

std::vector<double> arima_forecast(const ArimaModel& model, std::span<const double> series,
                                   const env::ForecastRange& range) {
  env::check_range(range, series.size(), 1);
  if (range.first + 1 < model.ar.size() + model.d) {
    throw RangeError("forecast range starts before the model has enough history");
  }
  const auto all = raw_predictions(model, series);
  std::vector<double> out(range.count);
  for (std::size_t k = 0; k < range.count; ++k) out[k] = all[range.first + 1 + k];
  return out;
}

double arima_predict_next(const ArimaModel& model, std::span<const double> history) {
  if (history.size() < model.ar.size() + model.d) throw RangeError("history too short");
  return raw_predictions(model, history).back();
}

void BpnnConfig::validate() const {
  if (lag_count == 0 || hidden_layers == 0 || hidden_neurons == 0) {
    throw DomainError("BPNN widths must be positive");
  }
  if (!(learning_rate > 0.0)) throw DomainError("BPNN learning rate must be positive");
}

namespace {

Eigen::MatrixXd lag_windows(std::span<const double> normalized, std::size_t lags,
                            std::size_t first_cursor, std::size_t count) {
  Eigen::MatrixXd windows(static_cast<Eigen::Index>(lags), static_cast<Eigen::Index>(count));
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t cursor = first_cursor + k;
    for (std::size_t i = 0; i < lags; ++i) {
      windows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
          normalized[cursor + 1 - lags + i];
    }
  }
  return windows;
}

}  // namespace

BpnnModel bpnn_train(std::span<const double> train_series, const BpnnConfig& config) {
  config.validate();
  const std::size_t lags = config.lag_count;
  if (train_series.size() < lags + 2) throw RangeError("series too short for BPNN training");

  BpnnModel model;
  model.normalization_max = *std::max_element(train_series.begin(), train_series.end());
  if (!(model.normalization_max > 0.0)) throw DataError("BPNN training series is all zero");
  const auto normalized = env::normalize(train_series, model.normalization_max);

  std::vector<nn::LayerSpec> layout;
  std::size_t width = lags;
  for (std::size_t l = 0; l < config.hidden_layers; ++l) {
    layout.push_back({width, config.hidden_neurons, config.hidden_activation});
    width = config.hidden_neurons;
  }
  layout.push_back({width, 1, nn::Activation::linear});
  std::mt19937_64 rng(config.seed);
  model.params = nn::NetworkParams::glorot_uniform(layout, rng);

  const std::size_t samples = normalized.size() - lags;
  const Eigen::MatrixXd inputs = lag_windows(normalized, lags, lags - 1, samples);
  Eigen::RowVectorXd targets(static_cast<Eigen::Index>(samples));
  for (std::size_t k = 0; k < samples; ++k) targets(static_cast<Eigen::Index>(k)) = normalized[lags + k];

  nn::Optimizer optimizer({config.optimizer, config.learning_rate}, model.params);
  const double inv = 1.0 / static_cast<double>(samples);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const nn::Tape tape = nn::forward_batch(model.params, inputs);
    const Eigen::RowVectorXd error = tape.output().row(0) - targets;
    model.loss_trace.push_back(error.squaredNorm() * inv);
    const Eigen::MatrixXd gradient = (2.0 * inv) * error;
    optimizer.apply(model.params, nn::backward(model.params, tape, gradient).params);
  }
  return model;
}

std::vector<double> bpnn_forecast(const BpnnModel& model, std::span<const double> series,
                                  const env::ForecastRange& range) {
  const std::size_t lags = model.params.input_width();
  env::check_range(range, series.size(), lags);
  const auto normalized = env::normalize(series, model.normalization_max);
  const Eigen::MatrixXd out =
      nn::evaluate(model.params, lag_windows(normalized, lags, range.first, range.count));
  std::vector<double> predictions(range.count);
  for (std::size_t k = 0; k < range.count; ++k) {
    predictions[k] = out(0, static_cast<Eigen::Index>(k)) * model.normalization_max;
  }
  return predictions;
}

}  // namespace feddrl::baselines
