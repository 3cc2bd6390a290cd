#pragma once

#include "feddrl/env.hpp"
#include "feddrl/errors.hpp"
#include "feddrl/nn.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace feddrl::baselines {

/// Prediction for t+1 is the observation at t.
std::vector<double> persistence_forecast(std::span<const double> series,
                                         const env::ForecastRange& range);

struct ArimaConfig {
  std::size_t p = 2;  // autoregressive lags
  std::size_t d = 0;  // differencing order
  std::size_t q = 1;  // moving-average lags
  std::size_t max_iterations = 5000;
  double tolerance = 1e-8;  // simplex size on standardized data

  void validate() const;
};

struct ArimaModel {
  std::vector<double> ar;  // phi_1..phi_p
  std::vector<double> ma;  // theta_1..theta_q
  double intercept = 0.0;
  std::size_t d = 0;
  double innovation_variance = 0.0;
  double css = 0.0;              // conditional sum of squares at the estimate
  double warm_start_css = 0.0;   // same objective at the OLS starting point
  std::size_t iterations = 0;
  bool stationary = true;        // AR roots outside the unit circle
};

/// Carries the best model found before the iteration budget ran out.
class ArimaFitError : public NumericError {
 public:
  ArimaFitError(const std::string& message, ArimaModel best)
      : NumericError(message), best_(std::move(best)) {}
  const ArimaModel& best_so_far() const { return best_; }

 private:
  ArimaModel best_;
};

/// Conditional sum of squared innovations of an already differenced series,
/// innovations before index p taken as zero.
double conditional_sum_of_squares(std::span<const double> differenced, double intercept,
                                  std::span<const double> ar, std::span<const double> ma);

std::vector<double> difference(std::span<const double> series, std::size_t order);

/// Conditional-sum-of-squares fit by Nelder-Mead from an OLS AR warm start.
/// Requires at least 10 (p + q) points.
ArimaModel arima_fit(std::span<const double> series, const ArimaConfig& config = {});

/// One-step-ahead forecasts for targets t+1 over `range`, innovations
/// recomputed from the start of `series`.
std::vector<double> arima_forecast(const ArimaModel& model, std::span<const double> series,
                                   const env::ForecastRange& range);
/// Forecast of the value following the last observation of `history`.
double arima_predict_next(const ArimaModel& model, std::span<const double> history);

struct BpnnConfig {
  std::size_t lag_count = 7;
  std::size_t hidden_layers = 2;
  std::size_t hidden_neurons = 10;
  nn::Activation hidden_activation = nn::Activation::sigmoid;
  nn::OptimizerKind optimizer = nn::OptimizerKind::adam;
  double learning_rate = 0.01;
  std::size_t epochs = 500;  // full-batch passes
  std::uint64_t seed = 1;

  void validate() const;
};

struct BpnnModel {
  nn::NetworkParams params;
  double normalization_max = 1.0;
  std::vector<double> loss_trace;  // full-batch MSE before each epoch's step
};

/// Supervised lag-window regression (input: j normalized lags, target: the
/// next normalized value), trained full-batch on MSE.
BpnnModel bpnn_train(std::span<const double> train_series, const BpnnConfig& config);
std::vector<double> bpnn_forecast(const BpnnModel& model, std::span<const double> series,
                                  const env::ForecastRange& range);

}  // namespace feddrl::baselines
