#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tdrc/errors.hpp"
#include "tdrc/generators.hpp"
#include "tdrc/tdr.hpp"
#include "tdrc/time_series.hpp"

namespace tdrc {

/// Moments of log chi^2_1: mean -(euler_gamma + log 2), variance pi^2 / 2.
inline constexpr double kLogChi2Mean = -1.2703628454614782;
inline constexpr double kLogChi2Var = 4.934802200544679;

struct ArsvKalmanResult {
  TimeSeries filtered;   // E[b(t) | g up to t]
  TimeSeries predicted;  // E[b(t) | g up to t-1]
  std::vector<double> filtered_var;
  std::vector<double> predicted_var;
  double steady_gain = 0.0;
};

/// Linear filter for the log-squared observation equation of the ARSV model:
/// g(t) = log((z(t) - r)^2 + floor) = b(t) + u(t) with u ~ log chi^2_1, and
/// b(t+1) = lambda + alpha b(t) + w(t). Initialized at the stationary law.
[[nodiscard]] inline ArsvKalmanResult arsv_kalman_filter(const ArsvModel& m, const TimeSeries& z,
                                                         double obs_floor = 1e-12) {
  validate(m);
  if (z.empty()) throw InsufficientData("kalman: empty observation series");
  const auto T = z.size();
  const double q = m.sigma_w * m.sigma_w;

  ArsvKalmanResult out;
  out.filtered.origin = z.origin;
  out.predicted.origin = z.origin;
  out.filtered.values.resize(T);
  out.predicted.values.resize(T);
  out.filtered_var.resize(T);
  out.predicted_var.resize(T);

  double b_pred = arsv_b_mean(m);
  double p_pred = arsv_b_variance(m);
  double gain = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    const double dz = z.values[t] - m.r;
    const double g = std::log(dz * dz + obs_floor);
    const double innovation = g - (b_pred + kLogChi2Mean);
    gain = p_pred / (p_pred + kLogChi2Var);
    const double b_filt = b_pred + gain * innovation;
    const double p_filt = (1.0 - gain) * p_pred;

    out.predicted.values[t] = b_pred;
    out.predicted_var[t] = p_pred;
    out.filtered.values[t] = b_filt;
    out.filtered_var[t] = p_filt;

    b_pred = m.lambda + m.alpha * b_filt;
    p_pred = m.alpha * m.alpha * p_filt + q;
  }
  out.steady_gain = gain;
  return out;
}

enum class VolTarget { volatility, variance, log_volatility, log_variance };

[[nodiscard]] inline std::string to_string(VolTarget t) {
  switch (t) {
    case VolTarget::volatility: return "volatility";
    case VolTarget::variance: return "variance";
    case VolTarget::log_volatility: return "log_volatility";
    case VolTarget::log_variance: return "log_variance";
  }
  throw ConfigError("unknown volatility target");
}

/// Teaching series for a volatility target, from the latent log variance.
[[nodiscard]] inline TimeSeries teaching_from_log_variance(const TimeSeries& b, VolTarget target) {
  TimeSeries out;
  out.origin = b.origin;
  out.values.resize(b.size());
  for (std::size_t t = 0; t < b.size(); ++t) {
    const double v = b.values[t];
    switch (target) {
      case VolTarget::volatility: out.values[t] = std::exp(0.5 * v); break;
      case VolTarget::variance: out.values[t] = std::exp(v); break;
      case VolTarget::log_volatility: out.values[t] = 0.5 * v; break;
      case VolTarget::log_variance: out.values[t] = v; break;
    }
  }
  return out;
}

/// Maps the filtered (or predicted) state estimate to a volatility-target
/// estimate. With lognormal_correction, exp transforms use the posterior
/// variance: E exp(c b) = exp(c b_hat + c^2 P / 2).
[[nodiscard]] inline TimeSeries kalman_estimate_series(const ArsvKalmanResult& kf, VolTarget target,
                                                       bool use_filtered = true,
                                                       bool lognormal_correction = true) {
  const TimeSeries& b = use_filtered ? kf.filtered : kf.predicted;
  const std::vector<double>& p = use_filtered ? kf.filtered_var : kf.predicted_var;
  TimeSeries out;
  out.origin = b.origin;
  out.values.resize(b.size());
  for (std::size_t t = 0; t < b.size(); ++t) {
    const double bh = b.values[t];
    const double pv = lognormal_correction ? p[t] : 0.0;
    switch (target) {
      case VolTarget::volatility: out.values[t] = std::exp(0.5 * bh + 0.125 * pv); break;
      case VolTarget::variance: out.values[t] = std::exp(bh + 0.5 * pv); break;
      case VolTarget::log_volatility: out.values[t] = 0.5 * bh; break;
      case VolTarget::log_variance: out.values[t] = bh; break;
    }
  }
  return out;
}

/// NMSE between two series over their time overlap.
[[nodiscard]] inline NmseReport evaluate_nmse_series(const TimeSeries& prediction,
                                                     const TimeSeries& truth) {
  const TimeOverlap o = overlap(prediction, truth);
  if (o.length() < 2) throw InsufficientData("evaluate_nmse_series: overlap too small");
  const auto n = static_cast<Eigen::Index>(o.length());
  Eigen::VectorXd p(n), y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p(i) = prediction.at_time(o.first + i);
    y(i) = truth.at_time(o.first + i);
  }
  return evaluate_nmse(p, y);
}

}  // namespace tdrc
