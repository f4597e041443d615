#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "tdrc/errors.hpp"
#include "tdrc/time_series.hpp"

namespace tdrc {

namespace detail {

/// Smallest root modulus of c0 + c1 x + ... + cn x^n; +inf for degree < 1.
[[nodiscard]] inline double min_root_modulus(std::vector<double> coeffs) {
  while (coeffs.size() > 1 && std::abs(coeffs.back()) < 1e-14) coeffs.pop_back();
  const auto degree = static_cast<Eigen::Index>(coeffs.size()) - 1;
  if (degree < 1) return std::numeric_limits<double>::infinity();
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (Eigen::Index i = 0; i + 1 < degree; ++i) companion(i + 1, i) = 1.0;
  for (Eigen::Index i = 0; i < degree; ++i) {
    companion(i, degree - 1) = -coeffs[static_cast<std::size_t>(i)] / coeffs.back();
  }
  const Eigen::VectorXcd roots = companion.eigenvalues();
  double min_mod = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < roots.size(); ++i) min_mod = std::min(min_mod, std::abs(roots[i]));
  return min_mod;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// ARMA(p, q): z(t) = sum phi_i z(t-i) + zeta(t) + sum theta_j zeta(t-j)
// ---------------------------------------------------------------------------

struct ArmaModel {
  std::vector<double> phi;
  std::vector<double> theta;
  double sigma2 = 1.0;
};

/// Requires a causal AR part and invertible MA part (all characteristic roots
/// strictly outside the unit circle) and a positive innovation variance.
inline void validate(const ArmaModel& m) {
  if (!(m.sigma2 > 0.0)) throw InvalidModel("arma: sigma2 must be > 0");
  std::vector<double> ar{1.0};
  for (double p : m.phi) ar.push_back(-p);
  if (detail::min_root_modulus(ar) <= 1.0 + 1e-9) {
    throw InvalidModel("arma: AR polynomial root on or inside the unit circle");
  }
  std::vector<double> ma{1.0};
  for (double t : m.theta) ma.push_back(t);
  if (detail::min_root_modulus(ma) <= 1.0 + 1e-9) {
    throw InvalidModel("arma: MA polynomial root on or inside the unit circle");
  }
}

struct ArmaSample {
  TimeSeries z;
  TimeSeries innovations;
};

/// Simulates with Gaussian innovations from zero pre-history; burn_in < 0
/// selects 100 + 10 (p + q) steps.
[[nodiscard]] inline ArmaSample arma_simulate(const ArmaModel& m, std::int64_t length,
                                              std::uint64_t seed, std::int64_t burn_in = -1) {
  validate(m);
  if (length < 1) throw ConfigError("arma_simulate: length must be >= 1");
  const auto p = m.phi.size();
  const auto q = m.theta.size();
  if (burn_in < 0) burn_in = 100 + 10 * static_cast<std::int64_t>(p + q);

  std::mt19937_64 eng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(m.sigma2));
  const std::int64_t total = burn_in + length;
  std::vector<double> z(total), zeta(total);
  for (std::int64_t t = 0; t < total; ++t) {
    zeta[t] = normal(eng);
    double v = zeta[t];
    for (std::size_t i = 0; i < p; ++i) {
      const std::int64_t s = t - 1 - static_cast<std::int64_t>(i);
      if (s >= 0) v += m.phi[i] * z[s];
    }
    for (std::size_t j = 0; j < q; ++j) {
      const std::int64_t s = t - 1 - static_cast<std::int64_t>(j);
      if (s >= 0) v += m.theta[j] * zeta[s];
    }
    z[t] = v;
  }
  ArmaSample out;
  out.z.values.assign(z.begin() + burn_in, z.end());
  out.innovations.values.assign(zeta.begin() + burn_in, zeta.end());
  return out;
}

/// MA(infinity) weights psi_0..psi_{count-1}: psi_0 = 1,
/// psi_j = theta_j + sum_{i<=min(j,p)} phi_i psi_{j-i}.
[[nodiscard]] inline std::vector<double> arma_psi_weights(const ArmaModel& m, std::size_t count) {
  std::vector<double> psi(count, 0.0);
  if (count == 0) return psi;
  psi[0] = 1.0;
  for (std::size_t j = 1; j < count; ++j) {
    double v = j <= m.theta.size() ? m.theta[j - 1] : 0.0;
    const std::size_t imax = std::min(j, m.phi.size());
    for (std::size_t i = 1; i <= imax; ++i) v += m.phi[i - 1] * psi[j - i];
    psi[j] = v;
  }
  return psi;
}

/// Autocovariance gamma(0..max_lag) via the psi-weight series, truncated once
/// the tail is below tol.
[[nodiscard]] inline std::vector<double> arma_acvf(const ArmaModel& m, std::int64_t max_lag,
                                                   double tol = 1e-14) {
  validate(m);
  std::size_t count = 256;
  std::vector<double> psi;
  for (;;) {
    psi = arma_psi_weights(m, count);
    double tail = 0.0;
    const std::size_t back = std::min<std::size_t>(count, m.phi.size() + m.theta.size() + 8);
    for (std::size_t j = count - back; j < count; ++j) tail = std::max(tail, std::abs(psi[j]));
    if (tail < tol && count > static_cast<std::size_t>(max_lag) + 8) break;
    if (count > (1u << 22)) throw NoConvergence("arma_acvf: psi weights do not decay");
    count *= 2;
  }
  std::vector<double> gamma(static_cast<std::size_t>(max_lag) + 1, 0.0);
  for (std::int64_t h = 0; h <= max_lag; ++h) {
    double acc = 0.0;
    for (std::size_t j = 0; j + static_cast<std::size_t>(h) < psi.size(); ++j) {
      acc += psi[j] * psi[j + static_cast<std::size_t>(h)];
    }
    gamma[static_cast<std::size_t>(h)] = m.sigma2 * acc;
  }
  return gamma;
}

/// Minimal mean-squared error of the best linear forecast of
/// y(T) = sum_{i=1..f} w_{f-i+1} z(T+i) given the infinite past:
/// sigma2 * sum_{l=1..f} (sum_{i=l..f} w_{f-i+1} psi_{i-l})^2.
[[nodiscard]] inline double arma_msfe(const ArmaModel& m, const std::vector<double>& w) {
  validate(m);
  if (w.empty()) throw ConfigError("arma_msfe: weight vector must be nonempty");
  const auto f = static_cast<std::int64_t>(w.size());
  const auto psi = arma_psi_weights(m, static_cast<std::size_t>(f));
  double total = 0.0;
  for (std::int64_t l = 1; l <= f; ++l) {
    double s = 0.0;
    for (std::int64_t i = l; i <= f; ++i) {
      s += w[static_cast<std::size_t>(f - i)] * psi[static_cast<std::size_t>(i - l)];
    }
    total += s * s;
  }
  return m.sigma2 * total;
}

/// y(t) = sum_{i=1..f} w_{f-i+1} z(t+i); the result keeps z's origin and is
/// f observations shorter.
[[nodiscard]] inline TimeSeries aggregate_target(const TimeSeries& z, const std::vector<double>& w) {
  if (w.empty()) throw ConfigError("aggregate_target: weight vector must be nonempty");
  const auto f = static_cast<std::int64_t>(w.size());
  const auto T = static_cast<std::int64_t>(z.size());
  if (T <= f) throw InsufficientData("aggregate_target: series shorter than the horizon");
  TimeSeries y;
  y.origin = z.origin;
  y.values.resize(static_cast<std::size_t>(T - f));
  for (std::int64_t t = 0; t < T - f; ++t) {
    double acc = 0.0;
    for (std::int64_t i = 1; i <= f; ++i) {
      acc += w[static_cast<std::size_t>(f - i)] * z.values[static_cast<std::size_t>(t + i)];
    }
    y.values[static_cast<std::size_t>(t)] = acc;
  }
  return y;
}

// ---------------------------------------------------------------------------
// GARCH(1,1): z(t) = sigma(t) zeta(t), sigma^2(t) = a0 + a1 z(t-1)^2 + b sigma^2(t-1)
// ---------------------------------------------------------------------------

struct GarchModel {
  double alpha0 = 0.0;
  double alpha1 = 0.0;
  double beta = 0.0;
};

inline void validate(const GarchModel& m) {
  if (!(m.alpha0 > 0.0)) throw InvalidModel("garch: alpha0 must be > 0");
  if (m.alpha1 < 0.0 || m.beta < 0.0) throw InvalidModel("garch: alpha1, beta must be >= 0");
  if (!(m.alpha1 + m.beta < 1.0)) throw InvalidModel("garch: alpha1 + beta must be < 1");
}

[[nodiscard]] inline double garch_stationary_variance(const GarchModel& m) {
  validate(m);
  return m.alpha0 / (1.0 - m.alpha1 - m.beta);
}

struct GarchSample {
  TimeSeries z;
  TimeSeries sigma2;
};

[[nodiscard]] inline GarchSample garch_simulate(const GarchModel& m, std::int64_t length,
                                                std::uint64_t seed, std::int64_t burn_in = -1) {
  validate(m);
  if (length < 1) throw ConfigError("garch_simulate: length must be >= 1");
  if (burn_in < 0) burn_in = 500;
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::int64_t total = burn_in + length;
  std::vector<double> z(total), s2(total);
  double prev_z = 0.0;
  double prev_s2 = garch_stationary_variance(m);
  for (std::int64_t t = 0; t < total; ++t) {
    const double cur = t == 0 ? prev_s2 : m.alpha0 + m.alpha1 * prev_z * prev_z + m.beta * prev_s2;
    s2[t] = cur;
    z[t] = std::sqrt(cur) * normal(eng);
    prev_z = z[t];
    prev_s2 = cur;
  }
  GarchSample out;
  out.z.values.assign(z.begin() + burn_in, z.end());
  out.sigma2.values.assign(s2.begin() + burn_in, s2.end());
  return out;
}

/// Conditional variance of sum_{i=1..f} z(T+i) given the observed history:
/// f vbar + (sigma^2(T+1) - vbar) sum_{k=0}^{f-1} s^k with s = alpha1 + beta
/// and vbar the stationary variance.
[[nodiscard]] inline double garch_aggregate_variance_forecast(const GarchModel& m,
                                                              double sigma2_last, double z_last,
                                                              std::int64_t f) {
  validate(m);
  if (f < 1) throw ConfigError("forecast horizon must be >= 1");
  const double s = m.alpha1 + m.beta;
  const double vbar = garch_stationary_variance(m);
  const double next = m.alpha0 + m.alpha1 * z_last * z_last + m.beta * sigma2_last;
  double geom = 0.0;
  double pow_s = 1.0;
  for (std::int64_t k = 0; k < f; ++k) {
    geom += pow_s;
    pow_s *= s;
  }
  return static_cast<double>(f) * vbar + (next - vbar) * geom;
}

// ---------------------------------------------------------------------------
// ARSV: z(t) = r + sigma(t) zeta(t), log sigma^2(t) = b(t),
//       b(t+1) = lambda + alpha b(t) + w(t)
// ---------------------------------------------------------------------------

struct ArsvModel {
  double r = 0.0;
  double sigma_w = 0.0;
  double lambda = 0.0;
  double alpha = 0.0;
};

inline void validate(const ArsvModel& m) {
  if (!(std::abs(m.alpha) < 1.0)) throw InvalidModel("arsv: |alpha| must be < 1");
  if (m.sigma_w < 0.0) throw InvalidModel("arsv: sigma_w must be >= 0");
}

[[nodiscard]] inline double arsv_b_mean(const ArsvModel& m) {
  validate(m);
  return m.lambda / (1.0 - m.alpha);
}

[[nodiscard]] inline double arsv_b_variance(const ArsvModel& m) {
  validate(m);
  return m.sigma_w * m.sigma_w / (1.0 - m.alpha * m.alpha);
}

/// Var z = E sigma^2 = exp(mean_b + var_b / 2).
[[nodiscard]] inline double arsv_z_variance(const ArsvModel& m) {
  return std::exp(arsv_b_mean(m) + 0.5 * arsv_b_variance(m));
}

/// Kurtosis of z - r: 3 exp(var_b).
[[nodiscard]] inline double arsv_z_kurtosis(const ArsvModel& m) {
  return 3.0 * std::exp(arsv_b_variance(m));
}

/// First-order approximation of corr((z(t)-r)^2, (z(t+h)-r)^2) for h >= 1:
/// (exp(var_b) - 1) / (3 exp(var_b) - 1) * alpha^h.
[[nodiscard]] inline double arsv_squared_autocorr_approx(const ArsvModel& m, std::int64_t h) {
  if (h < 1) throw ConfigError("autocorrelation lag must be >= 1");
  const double e = std::exp(arsv_b_variance(m));
  return (e - 1.0) / (3.0 * e - 1.0) * std::pow(m.alpha, static_cast<double>(h));
}

struct ArsvSample {
  TimeSeries z;
  TimeSeries log_variance;
};

/// Starts from the stationary law of b, so burn_in defaults to 0. Two
/// independent substreams drive the observation and state noises.
[[nodiscard]] inline ArsvSample arsv_simulate(const ArsvModel& m, std::int64_t length,
                                              std::uint64_t seed, std::int64_t burn_in = 0) {
  validate(m);
  if (length < 1) throw ConfigError("arsv_simulate: length must be >= 1");
  std::mt19937_64 seeder(seed);
  std::mt19937_64 eng_obs(seeder());
  std::mt19937_64 eng_state(seeder());
  std::normal_distribution<double> normal(0.0, 1.0);

  const std::int64_t total = burn_in + length;
  std::vector<double> z(total), b(total);
  double bt = arsv_b_mean(m) + std::sqrt(arsv_b_variance(m)) * normal(eng_state);
  for (std::int64_t t = 0; t < total; ++t) {
    b[t] = bt;
    z[t] = m.r + std::exp(0.5 * bt) * normal(eng_obs);
    bt = m.lambda + m.alpha * bt + m.sigma_w * normal(eng_state);
  }
  ArsvSample out;
  out.z.values.assign(z.begin() + burn_in, z.end());
  out.log_variance.values.assign(b.begin() + burn_in, b.end());
  return out;
}

}  // namespace tdrc
