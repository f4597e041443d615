#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tdrc/errors.hpp"
#include "tdrc/kernel.hpp"
#include "tdrc/time_series.hpp"

namespace tdrc {

/// Time-delay reservoir with N neurons per delay interval. One input step
/// updates the neurons in cascade:
///   x_i(t) = e^{-xi} x_{i-1}(t) + (1 - e^{-xi}) f(x_i(t-1), c_i z(t), theta)
/// with x_0(t) = x_N(t-1) and xi = log(1 + separation).
struct TdrParams {
  int neurons = 1;
  double separation = 1.0;
  std::shared_ptr<const KernelMap> kernel;
  std::vector<double> theta;
  Eigen::VectorXd mask;
};

inline void validate(const TdrParams& p) {
  if (p.neurons < 1) throw ConfigError("tdr: neurons must be >= 1");
  if (!(p.separation > 0.0)) throw ConfigError("tdr: separation must be > 0");
  if (!p.kernel) throw ConfigError("tdr: kernel not set");
  p.kernel->check_theta(p.theta);
  if (p.mask.size() != p.neurons) throw ConfigError("tdr: mask size must equal neurons");
  if (!p.mask.allFinite()) throw ConfigError("tdr: mask must be finite");
}

/// e^{-xi} = 1 / (1 + separation), exactly.
[[nodiscard]] inline double state_decay(const TdrParams& p) { return 1.0 / (1.0 + p.separation); }

[[nodiscard]] inline Eigen::VectorXd make_uniform_mask(int neurons, std::uint64_t seed,
                                                       double lo = -1.0, double hi = 1.0) {
  if (neurons < 1) throw ConfigError("mask: neurons must be >= 1");
  std::mt19937_64 eng(seed);
  std::uniform_real_distribution<double> unif(lo, hi);
  Eigen::VectorXd mask(neurons);
  for (int i = 0; i < neurons; ++i) mask(i) = unif(eng);
  return mask;
}

[[nodiscard]] inline Eigen::VectorXd tdr_step(const TdrParams& p, const Eigen::VectorXd& x_prev,
                                              double z) {
  const int N = p.neurons;
  const double e = state_decay(p);
  const double gain = 1.0 - e;
  const std::span<const double> theta(p.theta);
  Eigen::VectorXd x(N);
  double carry = x_prev(N - 1);
  for (int i = 0; i < N; ++i) {
    const double fi = p.kernel->value(x_prev(i), p.mask(i) * z, theta);
    carry = e * carry + gain * fi;
    if (!std::isfinite(carry)) {
      throw NonFiniteState("tdr_step: neuron " + std::to_string(i + 1) + " became non-finite");
    }
    x(i) = carry;
  }
  return x;
}

/// Reservoir trajectory: row t holds the N neuron states after consuming
/// input observation t.
struct StatePath {
  Eigen::MatrixXd states;
  std::int64_t origin = 0;

  [[nodiscard]] std::int64_t length() const { return states.rows(); }

  void save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "t";
    for (Eigen::Index j = 0; j < states.cols(); ++j) out << ",x_" << (j + 1);
    out << "\n";
    out.precision(17);
    for (Eigen::Index i = 0; i < states.rows(); ++i) {
      out << (origin + i);
      for (Eigen::Index j = 0; j < states.cols(); ++j) out << "," << states(i, j);
      out << "\n";
    }
    if (!out) throw IoError("write failed: " + path.string());
  }
};

[[nodiscard]] inline StatePath tdr_run(const TdrParams& p, const TimeSeries& input,
                                       const Eigen::VectorXd& x_init) {
  validate(p);
  if (x_init.size() != p.neurons) throw ConfigError("tdr_run: x_init size must equal neurons");
  const auto T = static_cast<Eigen::Index>(input.size());
  StatePath path;
  path.origin = input.origin;
  path.states.resize(T, p.neurons);
  Eigen::VectorXd x = x_init;
  for (Eigen::Index t = 0; t < T; ++t) {
    x = tdr_step(p, x, input.values[static_cast<std::size_t>(t)]);
    path.states.row(t) = x.transpose();
  }
  return path;
}

// ---------------------------------------------------------------------------
// Self-consistent zero-input state and the linearization around it
// ---------------------------------------------------------------------------

struct FixedPointResult {
  double x0 = 0.0;
  double derivative = 0.0;  // kernel state-derivative at the fixed point
  bool stable = false;      // |derivative| < 1
  int iterations = 0;
};

/// Solves f(x, 0, theta) = x by safeguarded Newton within a bracket that must
/// contain a sign change of f(x, 0) - x.
[[nodiscard]] inline FixedPointResult solve_fixed_point(
    const KernelMap& kernel, std::span<const double> theta,
    std::optional<std::pair<double, double>> bracket = std::nullopt) {
  kernel.check_theta(theta);
  auto [lo, hi] = bracket ? *bracket : kernel.fixed_point_bracket(theta);
  if (!(lo < hi)) throw ConfigError("fixed point bracket must satisfy lo < hi");
  const auto g = [&](double x) { return kernel.value(x, 0.0, theta) - x; };
  double glo = g(lo);
  double ghi = g(hi);
  if (glo == 0.0) lo = hi;  // degenerate: root on the boundary
  if (glo * ghi > 0.0) {
    throw NoConvergence("fixed point: no sign change over the bracket");
  }

  double x = 0.5 * (lo + hi);
  int iterations = 0;
  for (; iterations < 200; ++iterations) {
    const double gx = g(x);
    if (std::abs(gx) < 1e-13) break;
    if (gx * glo >= 0.0) {
      lo = x;
      glo = gx;
    } else {
      hi = x;
      ghi = gx;
    }
    const double dg = kernel.dx(x, 0.0, theta) - 1.0;
    double next = std::abs(dg) > 1e-12 ? x - gx / dg : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - x) < 1e-16 * std::max(1.0, std::abs(x))) {
      x = next;
      break;
    }
    x = next;
  }
  if (std::abs(g(x)) > 1e-12) {
    throw NoConvergence("fixed point: residual " + std::to_string(g(x)) + " above tolerance");
  }
  FixedPointResult out;
  out.x0 = x;
  out.derivative = kernel.dx(x, 0.0, theta);
  out.stable = std::abs(out.derivative) < 1.0;
  out.iterations = iterations;
  return out;
}

/// Jacobian of the one-step state map at the zero-input fixed point:
/// A_{jk} = e^{-j xi} [k = N] + (1 - e^{-xi}) e^{-(j-k) xi} f_x  for k <= j.
[[nodiscard]] inline Eigen::MatrixXd build_jacobian(const TdrParams& p, double x0) {
  validate(p);
  const int N = p.neurons;
  const double e = state_decay(p);
  const double gain = 1.0 - e;
  const double fx = p.kernel->dx(x0, 0.0, std::span<const double>(p.theta));
  std::vector<double> e_pow(static_cast<std::size_t>(N) + 1, 1.0);
  for (int m = 1; m <= N; ++m) e_pow[static_cast<std::size_t>(m)] = e_pow[static_cast<std::size_t>(m - 1)] * e;

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(N, N);
  for (int j = 0; j < N; ++j) {
    for (int k = 0; k <= j; ++k) {
      a(j, k) = gain * e_pow[static_cast<std::size_t>(j - k)] * fx;
    }
    a(j, N - 1) += e_pow[static_cast<std::size_t>(j + 1)];
  }
  return a;
}

/// Input polynomial coefficients a_r^j (column r-1, row j-1):
/// a_r^j = (1 - e^{-xi}) sum_{k<=j} e^{-(j-k) xi} b_r c_k^r,
/// where b_r is the r-th input Taylor coefficient at the fixed point.
[[nodiscard]] inline Eigen::MatrixXd build_input_polynomials(const TdrParams& p, double x0,
                                                             int order) {
  validate(p);
  if (order < 1) throw ConfigError("polynomial order must be >= 1");
  const int N = p.neurons;
  const double e = state_decay(p);
  const double gain = 1.0 - e;
  const auto b = input_taylor_coefficients(*p.kernel, std::span<const double>(p.theta), x0, order);

  Eigen::MatrixXd a(N, order);
  for (int r = 1; r <= order; ++r) {
    double mask_pow_prev = 1.0;
    for (int i = 0; i < r; ++i) mask_pow_prev *= p.mask(0);
    a(0, r - 1) = gain * b[static_cast<std::size_t>(r - 1)] * mask_pow_prev;
    for (int j = 1; j < N; ++j) {
      double mask_pow = 1.0;
      for (int i = 0; i < r; ++i) mask_pow *= p.mask(j);
      a(j, r - 1) = e * a(j - 1, r - 1) + gain * b[static_cast<std::size_t>(r - 1)] * mask_pow;
    }
  }
  return a;
}

// ---------------------------------------------------------------------------
// Ridge readout
// ---------------------------------------------------------------------------

struct Readout {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  double lambda = 0.0;
};

/// Ridge regression of y on the state rows:
/// W = (hat Gamma(0) + lambda I)^{-1} hat Cov(y, x), a = ybar - W' xbar.
[[nodiscard]] inline Readout train_readout(const Eigen::MatrixXd& states,
                                           const Eigen::VectorXd& teaching, double lambda) {
  const Eigen::Index M = states.rows();
  const Eigen::Index N = states.cols();
  if (M != teaching.size()) throw ConfigError("train_readout: row/teaching size mismatch");
  if (M < 2) throw InsufficientData("train_readout: need at least two samples");
  if (lambda < 0.0) throw ConfigError("train_readout: lambda must be >= 0");

  const Eigen::RowVectorXd mean_x = states.colwise().mean();
  const double mean_y = teaching.mean();
  const Eigen::MatrixXd xc = states.rowwise() - mean_x;
  const Eigen::VectorXd yc = teaching.array() - mean_y;
  const Eigen::MatrixXd gamma = (xc.transpose() * xc) / static_cast<double>(M);
  const Eigen::VectorXd cov = (xc.transpose() * yc) / static_cast<double>(M);

  Eigen::MatrixXd system = gamma;
  system.diagonal().array() += lambda;

  if (lambda == 0.0) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(system);
    const double max_ev = es.eigenvalues().maxCoeff();
    const double min_ev = es.eigenvalues().minCoeff();
    if (!(min_ev > static_cast<double>(N) * 1e-14 * std::max(max_ev, 1e-300))) {
      throw SingularSystem("train_readout: state covariance is rank-deficient and lambda = 0");
    }
  }

  Eigen::LDLT<Eigen::MatrixXd> ldlt(system);
  Eigen::VectorXd w = ldlt.solve(cov);
  // one refinement pass keeps the residual within tolerance near ill-conditioning
  w += ldlt.solve(cov - system * w);
  const double resid = (system * w - cov).norm();
  if (resid > 1e-8 * std::max(cov.norm(), 1e-300)) {
    throw SingularSystem("train_readout: solve residual " + std::to_string(resid) +
                         " above tolerance");
  }

  Readout out;
  out.weights = std::move(w);
  out.intercept = mean_y - out.weights.dot(mean_x.transpose());
  out.lambda = lambda;
  return out;
}

[[nodiscard]] inline Eigen::VectorXd predict(const Eigen::MatrixXd& states, const Readout& r) {
  if (states.cols() != r.weights.size()) throw ConfigError("predict: weight size mismatch");
  return (states * r.weights).array() + r.intercept;
}

struct NmseReport {
  double mse = 0.0;
  double nmse = 0.0;
  double var_y = 0.0;
  double capacity = 0.0;  // clamp(1 - nmse, [0, 1])
};

[[nodiscard]] inline NmseReport evaluate_nmse(const Eigen::VectorXd& prediction,
                                              const Eigen::VectorXd& truth) {
  if (prediction.size() != truth.size()) throw ConfigError("evaluate_nmse: size mismatch");
  if (truth.size() < 2) throw InsufficientData("evaluate_nmse: need at least two samples");
  const double mean_y = truth.mean();
  const double var_y = (truth.array() - mean_y).square().mean();
  const double scale = std::max(1.0, truth.array().square().mean());
  if (var_y <= 1e-24 * scale) {
    throw ZeroVarianceTeaching("evaluate_nmse: teaching signal has no variance");
  }
  NmseReport out;
  out.var_y = var_y;
  out.mse = (prediction - truth).array().square().mean();
  out.nmse = out.mse / var_y;
  out.capacity = std::clamp(1.0 - out.nmse, 0.0, 1.0);
  return out;
}

}  // namespace tdrc
