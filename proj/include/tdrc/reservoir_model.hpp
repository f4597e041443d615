#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tdrc/errors.hpp"
#include "tdrc/moments.hpp"
#include "tdrc/tdr.hpp"

namespace tdrc {

/// Budgets for the infinite sums behind the closed-form state moments:
/// tol is the absolute cutoff on a summed term, k_max the hard cap on matrix
/// powers, h_max the largest input autocovariance lag carried.
struct TruncationPolicy {
  double tol = 1e-10;
  int k_max = 2000;
  int h_max = 50;
};

/// Linearized reservoir around the zero-input fixed point:
/// x(t) = x0 + A (x(t-1) - x0) + eps(z(t)),  eps_i(z) = sum_r a_r^i z^r.
class ReservoirModel {
 public:
  ReservoirModel(double fixed_point, Eigen::MatrixXd a, Eigen::MatrixXd poly)
      : fixed_point_(fixed_point), a_(std::move(a)), poly_(std::move(poly)) {
    if (a_.rows() != a_.cols()) throw InvalidModel("model: A must be square");
    if (poly_.rows() != a_.rows()) throw InvalidModel("model: polynomial row count mismatch");
    if (poly_.cols() < 1) throw InvalidModel("model: polynomial order must be >= 1");
    if (!a_.allFinite() || !poly_.allFinite() || !std::isfinite(fixed_point_)) {
      throw InvalidModel("model: non-finite entries");
    }
    const Eigen::VectorXcd ev = Eigen::EigenSolver<Eigen::MatrixXd>(a_, false).eigenvalues();
    spectral_radius_ = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
      spectral_radius_ = std::max(spectral_radius_, std::abs(ev[i]));
    }
    if (!(spectral_radius_ < 1.0)) {
      throw InvalidModel("model: spectral radius " + std::to_string(spectral_radius_) +
                         " is not < 1");
    }
    x0_ = Eigen::VectorXd::Constant(a_.rows(), fixed_point_);
  }

  [[nodiscard]] int neurons() const { return static_cast<int>(a_.rows()); }
  [[nodiscard]] int order() const { return static_cast<int>(poly_.cols()); }
  [[nodiscard]] double fixed_point() const { return fixed_point_; }
  [[nodiscard]] const Eigen::VectorXd& x0() const { return x0_; }
  [[nodiscard]] const Eigen::MatrixXd& a() const { return a_; }
  [[nodiscard]] const Eigen::MatrixXd& poly() const { return poly_; }
  [[nodiscard]] double spectral_radius() const { return spectral_radius_; }

  [[nodiscard]] Eigen::VectorXd epsilon(double z) const {
    Eigen::VectorXd zp(order());
    double p = 1.0;
    for (int r = 0; r < order(); ++r) {
      p *= z;
      zp(r) = p;
    }
    return poly_ * zp;
  }

 private:
  double fixed_point_;
  Eigen::MatrixXd a_;
  Eigen::MatrixXd poly_;
  Eigen::VectorXd x0_;
  double spectral_radius_ = 0.0;
};

[[nodiscard]] inline ReservoirModel make_reservoir_model(const TdrParams& params, int order) {
  const FixedPointResult fp =
      solve_fixed_point(*params.kernel, std::span<const double>(params.theta));
  return ReservoirModel(fp.x0, build_jacobian(params, fp.x0),
                        build_input_polynomials(params, fp.x0, order));
}

// ---------------------------------------------------------------------------
// Moments of the driving term and of the stationary state
// ---------------------------------------------------------------------------

[[nodiscard]] inline Eigen::VectorXd epsilon_mean(const ReservoirModel& model,
                                                  const AutomomentProvider& provider) {
  Eigen::VectorXd mu(model.order());
  for (int r = 1; r <= model.order(); ++r) {
    mu(r - 1) = provider.automoment(MomentSpec{{r}, {}});
  }
  return model.poly() * mu;
}

/// Gamma_eps(h)_{ij} = Cov(eps_i(t), eps_j(t+h))
///                   = sum_{r,s} a_r^i a_s^j mu_z^{r,s}(h) - mu_eps mu_eps'.
[[nodiscard]] inline Eigen::MatrixXd epsilon_autocovariance(const ReservoirModel& model,
                                                            const AutomomentProvider& provider,
                                                            std::int64_t h) {
  const int R = model.order();
  Eigen::MatrixXd mrs(R, R);
  for (int r = 1; r <= R; ++r) {
    for (int s = 1; s <= R; ++s) {
      mrs(r - 1, s - 1) = provider.automoment(MomentSpec{{r, s}, {h}});
    }
  }
  const Eigen::VectorXd mu_eps = epsilon_mean(model, provider);
  return model.poly() * mrs * model.poly().transpose() - mu_eps * mu_eps.transpose();
}

/// mu_x = x0 + (I - A)^{-1} mu_eps.
[[nodiscard]] inline Eigen::VectorXd state_mean(const ReservoirModel& model,
                                                const AutomomentProvider& provider) {
  const Eigen::VectorXd mu_eps = epsilon_mean(model, provider);
  const Eigen::MatrixXd m =
      Eigen::MatrixXd::Identity(model.neurons(), model.neurons()) - model.a();
  return model.x0() + Eigen::PartialPivLU<Eigen::MatrixXd>(m).solve(mu_eps);
}

/// X = sum_{j>=0} A^j C (A^j)', summed until a term drops below tol.
[[nodiscard]] inline std::pair<Eigen::MatrixXd, int> lyapunov_series_sum(
    const Eigen::MatrixXd& a, const Eigen::MatrixXd& c, const TruncationPolicy& policy) {
  Eigen::MatrixXd term = c;
  Eigen::MatrixXd total = c;
  int k = 0;
  while (term.cwiseAbs().maxCoeff() >= policy.tol) {
    if (k >= policy.k_max) {
      throw TruncationBudgetExceeded("lyapunov series: no convergence within k_max = " +
                                     std::to_string(policy.k_max));
    }
    term = a * term * a.transpose();
    total += term;
    ++k;
  }
  return {total, k};
}

struct StateCovarianceResult {
  Eigen::MatrixXd gamma0;
  int terms_used = 0;
};

/// Gamma(0) = sum_{j,k>=0} A^j Gamma_eps(k-j) (A^k)'. Grouping by the lag
/// difference m = k - j turns each band into a Lyapunov-type series:
/// Gamma(0) = S_0 + sum_{m=1..h_max} (S_m + S_m') with
/// S_m = sum_j A^j [Gamma_eps(m) (A^m)'] (A^j)'.
[[nodiscard]] inline StateCovarianceResult state_autocovariance0(
    const ReservoirModel& model, const AutomomentProvider& provider,
    const TruncationPolicy& policy) {
  const int n = model.neurons();
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd a_pow = Eigen::MatrixXd::Identity(n, n);
  int terms_used = 0;
  for (int m = 0; m <= policy.h_max; ++m) {
    const Eigen::MatrixXd geps = epsilon_autocovariance(model, provider, m);
    const Eigen::MatrixXd c = geps * a_pow.transpose();
    if (c.cwiseAbs().maxCoeff() > 0.0) {
      auto [s_m, terms] = lyapunov_series_sum(model.a(), c, policy);
      terms_used = std::max(terms_used, terms);
      if (m == 0) {
        total += s_m;
      } else {
        total += s_m + s_m.transpose();
      }
    }
    a_pow = a_pow * model.a();
  }
  return {0.5 * (total + total.transpose()), terms_used};
}

/// x(t) = x0 + A (x(t-1) - x0) + eps(z(t)), started at x_init (default x0).
[[nodiscard]] inline StatePath simulate_model_recursion(
    const ReservoirModel& model, const TimeSeries& input,
    std::optional<Eigen::VectorXd> x_init = std::nullopt) {
  const auto T = static_cast<Eigen::Index>(input.size());
  const int n = model.neurons();
  if (x_init && x_init->size() != n) {
    throw ConfigError("simulate_model_recursion: x_init size mismatch");
  }
  StatePath path;
  path.origin = input.origin;
  path.states.resize(T, n);
  Eigen::VectorXd dev = x_init ? Eigen::VectorXd(*x_init - model.x0())
                               : Eigen::VectorXd(Eigen::VectorXd::Zero(n));
  for (Eigen::Index t = 0; t < T; ++t) {
    dev = model.a() * dev + model.epsilon(input.values[static_cast<std::size_t>(t)]);
    if (!dev.allFinite()) throw NonFiniteState("model recursion produced non-finite state");
    path.states.row(t) = (model.x0() + dev).transpose();
  }
  return path;
}

// ---------------------------------------------------------------------------
// Task definitions
// ---------------------------------------------------------------------------

/// y(t) = sum_{j=1..f+h+1} L_j z(t+f+1-j): looks f steps ahead and h back.
struct LinearTask {
  Eigen::VectorXd coeffs;
  std::int64_t f = 0;
  std::int64_t h = 0;
};

/// y(t) = sum_{j,k} Q_{jk} z(t+f+1-j) z(t+f+1-k) over the same window.
struct QuadraticTask {
  Eigen::MatrixXd coeffs;
  std::int64_t f = 0;
  std::int64_t h = 0;
};

/// y is a stationary functional of z known only through cross moments
/// E[y(t) z(t+h)^r] plus its own mean and variance.
struct FilterTask {
  ComomentTable comoments;
  double mean_y = 0.0;
  double var_y = 0.0;
};

inline void validate(const LinearTask& t) {
  if (t.f < 0 || t.h < 0) throw ConfigError("task: f and h must be >= 0");
  if (t.coeffs.size() != t.f + t.h + 1) throw ConfigError("task: coefficient size must be f+h+1");
  if (!t.coeffs.allFinite()) throw ConfigError("task: coefficients must be finite");
}

inline void validate(const QuadraticTask& t) {
  if (t.f < 0 || t.h < 0) throw ConfigError("task: f and h must be >= 0");
  if (t.coeffs.rows() != t.f + t.h + 1 || t.coeffs.cols() != t.f + t.h + 1) {
    throw ConfigError("task: coefficient matrix must be (f+h+1) x (f+h+1)");
  }
  if (!t.coeffs.allFinite()) throw ConfigError("task: coefficients must be finite");
}

/// y(t) = z(t - lag).
[[nodiscard]] inline LinearTask pure_memory_task(std::int64_t lag) {
  if (lag < 0) throw ConfigError("memory lag must be >= 0");
  LinearTask t;
  t.f = 0;
  t.h = lag;
  t.coeffs = Eigen::VectorXd::Zero(lag + 1);
  t.coeffs(lag) = 1.0;
  return t;
}

/// y(t) = sum_{i=1..f} w_{f-i+1} z(t+i) as a linear window task.
[[nodiscard]] inline LinearTask linear_task_for_aggregate(const std::vector<double>& w) {
  if (w.empty()) throw ConfigError("aggregate weights must be nonempty");
  const auto f = static_cast<std::int64_t>(w.size());
  LinearTask t;
  t.f = f;
  t.h = 0;
  t.coeffs = Eigen::VectorXd::Zero(f + 1);
  for (std::int64_t j = 0; j < f; ++j) t.coeffs(j) = w[static_cast<std::size_t>(j)];
  return t;
}

/// y(t) = (sum_{i=1..f} z(t+i))^2; the window is padded by one so the task
/// satisfies f, h >= 0.
[[nodiscard]] inline QuadraticTask quadratic_task_for_garch_aggregate(std::int64_t f) {
  if (f < 1) throw ConfigError("aggregation horizon must be >= 1");
  QuadraticTask t;
  t.f = f;
  t.h = 0;
  t.coeffs = Eigen::MatrixXd::Zero(f + 1, f + 1);
  t.coeffs.topLeftCorner(f, f).setOnes();
  return t;
}

// ---------------------------------------------------------------------------
// Task covariances
// ---------------------------------------------------------------------------

struct TaskMoments {
  Eigen::VectorXd cov;
  double var_y = 0.0;
  double mean_y = 0.0;
};

namespace detail {

/// Accumulates sum_k A^k bracket_k. bracket(k) may be exactly zero early on
/// (finite-memory inputs), so the size-based stop only arms beyond k_floor.
template <typename BracketFn>
[[nodiscard]] Eigen::VectorXd matrix_power_series(const Eigen::MatrixXd& a, BracketFn bracket,
                                                  std::int64_t k_floor,
                                                  const TruncationPolicy& policy) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd a_pow = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(n);
  for (std::int64_t k = 0;; ++k) {
    if (k > policy.k_max) {
      throw TruncationBudgetExceeded("task covariance series: no convergence within k_max");
    }
    const Eigen::VectorXd term = a_pow * bracket(k);
    total += term;
    if (k >= k_floor && term.cwiseAbs().maxCoeff() < policy.tol) break;
    a_pow = a_pow * a;
  }
  return total;
}

}  // namespace detail

/// Closed-form Cov(y, x), Var y, E y for a linear window task:
/// Cov = sum_k A^k [ sum_j L_j u_{j,k} - mu_y mu_eps ],
/// (u_{j,k})_i = sum_s a_s^i mu_z^{1,s}(j-f-1-k).
[[nodiscard]] inline TaskMoments linear_task_cov(const ReservoirModel& model,
                                                 const AutomomentProvider& provider,
                                                 const LinearTask& task,
                                                 const TruncationPolicy& policy) {
  validate(task);
  const std::int64_t w = task.f + task.h + 1;
  const int R = model.order();
  const double mu_z = provider.mean();
  const Eigen::VectorXd mu_eps = epsilon_mean(model, provider);
  const double mean_y = mu_z * task.coeffs.sum();

  double var_y = 0.0;
  for (std::int64_t j = 1; j <= w; ++j) {
    for (std::int64_t k = 1; k <= w; ++k) {
      if (task.coeffs(j - 1) == 0.0 || task.coeffs(k - 1) == 0.0) continue;
      var_y += task.coeffs(j - 1) * task.coeffs(k - 1) *
               (provider.automoment(MomentSpec{{1, 1}, {j - k}}) - mu_z * mu_z);
    }
  }

  std::map<std::int64_t, Eigen::VectorXd> cache;
  const auto u_for_lag = [&](std::int64_t lag) -> const Eigen::VectorXd& {
    auto it = cache.find(lag);
    if (it == cache.end()) {
      Eigen::VectorXd ms(R);
      for (int s = 1; s <= R; ++s) ms(s - 1) = provider.automoment(MomentSpec{{1, s}, {lag}});
      it = cache.emplace(lag, model.poly() * ms).first;
    }
    return it->second;
  };

  const std::int64_t k_floor = policy.h_max + w + 1;
  TaskMoments out;
  out.mean_y = mean_y;
  out.var_y = var_y;
  out.cov = detail::matrix_power_series(
      model.a(),
      [&](std::int64_t k) {
        Eigen::VectorXd v = -mean_y * mu_eps;
        for (std::int64_t j = 1; j <= w; ++j) {
          if (task.coeffs(j - 1) == 0.0) continue;
          v += task.coeffs(j - 1) * u_for_lag(j - task.f - 1 - k);
        }
        return v;
      },
      k_floor, policy);
  return out;
}

/// Closed-form Cov(y, x), Var y, E y for a quadratic window task:
/// Cov = sum_k A^k [ sum_{ij} Q_{ij} w_{ijk} - mu_y mu_eps ],
/// (w_{ijk})_n = sum_s a_s^n mu_z^{1,1,s}(i-j, i-k-f-1).
[[nodiscard]] inline TaskMoments quadratic_task_cov(const ReservoirModel& model,
                                                    const AutomomentProvider& provider,
                                                    const QuadraticTask& task,
                                                    const TruncationPolicy& policy) {
  validate(task);
  const std::int64_t w = task.f + task.h + 1;
  const int R = model.order();
  const Eigen::VectorXd mu_eps = epsilon_mean(model, provider);

  double mean_y = 0.0;
  for (std::int64_t i = 1; i <= w; ++i) {
    for (std::int64_t j = 1; j <= w; ++j) {
      if (task.coeffs(i - 1, j - 1) == 0.0) continue;
      mean_y += task.coeffs(i - 1, j - 1) * provider.automoment(MomentSpec{{1, 1}, {i - j}});
    }
  }

  double ey2 = 0.0;
  for (std::int64_t i = 1; i <= w; ++i) {
    for (std::int64_t j = 1; j <= w; ++j) {
      if (task.coeffs(i - 1, j - 1) == 0.0) continue;
      for (std::int64_t k = 1; k <= w; ++k) {
        for (std::int64_t l = 1; l <= w; ++l) {
          if (task.coeffs(k - 1, l - 1) == 0.0) continue;
          ey2 += task.coeffs(i - 1, j - 1) * task.coeffs(k - 1, l - 1) *
                 provider.automoment(MomentSpec{{1, 1, 1, 1}, {i - j, i - k, i - l}});
        }
      }
    }
  }

  std::map<std::pair<std::int64_t, std::int64_t>, Eigen::VectorXd> cache;
  const auto m_for_lags = [&](std::int64_t d1, std::int64_t d2) -> const Eigen::VectorXd& {
    auto it = cache.find({d1, d2});
    if (it == cache.end()) {
      Eigen::VectorXd ms(R);
      for (int s = 1; s <= R; ++s) {
        ms(s - 1) = provider.automoment(MomentSpec{{1, 1, s}, {d1, d2}});
      }
      it = cache.emplace(std::make_pair(d1, d2), std::move(ms)).first;
    }
    return it->second;
  };

  const std::int64_t k_floor = policy.h_max + 2 * w + 1;
  TaskMoments out;
  out.mean_y = mean_y;
  out.var_y = ey2 - mean_y * mean_y;
  out.cov = detail::matrix_power_series(
      model.a(),
      [&](std::int64_t k) {
        Eigen::VectorXd msum = Eigen::VectorXd::Zero(R);
        for (std::int64_t i = 1; i <= w; ++i) {
          for (std::int64_t j = 1; j <= w; ++j) {
            if (task.coeffs(i - 1, j - 1) == 0.0) continue;
            msum += task.coeffs(i - 1, j - 1) * m_for_lags(i - j, i - k - task.f - 1);
          }
        }
        Eigen::VectorXd v = model.poly() * msum - mean_y * mu_eps;
        return v;
      },
      k_floor, policy);
  return out;
}

/// Closed-form Cov(y, x) for a filter task:
/// Cov = sum_{j=0..h_max} A^j (u_j - mean_y mu_eps),
/// (u_j)_i = sum_r a_r^i E[y(t) z(t-j)^r].
/// strict_printed_form centers with mean_z instead of mean_y.
[[nodiscard]] inline Eigen::VectorXd filter_task_cov(const ReservoirModel& model,
                                                     const ComomentTable& comoments, double mean_z,
                                                     const Eigen::VectorXd& mu_eps,
                                                     const TruncationPolicy& policy,
                                                     bool strict_printed_form = false) {
  const int R = model.order();
  if (comoments.max_order() < R) {
    throw MissingMoment("filter task: comoment table order below the model order");
  }
  const double center = strict_printed_form ? mean_z : comoments.mean_y();
  const std::int64_t j_hi = std::min<std::int64_t>(policy.h_max, -comoments.lag_min());
  const int n = model.neurons();
  Eigen::MatrixXd a_pow = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd total = Eigen::VectorXd::Zero(n);
  for (std::int64_t j = 0; j <= j_hi; ++j) {
    Eigen::VectorXd mr(R);
    for (int r = 1; r <= R; ++r) mr(r - 1) = comoments.comoment(r, -j);
    total += a_pow * (model.poly() * mr - center * mu_eps);
    a_pow = a_pow * model.a();
  }
  return total;
}

// ---------------------------------------------------------------------------
// Capacity
// ---------------------------------------------------------------------------

struct CapacityReport {
  double capacity = 0.0;      // clamped to [0, 1]
  double capacity_raw = 0.0;  // before clamping
  double mse = 0.0;
  double var_y = 0.0;
  double lambda = 0.0;
  double gamma0_condition = 0.0;  // condition number of Gamma(0) + lambda I
  int truncation_terms_used = 0;
  bool clamped = false;
  std::string warning;
};

/// C = Cov' (G + lambda I)^{-1} (G + 2 lambda I) (G + lambda I)^{-1} Cov / Var y,
/// reported with mse = Var y - numerator.
[[nodiscard]] inline CapacityReport capacity_from_components(const Eigen::MatrixXd& gamma0,
                                                             const Eigen::VectorXd& cov,
                                                             double var_y, double lambda) {
  if (gamma0.rows() != gamma0.cols() || gamma0.rows() != cov.size()) {
    throw ConfigError("capacity: dimension mismatch");
  }
  if (lambda < 0.0) throw ConfigError("capacity: lambda must be >= 0");
  if (!(var_y > 0.0)) throw ZeroVarianceTeaching("capacity: target variance must be > 0");

  const Eigen::MatrixXd sym = 0.5 * (gamma0 + gamma0.transpose());
  Eigen::MatrixXd system = sym;
  system.diagonal().array() += lambda;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(system);
  const double max_ev = es.eigenvalues().maxCoeff();
  const double min_ev = es.eigenvalues().minCoeff();
  if (lambda == 0.0 && !(min_ev > static_cast<double>(gamma0.rows()) * 1e-14 *
                             std::max(max_ev, 1e-300))) {
    throw SingularGamma("capacity: Gamma(0) is singular and lambda = 0");
  }

  Eigen::LDLT<Eigen::MatrixXd> ldlt(system);
  Eigen::VectorXd u = ldlt.solve(cov);
  u += ldlt.solve(cov - system * u);

  Eigen::MatrixXd middle = sym;
  middle.diagonal().array() += 2.0 * lambda;
  const double numerator = u.dot(middle * u);

  CapacityReport out;
  out.var_y = var_y;
  out.lambda = lambda;
  out.capacity_raw = numerator / var_y;
  out.mse = var_y - numerator;
  out.gamma0_condition = max_ev / std::max(min_ev, 1e-300);
  out.capacity = std::clamp(out.capacity_raw, 0.0, 1.0);
  out.clamped = out.capacity != out.capacity_raw;
  if (out.capacity_raw > 1.0 + 1e-8 || out.capacity_raw < -1e-8) {
    out.warning = "capacity outside [0, 1] beyond tolerance before clamping";
  }
  return out;
}

}  // namespace tdrc
