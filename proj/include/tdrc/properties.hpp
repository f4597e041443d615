#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "tdrc/errors.hpp"
#include "tdrc/reservoir_model.hpp"
#include "tdrc/tdr.hpp"
#include "tdrc/time_series.hpp"

namespace tdrc {

/// A state-producing system under test: maps an input series to the matrix of
/// visited states (row t = state after consuming observation t).
using SystemRunner = std::function<Eigen::MatrixXd(const TimeSeries&)>;

[[nodiscard]] inline SystemRunner make_system(const TdrParams& params, Eigen::VectorXd x_init) {
  return [params, x_init = std::move(x_init)](const TimeSeries& input) {
    return tdr_run(params, input, x_init).states;
  };
}

[[nodiscard]] inline SystemRunner make_system(const ReservoirModel& model) {
  return [model](const TimeSeries& input) { return simulate_model_recursion(model, input).states; };
}

// ---------------------------------------------------------------------------
// Separation: distinct input histories produce distinct states
// ---------------------------------------------------------------------------

struct SeparationProbe {
  std::int64_t t_perturb = 0;
  double delta = 1e-3;
  std::int64_t horizon = 20;
  double gap_floor = 1e-12;
};

struct SeparationReport {
  bool pass = false;
  double min_gap = 0.0;
  std::int64_t min_gap_time = 0;
  std::vector<double> gaps;  // per step from t_perturb onward
};

/// Bumps one input observation by delta and requires the two state paths to
/// stay separated (sup-norm gap above gap_floor) over the horizon.
[[nodiscard]] inline SeparationReport check_separation(const SystemRunner& system,
                                                       const TimeSeries& base_input,
                                                       const SeparationProbe& probe) {
  const auto T = static_cast<std::int64_t>(base_input.size());
  if (probe.t_perturb < 0 || probe.t_perturb >= T) {
    throw ConfigError("separation probe: t_perturb outside the input range");
  }
  if (probe.delta == 0.0) throw ConfigError("separation probe: delta must be nonzero");
  if (probe.horizon < 0) throw ConfigError("separation probe: horizon must be >= 0");

  TimeSeries bumped = base_input;
  bumped.values[static_cast<std::size_t>(probe.t_perturb)] += probe.delta;
  const Eigen::MatrixXd sa = system(base_input);
  const Eigen::MatrixXd sb = system(bumped);

  SeparationReport report;
  report.min_gap = std::numeric_limits<double>::infinity();
  const std::int64_t t_end = std::min<std::int64_t>(T - 1, probe.t_perturb + probe.horizon);
  for (std::int64_t t = probe.t_perturb; t <= t_end; ++t) {
    const double gap = (sa.row(t) - sb.row(t)).cwiseAbs().maxCoeff();
    report.gaps.push_back(gap);
    if (gap < report.min_gap) {
      report.min_gap = gap;
      report.min_gap_time = t;
    }
  }
  report.pass = report.min_gap > probe.gap_floor;
  return report;
}

// ---------------------------------------------------------------------------
// Uniform fading memory: histories agreeing recently end up uniformly close
// ---------------------------------------------------------------------------

struct FadingMemoryProbe {
  int history = 300;       // input length per trial
  int h_eps = 20;          // the last h_eps+1 inputs agree within delta_eps
  double delta_eps = 1e-3;
  double epsilon = 1e-2;   // required closeness of the final states
  double input_bound = 1.0;
  int trials = 200;
};

struct FadingMemoryReport {
  bool pass = false;
  double max_gap = 0.0;
  int violations = 0;
  double analytic_bound = std::numeric_limits<double>::quiet_NaN();
  double a_norm = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

[[nodiscard]] inline std::pair<TimeSeries, TimeSeries> fading_memory_pair(
    const FadingMemoryProbe& probe, std::mt19937_64& eng) {
  std::uniform_real_distribution<double> unif(-probe.input_bound, probe.input_bound);
  std::uniform_real_distribution<double> wiggle(-1.0, 1.0);
  TimeSeries a, b;
  a.values.resize(static_cast<std::size_t>(probe.history));
  b.values.resize(static_cast<std::size_t>(probe.history));
  const std::int64_t agree_from = probe.history - (probe.h_eps + 1);
  for (std::int64_t t = 0; t < probe.history; ++t) {
    a.values[static_cast<std::size_t>(t)] = unif(eng);
    if (t < agree_from) {
      b.values[static_cast<std::size_t>(t)] = unif(eng);
    } else {
      const double nudged = a.values[static_cast<std::size_t>(t)] +
                            0.999 * probe.delta_eps * wiggle(eng);
      b.values[static_cast<std::size_t>(t)] =
          std::clamp(nudged, -probe.input_bound, probe.input_bound);
    }
  }
  return {std::move(a), std::move(b)};
}

}  // namespace detail

/// Draws input pairs that agree (within delta_eps) on the last h_eps+1 steps
/// and differ arbitrarily before; passes when every final-state gap is at most
/// epsilon.
[[nodiscard]] inline FadingMemoryReport check_fading_memory(const SystemRunner& system,
                                                            const FadingMemoryProbe& probe,
                                                            std::uint64_t seed) {
  if (probe.history <= probe.h_eps + 1) {
    throw ConfigError("fading memory probe: history must exceed h_eps + 1");
  }
  if (probe.trials < 1) throw ConfigError("fading memory probe: trials must be >= 1");
  std::mt19937_64 eng(seed);
  FadingMemoryReport report;
  for (int trial = 0; trial < probe.trials; ++trial) {
    auto [a, b] = detail::fading_memory_pair(probe, eng);
    const Eigen::MatrixXd sa = system(a);
    const Eigen::MatrixXd sb = system(b);
    const double gap = (sa.row(sa.rows() - 1) - sb.row(sb.rows() - 1)).cwiseAbs().maxCoeff();
    report.max_gap = std::max(report.max_gap, gap);
    if (gap > probe.epsilon) ++report.violations;
  }
  report.pass = report.violations == 0;
  return report;
}

/// Hypotheses behind the separation/fading-memory guarantees for the model:
/// nonsingular A and an injective (componentwise strictly monotone) truncated
/// input map on the bounded input range.
struct ModelHypotheses {
  bool a_nonsingular = false;
  bool input_map_injective = false;
  double min_abs_eigenvalue = 0.0;
};

[[nodiscard]] inline ModelHypotheses check_model_hypotheses(const ReservoirModel& model,
                                                            double input_bound,
                                                            int grid_points = 4001) {
  ModelHypotheses out;
  const Eigen::VectorXcd ev =
      Eigen::EigenSolver<Eigen::MatrixXd>(model.a(), false).eigenvalues();
  double min_abs = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < ev.size(); ++i) min_abs = std::min(min_abs, std::abs(ev[i]));
  out.min_abs_eigenvalue = min_abs;
  out.a_nonsingular = min_abs > 1e-12 * std::max(model.spectral_radius(), 1e-300);

  // a component of eps whose derivative keeps one strict sign makes the map injective
  const int n = model.neurons();
  const int R = model.order();
  for (int i = 0; i < n && !out.input_map_injective; ++i) {
    bool pos = true;
    bool neg = true;
    for (int gp = 0; gp < grid_points; ++gp) {
      const double z = -input_bound + 2.0 * input_bound * gp / (grid_points - 1);
      double deriv = 0.0;
      double zp = 1.0;
      for (int r = 1; r <= R; ++r) {
        deriv += r * model.poly()(i, r - 1) * zp;
        zp *= z;
      }
      if (!(deriv > 0.0)) pos = false;
      if (!(deriv < 0.0)) neg = false;
      if (!pos && !neg) break;
    }
    if (pos || neg) out.input_map_injective = true;
  }
  return out;
}

/// Separation check for the linearized model; throws HypothesisViolated when
/// the guarantee's hypotheses fail instead of reporting a spurious result.
[[nodiscard]] inline SeparationReport check_separation_model(const ReservoirModel& model,
                                                             const TimeSeries& base_input,
                                                             const SeparationProbe& probe,
                                                             double input_bound) {
  const ModelHypotheses hyp = check_model_hypotheses(model, input_bound);
  if (!hyp.a_nonsingular) {
    throw HypothesisViolated("separation: A has a (numerically) zero eigenvalue");
  }
  if (!hyp.input_map_injective) {
    throw HypothesisViolated("separation: truncated input map not injective on the range");
  }
  return check_separation(make_system(model), base_input, probe);
}

/// Fading-memory check for the linearized model, with the contraction bound
///   (eps1 + (2 K_max - eps1) |A|^{h+1}) / (1 - |A|)
/// attached (sup norms; eps1 and K_max estimated on a dense input grid).
[[nodiscard]] inline FadingMemoryReport check_fading_memory_model(const ReservoirModel& model,
                                                                  const FadingMemoryProbe& probe,
                                                                  std::uint64_t seed,
                                                                  int grid_points = 4001) {
  const double a_norm = model.a().cwiseAbs().rowwise().sum().maxCoeff();
  if (!(a_norm < 1.0)) {
    throw HypothesisViolated("fading memory: the induced sup norm of A is not < 1");
  }
  double eps1 = 0.0;
  double k_max_val = 0.0;
  for (int gp = 0; gp < grid_points; ++gp) {
    const double z = -probe.input_bound + 2.0 * probe.input_bound * gp / (grid_points - 1);
    const Eigen::VectorXd e = model.epsilon(z);
    k_max_val = std::max(k_max_val, e.cwiseAbs().maxCoeff());
    const double z_up = std::min(z + probe.delta_eps, probe.input_bound);
    const double z_dn = std::max(z - probe.delta_eps, -probe.input_bound);
    eps1 = std::max(eps1, (model.epsilon(z_up) - e).cwiseAbs().maxCoeff());
    eps1 = std::max(eps1, (model.epsilon(z_dn) - e).cwiseAbs().maxCoeff());
  }
  const double pow_a = std::pow(a_norm, probe.h_eps + 1);
  FadingMemoryReport report = check_fading_memory(make_system(model), probe, seed);
  report.a_norm = a_norm;
  report.analytic_bound = (eps1 + (2.0 * k_max_val - eps1) * pow_a) / (1.0 - a_norm);
  return report;
}

}  // namespace tdrc
