#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "helpers.hpp"
#include "tdrc/generators.hpp"
#include "tdrc/moments.hpp"
#include "tdrc/reservoir_model.hpp"
#include "tdrc/tdr.hpp"

using namespace tdrc;

namespace {

TdrParams benchmark_params(int neurons, std::uint64_t mask_seed = 424242) {
  TdrParams p;
  p.neurons = neurons;
  p.separation = 0.839;
  p.kernel = std::make_shared<IkedaKernel>();
  p.theta = {0.461, 2.866, 1.124};
  p.mask = make_uniform_mask(neurons, mask_seed);
  return p;
}

GaussianAutomomentProvider ar1_provider(double phi, double sigma2) {
  return GaussianAutomomentProvider(
      0.0, [phi, sigma2](std::int64_t h) { return tdrc::test::ar1_acvf(phi, sigma2, h); });
}

}  // namespace

TEST_CASE("model construction exposes the linearization pieces", "[model]") {
  TdrParams p = benchmark_params(5);
  const ReservoirModel model = make_reservoir_model(p, 2);
  REQUIRE(model.neurons() == 5);
  REQUIRE(model.order() == 2);

  const FixedPointResult fp =
      solve_fixed_point(*p.kernel, std::span<const double>(p.theta));
  REQUIRE(model.fixed_point() == Catch::Approx(fp.x0).margin(1e-14));
  REQUIRE(model.a() == build_jacobian(p, fp.x0));
  REQUIRE(model.poly() == build_input_polynomials(p, fp.x0, 2));
  REQUIRE(model.spectral_radius() ==
          Catch::Approx(model.a().eigenvalues().cwiseAbs().maxCoeff()).margin(1e-12));

  const double z = 0.37;
  const Eigen::VectorXd eps = model.epsilon(z);
  for (int i = 0; i < model.neurons(); ++i) {
    REQUIRE(eps(i) ==
            Catch::Approx(model.poly()(i, 0) * z + model.poly()(i, 1) * z * z).margin(1e-15));
  }
}

TEST_CASE("model construction rejects unstable or malformed linearizations", "[model]") {
  const Eigen::MatrixXd poly = Eigen::MatrixXd::Ones(2, 1);
  REQUIRE_THROWS_AS(ReservoirModel(0.0, Eigen::MatrixXd::Identity(2, 2), poly), InvalidModel);
  REQUIRE_THROWS_AS(ReservoirModel(0.0, 1.5 * Eigen::MatrixXd::Identity(2, 2), poly),
                    InvalidModel);
  REQUIRE_THROWS_AS(ReservoirModel(0.0, Eigen::MatrixXd::Zero(2, 3), poly), InvalidModel);
  REQUIRE_THROWS_AS(ReservoirModel(0.0, 0.5 * Eigen::MatrixXd::Identity(3, 3), poly),
                    InvalidModel);
  REQUIRE_NOTHROW(ReservoirModel(0.0, 0.5 * Eigen::MatrixXd::Identity(2, 2), poly));
}

TEST_CASE("truncated series solves the discrete lyapunov equation", "[model]") {
  std::mt19937_64 eng(21);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd a(4, 4);
  for (Eigen::Index i = 0; i < a.size(); ++i) a(i) = normal(eng);
  a *= 0.8 / a.eigenvalues().cwiseAbs().maxCoeff();
  Eigen::MatrixXd half(4, 4);
  for (Eigen::Index i = 0; i < half.size(); ++i) half(i) = normal(eng);
  const Eigen::MatrixXd c = half * half.transpose();

  const TruncationPolicy policy;
  const auto [x, terms] = lyapunov_series_sum(a, c, policy);
  REQUIRE(terms > 5);
  const Eigen::MatrixXd oracle = tdrc::test::dlyap_kron(a, c);
  REQUIRE((x - oracle).cwiseAbs().maxCoeff() < 1e-8);
  REQUIRE((x - a * x * a.transpose() - c).cwiseAbs().maxCoeff() < 1e-8);

  TruncationPolicy tight;
  tight.k_max = 3;
  REQUIRE_THROWS_AS(lyapunov_series_sum(a, c, tight), TruncationBudgetExceeded);
}

TEST_CASE("driving-term mean has the closed iid form and matches simulation", "[model]") {
  const ReservoirModel model = make_reservoir_model(benchmark_params(3), 2);

  // standard normal: E z = 0, E z^2 = 1, so mu_eps is the quadratic column
  const IidAutomomentProvider iid = make_iid_gaussian_provider(0.0, 1.0);
  const Eigen::VectorXd mu = epsilon_mean(model, iid);
  REQUIRE((mu - model.poly().col(1)).cwiseAbs().maxCoeff() < 1e-15);

  // AR(1) input: Monte Carlo over a long path
  const auto provider = ar1_provider(0.5, 1.0);
  const Eigen::VectorXd mu_ar = epsilon_mean(model, provider);
  const ArmaSample in = arma_simulate(ArmaModel{{0.5}, {}, 1.0}, 200000, 91);
  for (int i = 0; i < model.neurons(); ++i) {
    std::vector<double> eps_i(in.z.size());
    for (std::size_t t = 0; t < in.z.size(); ++t) eps_i[t] = model.epsilon(in.z.values[t])(i);
    const auto stats = tdrc::test::batch_stats(eps_i);
    CAPTURE(i, stats.mean, stats.se);
    REQUIRE(std::abs(stats.mean - mu_ar(i)) <= 4.0 * stats.se);
  }
}

TEST_CASE("driving-term autocovariance matches simulation on an ar(1) input", "[model]") {
  const ReservoirModel model = make_reservoir_model(benchmark_params(3), 2);
  const auto provider = ar1_provider(0.5, 1.0);
  const ArmaSample in = arma_simulate(ArmaModel{{0.5}, {}, 1.0}, 300000, 92);

  Eigen::MatrixXd eps(static_cast<Eigen::Index>(in.z.size()), model.neurons());
  for (std::size_t t = 0; t < in.z.size(); ++t) {
    eps.row(static_cast<Eigen::Index>(t)) = model.epsilon(in.z.values[t]).transpose();
  }
  const Eigen::RowVectorXd mean_eps = eps.colwise().mean();

  for (std::int64_t h : {0, 1, 3}) {
    const Eigen::MatrixXd analytic = epsilon_autocovariance(model, provider, h);
    for (int i = 0; i < model.neurons(); ++i) {
      for (int j = i; j < model.neurons(); ++j) {
        std::vector<double> prod(eps.rows() - h);
        for (Eigen::Index t = 0; t + h < eps.rows(); ++t) {
          prod[static_cast<std::size_t>(t)] =
              (eps(t, i) - mean_eps(i)) * (eps(t + h, j) - mean_eps(j));
        }
        const auto stats = tdrc::test::batch_stats(prod);
        CAPTURE(h, i, j, analytic(i, j), stats.mean, stats.se);
        REQUIRE(std::abs(stats.mean - analytic(i, j)) <= 4.0 * stats.se);
      }
    }
  }
}

TEST_CASE("iid inputs have no driving-term correlation across time", "[model]") {
  const ReservoirModel model = make_reservoir_model(benchmark_params(4), 2);
  const IidAutomomentProvider iid = make_iid_gaussian_provider(0.3, 1.2);
  for (std::int64_t h : {1, 2, 5}) {
    REQUIRE(epsilon_autocovariance(model, iid, h).cwiseAbs().maxCoeff() < 1e-14);
  }
}

TEST_CASE("stationary state mean solves the fixed-point balance", "[model]") {
  const ReservoirModel model = make_reservoir_model(benchmark_params(3), 2);
  const auto provider = ar1_provider(0.5, 1.0);

  const Eigen::VectorXd mu_eps = epsilon_mean(model, provider);
  const Eigen::VectorXd mu_x = state_mean(model, provider);
  // mu_x - x0 = A (mu_x - x0) + mu_eps
  const Eigen::VectorXd dev = mu_x - model.x0();
  REQUIRE((dev - model.a() * dev - mu_eps).cwiseAbs().maxCoeff() < 1e-13);

  const ArmaSample in = arma_simulate(ArmaModel{{0.5}, {}, 1.0}, 300000, 93);
  const StatePath path = simulate_model_recursion(model, in.z);
  const Eigen::Index burn = 1000;
  for (int i = 0; i < model.neurons(); ++i) {
    std::vector<double> xi(static_cast<std::size_t>(path.states.rows() - burn));
    for (Eigen::Index t = burn; t < path.states.rows(); ++t) {
      xi[static_cast<std::size_t>(t - burn)] = path.states(t, i);
    }
    const auto stats = tdrc::test::batch_stats(xi);
    CAPTURE(i, stats.mean, stats.se);
    REQUIRE(std::abs(stats.mean - mu_x(i)) <= 4.0 * stats.se);
  }
}

TEST_CASE("stationary state covariance reduces to a lyapunov solve for iid inputs",
          "[model]") {
  const ReservoirModel model = make_reservoir_model(benchmark_params(4), 2);
  const IidAutomomentProvider iid = make_iid_gaussian_provider(0.3, 1.2);
  const TruncationPolicy policy;

  const StateCovarianceResult res = state_autocovariance0(model, iid, policy);
  const Eigen::MatrixXd geps0 = epsilon_autocovariance(model, iid, 0);
  const Eigen::MatrixXd oracle = tdrc::test::dlyap_kron(model.a(), geps0);
  REQUIRE((res.gamma0 - oracle).cwiseAbs().maxCoeff() < 1e-9);
  REQUIRE(res.terms_used >= 1);
  REQUIRE(res.gamma0 == res.gamma0.transpose());
}

TEST_CASE("a memoryless model has state covariance equal to the driving covariance",
          "[model]") {
  Eigen::MatrixXd poly(2, 2);
  poly << 0.5, -0.2, 0.1, 0.3;
  const ReservoirModel model(0.0, Eigen::MatrixXd::Zero(2, 2), poly);
  const auto provider = ar1_provider(0.5, 1.0);
  const StateCovarianceResult res = state_autocovariance0(model, provider, TruncationPolicy{});
  const Eigen::MatrixXd geps0 = epsilon_autocovariance(model, provider, 0);
  REQUIRE((res.gamma0 - geps0).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("stationary state covariance matches a simulated ar(1)-driven model", "[model]") {
  const ReservoirModel model = make_reservoir_model(benchmark_params(3), 2);
  const auto provider = ar1_provider(0.5, 1.0);
  const StateCovarianceResult res = state_autocovariance0(model, provider, TruncationPolicy{});

  const ArmaSample in = arma_simulate(ArmaModel{{0.5}, {}, 1.0}, 300000, 94);
  const StatePath path = simulate_model_recursion(model, in.z);
  const Eigen::Index burn = 1000;
  const Eigen::Index T = path.states.rows() - burn;
  Eigen::RowVectorXd mean_x = Eigen::RowVectorXd::Zero(model.neurons());
  for (Eigen::Index t = burn; t < path.states.rows(); ++t) mean_x += path.states.row(t);
  mean_x /= static_cast<double>(T);

  for (int i = 0; i < model.neurons(); ++i) {
    for (int j = i; j < model.neurons(); ++j) {
      std::vector<double> prod(static_cast<std::size_t>(T));
      for (Eigen::Index t = burn; t < path.states.rows(); ++t) {
        prod[static_cast<std::size_t>(t - burn)] =
            (path.states(t, i) - mean_x(i)) * (path.states(t, j) - mean_x(j));
      }
      const auto stats = tdrc::test::batch_stats(prod);
      CAPTURE(i, j, res.gamma0(i, j), stats.mean, stats.se);
      REQUIRE(std::abs(stats.mean - res.gamma0(i, j)) <= 4.0 * stats.se);
    }
  }
}

TEST_CASE("task constructors lay out the coefficient windows", "[model][task]") {
  const LinearTask mem = pure_memory_task(3);
  REQUIRE(mem.f == 0);
  REQUIRE(mem.h == 3);
  REQUIRE(mem.coeffs.size() == 4);
  REQUIRE(mem.coeffs(3) == 1.0);
  REQUIRE(mem.coeffs.head(3).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE_NOTHROW(validate(mem));
  REQUIRE_THROWS_AS(pure_memory_task(-1), ConfigError);

  const LinearTask agg = linear_task_for_aggregate({2.0, 5.0});
  REQUIRE(agg.f == 2);
  REQUIRE(agg.h == 0);
  REQUIRE(agg.coeffs.size() == 3);
  REQUIRE(agg.coeffs(0) == 2.0);
  REQUIRE(agg.coeffs(1) == 5.0);
  REQUIRE(agg.coeffs(2) == 0.0);

  const QuadraticTask q = quadratic_task_for_garch_aggregate(2);
  REQUIRE(q.f == 2);
  REQUIRE(q.h == 0);
  REQUIRE(q.coeffs.rows() == 3);
  REQUIRE(q.coeffs.topLeftCorner(2, 2).sum() == 4.0);
  REQUIRE(q.coeffs.row(2).cwiseAbs().sum() == 0.0);
  REQUIRE(q.coeffs.col(2).cwiseAbs().sum() == 0.0);
  REQUIRE_THROWS_AS(quadratic_task_for_garch_aggregate(0), ConfigError);

  LinearTask bad = mem;
  bad.coeffs = Eigen::VectorXd::Ones(2);
  REQUIRE_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("pure-memory covariance on iid inputs keeps only one propagator term",
          "[model][task]") {
  const ReservoirModel model = make_reservoir_model(benchmark_params(5), 2);
  const IidAutomomentProvider iid = make_iid_gaussian_provider(0.3, 1.2);
  const std::int64_t lag = 3;
  const TaskMoments tm =
      linear_task_cov(model, iid, pure_memory_task(lag), TruncationPolicy{});

  REQUIRE(tm.mean_y == Catch::Approx(0.3).margin(1e-15));
  REQUIRE(tm.var_y == Catch::Approx(1.2).margin(1e-13));

  // Cov = A^lag poly (m_{s+1} - m_1 m_s)_s for an iid input
  Eigen::VectorXd v(2);
  for (int s = 1; s <= 2; ++s) {
    v(s - 1) = gaussian_raw_moment(0.3, 1.2, s + 1) -
               gaussian_raw_moment(0.3, 1.2, 1) * gaussian_raw_moment(0.3, 1.2, s);
  }
  Eigen::MatrixXd a_pow = Eigen::MatrixXd::Identity(5, 5);
  for (std::int64_t k = 0; k < lag; ++k) a_pow = a_pow * model.a();
  const Eigen::VectorXd oracle = a_pow * (model.poly() * v);
  REQUIRE((tm.cov - oracle).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("linear task covariance matches a simulated ar(1) forecast target",
          "[model][task]") {
  const ReservoirModel model = make_reservoir_model(benchmark_params(3), 2);
  const double phi = 0.5;
  const auto provider = ar1_provider(phi, 1.0);
  const LinearTask task = linear_task_for_aggregate({1.0, 1.0});
  const TaskMoments tm = linear_task_cov(model, provider, task, TruncationPolicy{});

  const double g0 = tdrc::test::ar1_acvf(phi, 1.0, 0);
  const double g1 = tdrc::test::ar1_acvf(phi, 1.0, 1);
  REQUIRE(tm.mean_y == Catch::Approx(0.0).margin(1e-14));
  REQUIRE(tm.var_y == Catch::Approx(2.0 * g0 + 2.0 * g1).epsilon(1e-12));

  const ArmaSample in = arma_simulate(ArmaModel{{phi}, {}, 1.0}, 300000, 95);
  const StatePath path = simulate_model_recursion(model, in.z);
  const TimeSeries y = aggregate_target(in.z, {1.0, 1.0});
  const Eigen::Index burn = 1000;
  const auto T = static_cast<Eigen::Index>(y.size());
  Eigen::RowVectorXd mean_x = Eigen::RowVectorXd::Zero(model.neurons());
  double mean_y = 0.0;
  for (Eigen::Index t = burn; t < T; ++t) {
    mean_x += path.states.row(t);
    mean_y += y.values[static_cast<std::size_t>(t)];
  }
  mean_x /= static_cast<double>(T - burn);
  mean_y /= static_cast<double>(T - burn);

  for (int i = 0; i < model.neurons(); ++i) {
    std::vector<double> prod(static_cast<std::size_t>(T - burn));
    for (Eigen::Index t = burn; t < T; ++t) {
      prod[static_cast<std::size_t>(t - burn)] =
          (path.states(t, i) - mean_x(i)) * (y.values[static_cast<std::size_t>(t)] - mean_y);
    }
    const auto stats = tdrc::test::batch_stats(prod);
    CAPTURE(i, tm.cov(i), stats.mean, stats.se);
    REQUIRE(std::abs(stats.mean - tm.cov(i)) <= 4.0 * stats.se);
  }
}

TEST_CASE("instantaneous square task has a closed form on iid gaussian inputs",
          "[model][task]") {
  const ReservoirModel model = make_reservoir_model(benchmark_params(4), 2);
  const IidAutomomentProvider iid = make_iid_gaussian_provider(0.0, 1.0);
  QuadraticTask task;
  task.f = 0;
  task.h = 0;
  task.coeffs = Eigen::MatrixXd::Ones(1, 1);
  const TaskMoments tm = quadratic_task_cov(model, iid, task, TruncationPolicy{});

  REQUIRE(tm.mean_y == Catch::Approx(1.0).margin(1e-14));
  REQUIRE(tm.var_y == Catch::Approx(2.0).margin(1e-13));
  // Cov(z^2, eps_i(z)) = a_2^i (E z^4 - (E z^2)^2) = 2 a_2^i, no propagation
  const Eigen::VectorXd oracle = 2.0 * model.poly().col(1);
  REQUIRE((tm.cov - oracle).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("aggregate-square moments reproduce the gaussian quadratic-form identities",
          "[model][task]") {
  const ReservoirModel model = make_reservoir_model(benchmark_params(3), 2);
  const double phi = 0.5;
  const auto provider = ar1_provider(phi, 1.0);
  const TaskMoments tm = quadratic_task_cov(model, provider, quadratic_task_for_garch_aggregate(2),
                                            TruncationPolicy{});
  const double g0 = tdrc::test::ar1_acvf(phi, 1.0, 0);
  const double g1 = tdrc::test::ar1_acvf(phi, 1.0, 1);
  const double var_sum = 2.0 * g0 + 2.0 * g1;
  REQUIRE(tm.mean_y == Catch::Approx(var_sum).epsilon(1e-12));
  // (z(t+1)+z(t+2))^2 is a squared gaussian: variance 2 (Var sum)^2
  REQUIRE(tm.var_y == Catch::Approx(2.0 * var_sum * var_sum).epsilon(1e-11));
}

TEST_CASE("quadratic task covariance matches a simulated squared aggregate",
          "[model][task]") {
  const ReservoirModel model = make_reservoir_model(benchmark_params(3), 2);
  const double phi = 0.5;
  const auto provider = ar1_provider(phi, 1.0);
  const TaskMoments tm = quadratic_task_cov(model, provider, quadratic_task_for_garch_aggregate(1),
                                            TruncationPolicy{});

  const ArmaSample in = arma_simulate(ArmaModel{{phi}, {}, 1.0}, 400000, 96);
  const StatePath path = simulate_model_recursion(model, in.z);
  const Eigen::Index burn = 1000;
  const auto T = static_cast<Eigen::Index>(in.z.size()) - 1;
  std::vector<double> y(static_cast<std::size_t>(T));
  for (Eigen::Index t = 0; t < T; ++t) {
    const double s = in.z.values[static_cast<std::size_t>(t + 1)];
    y[static_cast<std::size_t>(t)] = s * s;
  }
  double mean_y = 0.0;
  Eigen::RowVectorXd mean_x = Eigen::RowVectorXd::Zero(model.neurons());
  for (Eigen::Index t = burn; t < T; ++t) {
    mean_y += y[static_cast<std::size_t>(t)];
    mean_x += path.states.row(t);
  }
  mean_y /= static_cast<double>(T - burn);
  mean_x /= static_cast<double>(T - burn);

  std::vector<double> ysq(static_cast<std::size_t>(T - burn));
  for (Eigen::Index t = burn; t < T; ++t) {
    const double d = y[static_cast<std::size_t>(t)] - mean_y;
    ysq[static_cast<std::size_t>(t - burn)] = d * d;
  }
  const auto vstats = tdrc::test::batch_stats(ysq);
  CAPTURE(tm.var_y, vstats.mean, vstats.se);
  REQUIRE(std::abs(vstats.mean - tm.var_y) <= 4.0 * vstats.se);

  for (int i = 0; i < model.neurons(); ++i) {
    std::vector<double> prod(static_cast<std::size_t>(T - burn));
    for (Eigen::Index t = burn; t < T; ++t) {
      prod[static_cast<std::size_t>(t - burn)] =
          (path.states(t, i) - mean_x(i)) * (y[static_cast<std::size_t>(t)] - mean_y);
    }
    const auto stats = tdrc::test::batch_stats(prod);
    CAPTURE(i, tm.cov(i), stats.mean, stats.se);
    REQUIRE(std::abs(stats.mean - tm.cov(i)) <= 4.0 * stats.se);
  }
}

TEST_CASE("filter route reproduces the linear route when fed exact cross moments",
          "[model][task]") {
  const ReservoirModel model = make_reservoir_model(benchmark_params(4), 2);
  const double phi = 0.5;
  const auto provider = ar1_provider(phi, 1.0);
  const TruncationPolicy policy;
  const std::int64_t lag = 2;

  const TaskMoments linear = linear_task_cov(model, provider, pure_memory_task(lag), policy);

  // y(t) = z(t-2) expressed only through its cross moments with the input
  ComomentTable table(2, -policy.h_max, 0);
  table.insert(0, 0, 0.0, 1);  // E y
  for (std::int64_t j = 0; j <= policy.h_max; ++j) {
    for (int r = 1; r <= 2; ++r) {
      table.insert(r, -j, provider.automoment(MomentSpec{{1, r}, {lag - j}}), 1);
    }
  }
  const Eigen::VectorXd mu_eps = epsilon_mean(model, provider);
  const Eigen::VectorXd filter = filter_task_cov(model, table, 0.0, mu_eps, policy);
  REQUIRE((filter - linear.cov).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("filter centering uses the target mean, not the input mean", "[model][task]") {
  const ReservoirModel model = make_reservoir_model(benchmark_params(4), 2);
  const auto provider = ar1_provider(0.5, 1.0);
  const TruncationPolicy policy;
  const std::int64_t lag = 2;
  const double shift = 3.0;  // y(t) = z(t-2) + shift has mean 3 while z has mean 0

  const TaskMoments linear = linear_task_cov(model, provider, pure_memory_task(lag), policy);

  ComomentTable table(2, -policy.h_max, 0);
  table.insert(0, 0, shift, 1);
  for (std::int64_t j = 0; j <= policy.h_max; ++j) {
    for (int r = 1; r <= 2; ++r) {
      const double base = provider.automoment(MomentSpec{{1, r}, {lag - j}});
      const double from_shift = shift * provider.automoment(MomentSpec{{r}, {}});
      table.insert(r, -j, base + from_shift, 1);
    }
  }
  const Eigen::VectorXd mu_eps = epsilon_mean(model, provider);

  const Eigen::VectorXd centered = filter_task_cov(model, table, 0.0, mu_eps, policy);
  REQUIRE((centered - linear.cov).cwiseAbs().maxCoeff() < 1e-9);

  // centering with the input mean leaves the shift term behind
  const Eigen::VectorXd strict = filter_task_cov(model, table, 0.0, mu_eps, policy, true);
  REQUIRE((strict - linear.cov).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("capacity satisfies the ridge-regression error identity", "[model][capacity]") {
  std::mt19937_64 eng(31);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd half(4, 4);
  for (Eigen::Index i = 0; i < half.size(); ++i) half(i) = normal(eng);
  const Eigen::MatrixXd gamma0 = half * half.transpose();
  Eigen::VectorXd cov(4);
  cov << 0.3, -0.2, 0.5, 0.1;
  const double var_y = 2.0;

  for (double lambda : {0.0, 0.3, 2.0}) {
    const CapacityReport rep = capacity_from_components(gamma0, cov, var_y, lambda);
    Eigen::MatrixXd system = gamma0;
    system.diagonal().array() += lambda;
    const Eigen::VectorXd w = system.fullPivLu().solve(cov);
    const double mse_oracle = var_y - 2.0 * w.dot(cov) + w.dot(gamma0 * w);
    CAPTURE(lambda);
    REQUIRE(rep.mse == Catch::Approx(mse_oracle).margin(1e-11));
    REQUIRE(rep.capacity_raw == Catch::Approx((var_y - mse_oracle) / var_y).margin(1e-11));
    REQUIRE(rep.lambda == lambda);
    REQUIRE(rep.gamma0_condition >= 1.0);
  }

  // no regularization: plain least-squares capacity
  const CapacityReport plain = capacity_from_components(gamma0, cov, var_y, 0.0);
  const double direct = cov.dot(gamma0.fullPivLu().solve(cov)) / var_y;
  REQUIRE(plain.capacity_raw == Catch::Approx(direct).margin(1e-12));

  // infinite regularization drives the estimator to the mean
  const CapacityReport heavy = capacity_from_components(gamma0, cov, var_y, 1e12);
  REQUIRE(heavy.capacity < 1e-8);
}

TEST_CASE("capacity clamps and flags values outside the unit interval",
          "[model][capacity]") {
  const Eigen::MatrixXd gamma0 = Eigen::MatrixXd::Identity(1, 1);
  Eigen::VectorXd cov(1);
  cov << 2.0;
  const CapacityReport rep = capacity_from_components(gamma0, cov, 1.0, 0.0);
  REQUIRE(rep.capacity_raw == Catch::Approx(4.0));
  REQUIRE(rep.capacity == 1.0);
  REQUIRE(rep.clamped);
  REQUIRE_FALSE(rep.warning.empty());

  Eigen::VectorXd small(1);
  small << 0.5;
  const CapacityReport fine = capacity_from_components(gamma0, small, 1.0, 0.0);
  REQUIRE_FALSE(fine.clamped);
  REQUIRE(fine.warning.empty());
  REQUIRE(fine.capacity == Catch::Approx(0.25));
}

TEST_CASE("capacity rejects singular or malformed components", "[model][capacity]") {
  Eigen::MatrixXd singular = Eigen::MatrixXd::Zero(2, 2);
  singular(0, 0) = 1.0;
  Eigen::VectorXd cov(2);
  cov << 0.1, 0.2;
  REQUIRE_THROWS_AS(capacity_from_components(singular, cov, 1.0, 0.0), SingularGamma);
  REQUIRE_NOTHROW(capacity_from_components(singular, cov, 1.0, 1e-6));
  REQUIRE_THROWS_AS(capacity_from_components(singular, cov, 0.0, 0.1), ZeroVarianceTeaching);
  REQUIRE_THROWS_AS(capacity_from_components(singular, cov, 1.0, -0.1), ConfigError);
  Eigen::VectorXd wrong(3);
  wrong.setZero();
  REQUIRE_THROWS_AS(capacity_from_components(singular, wrong, 1.0, 0.1), ConfigError);
}

TEST_CASE("model recursion steps by hand and forgets its initial condition", "[model]") {
  const ReservoirModel model = make_reservoir_model(benchmark_params(3), 2);
  TimeSeries input;
  input.values = {0.4, -0.2, 0.7};

  Eigen::VectorXd x_init(3);
  x_init << 0.1, 0.2, 0.3;
  const StatePath path = simulate_model_recursion(model, input, x_init);
  const Eigen::VectorXd step1 =
      model.x0() + model.a() * (x_init - model.x0()) + model.epsilon(0.4);
  REQUIRE((path.states.row(0).transpose() - step1).cwiseAbs().maxCoeff() < 1e-15);

  TimeSeries longer;
  longer.values.assign(200, 0.1);
  const StatePath a = simulate_model_recursion(model, longer, x_init);
  const StatePath b = simulate_model_recursion(model, longer);
  REQUIRE((a.states.row(199) - b.states.row(199)).cwiseAbs().maxCoeff() < 1e-12);

  TimeSeries bad;
  bad.values = {std::numeric_limits<double>::infinity()};
  REQUIRE_THROWS_AS(simulate_model_recursion(model, bad), NonFiniteState);
}

TEST_CASE("linearized recursion tracks the full cascade for small inputs", "[model]") {
  TdrParams p = benchmark_params(5);
  const ReservoirModel model = make_reservoir_model(p, 3);

  std::mt19937_64 eng(71);
  std::normal_distribution<double> normal(0.0, 1e-3);
  TimeSeries input;
  input.values.resize(100);
  for (double& v : input.values) v = normal(eng);

  const StatePath full = tdr_run(p, input, model.x0());
  const StatePath lin = simulate_model_recursion(model, input, model.x0());
  REQUIRE((full.states - lin.states).cwiseAbs().maxCoeff() < 1e-6);
}
