#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "helpers.hpp"
#include "tdrc/moments.hpp"

using namespace tdrc;

namespace {

/// Raw-definition average of prod z(t + h_i)^{p_i} over every valid t.
double brute_automoment(const std::vector<double>& z, const MomentSpec& spec) {
  std::vector<std::int64_t> offsets{0};
  offsets.insert(offsets.end(), spec.lags.begin(), spec.lags.end());
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  for (auto h : offsets) {
    lo = std::min(lo, h);
    hi = std::max(hi, h);
  }
  const auto T = static_cast<std::int64_t>(z.size());
  double acc = 0.0;
  std::int64_t count = 0;
  for (std::int64_t t = -lo; t + hi < T; ++t) {
    double prod = 1.0;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
      for (int p = 0; p < spec.powers[i]; ++p) prod *= z[static_cast<std::size_t>(t + offsets[i])];
    }
    acc += prod;
    ++count;
  }
  return acc / static_cast<double>(count);
}

TimeSeries to_series(std::vector<double> v) {
  TimeSeries s;
  s.values = std::move(v);
  return s;
}

}  // namespace

TEST_CASE("canonicalization folds zero lags into the base power", "[moments]") {
  const MomentSpec spec{{1, 1}, {0}};
  const MomentSpec canon = canonicalize(spec);
  REQUIRE(canon.powers == std::vector<int>{2});
  REQUIRE(canon.lags.empty());
}

TEST_CASE("canonicalization merges duplicate lags", "[moments]") {
  const MomentSpec canon = canonicalize(MomentSpec{{1, 1, 1}, {3, 3}});
  REQUIRE(canon.powers == std::vector<int>{1, 2});
  REQUIRE(canon.lags == std::vector<std::int64_t>{3});
}

TEST_CASE("canonicalization shifts negative lags onto the base", "[moments]") {
  const MomentSpec canon = canonicalize(MomentSpec{{1, 2}, {-2}});
  REQUIRE(canon.powers == std::vector<int>{2, 1});
  REQUIRE(canon.lags == std::vector<std::int64_t>{2});
}

TEST_CASE("canonicalization leaves a single-factor spec unchanged", "[moments]") {
  const MomentSpec canon = canonicalize(MomentSpec{{2}, {}});
  REQUIRE(canon.powers == std::vector<int>{2});
  REQUIRE(canon.lags.empty());
}

TEST_CASE("canonicalization is idempotent on random specs", "[moments]") {
  std::mt19937_64 eng(7);
  std::uniform_int_distribution<int> n_factors(1, 5);
  std::uniform_int_distribution<int> power(1, 4);
  std::uniform_int_distribution<std::int64_t> lag(-6, 6);
  for (int rep = 0; rep < 200; ++rep) {
    MomentSpec spec;
    const int k = n_factors(eng);
    for (int i = 0; i < k; ++i) {
      spec.powers.push_back(power(eng));
      if (i > 0) spec.lags.push_back(lag(eng));
    }
    const MomentSpec once = canonicalize(spec);
    REQUIRE(canonicalize(once) == once);
    REQUIRE(moment_order(once) == moment_order(spec));
    if (!once.lags.empty()) {
      REQUIRE(*std::min_element(once.lags.begin(), once.lags.end()) > 0);
      REQUIRE(std::is_sorted(once.lags.begin(), once.lags.end()));
    }
  }
}

TEST_CASE("moment spec validation rejects malformed specs", "[moments]") {
  REQUIRE_THROWS_AS(validate(MomentSpec{{}, {}}), ConfigError);
  REQUIRE_THROWS_AS(validate(MomentSpec{{0}, {}}), ConfigError);
  REQUIRE_THROWS_AS(validate(MomentSpec{{1, 1}, {}}), ConfigError);
  REQUIRE_THROWS_AS(validate(MomentSpec{{1}, {2}}), ConfigError);
}

TEST_CASE("estimator is exact on a constant series", "[moments]") {
  const TimeSeries s = to_series(std::vector<double>(500, 2.0));
  const AutomomentTable table = estimate_automoments(s, 4, 5);
  REQUIRE(table.at(MomentSpec{{3}, {}}).value == Catch::Approx(8.0).epsilon(1e-12));
  REQUIRE(table.at(MomentSpec{{2, 2}, {4}}).value == Catch::Approx(16.0).epsilon(1e-12));
  REQUIRE(table.at(MomentSpec{{2, 2}, {4}}).count == 496);
}

TEST_CASE("estimator matches the raw-definition average", "[moments]") {
  std::mt19937_64 eng(11);
  std::normal_distribution<double> normal(0.3, 1.0);
  std::vector<double> v(4000);
  for (auto& x : v) x = normal(eng);
  const TimeSeries s = to_series(v);
  const AutomomentTable table = estimate_automoments(s, 4, 8, 2);

  const std::vector<MomentSpec> specs{
      {{2}, {}},          {{1, 1}, {1}},       {{1, 3}, {5}},          {{2, 2}, {8}},
      {{1, 1, 1}, {1, 3}}, {{1, 1, 2}, {2, 9}}, {{1, 1, 1, 1}, {1, 2, 3}},
  };
  for (const auto& spec : specs) {
    CAPTURE(spec.powers, spec.lags);
    REQUIRE(table.at(spec).value == Catch::Approx(brute_automoment(v, spec)).epsilon(1e-12));
  }
}

TEST_CASE("estimated lag-1 moment of IID noise is zero within sampling error", "[moments]") {
  std::mt19937_64 eng(42);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(1000000);
  for (auto& x : v) x = normal(eng);
  const AutomomentTable table = estimate_automoments(to_series(v), 2, 2);

  std::vector<double> products(v.size() - 1);
  for (std::size_t t = 0; t + 1 < v.size(); ++t) products[t] = v[t] * v[t + 1];
  const auto stats = tdrc::test::batch_stats(products);
  REQUIRE(std::abs(table.at(MomentSpec{{1, 1}, {1}}).value) <= 3.0 * stats.se);
}

TEST_CASE("estimated moments of an AR(1) path match the exact Gaussian values", "[moments]") {
  const double phi = 0.5;
  const auto v = tdrc::test::ar1_path(phi, 1.0, 1000000, 99);
  const AutomomentTable table = estimate_automoments(to_series(v), 4, 5);
  const GaussianAutomomentProvider exact(
      0.0, [phi](std::int64_t h) { return tdrc::test::ar1_acvf(phi, 1.0, h); });

  for (const MomentSpec spec : {MomentSpec{{1, 1}, {1}}, MomentSpec{{2, 2}, {3}}}) {
    std::vector<double> samples;
    samples.reserve(v.size());
    const auto lag = static_cast<std::size_t>(spec.lags[0]);
    for (std::size_t t = 0; t + lag < v.size(); ++t) {
      double prod = 1.0;
      for (int p = 0; p < spec.powers[0]; ++p) prod *= v[t];
      for (int p = 0; p < spec.powers[1]; ++p) prod *= v[t + lag];
      samples.push_back(prod);
    }
    const auto stats = tdrc::test::batch_stats(samples);
    CAPTURE(spec.powers, spec.lags, stats.mean, stats.se);
    REQUIRE(std::abs(table.at(spec).value - exact.automoment(spec)) <= 3.0 * stats.se);
  }

  const double g0 = tdrc::test::ar1_acvf(phi, 1.0, 0);
  const double g3 = tdrc::test::ar1_acvf(phi, 1.0, 3);
  REQUIRE(exact.automoment(MomentSpec{{2, 2}, {3}}) ==
          Catch::Approx(g0 * g0 + 2.0 * g3 * g3).epsilon(1e-12));
}

TEST_CASE("estimator rejects series shorter than the lag bound", "[moments]") {
  const TimeSeries s = to_series(std::vector<double>(10, 1.0));
  REQUIRE_THROWS_AS(estimate_automoments(s, 2, 20), InsufficientData);
  const TimeSeries s2 = to_series(std::vector<double>(55, 1.0));
  REQUIRE_THROWS_AS(estimate_automoments(s2, 4, 50, 3), InsufficientData);
}

TEST_CASE("provider reduces specs before lookup", "[moments]") {
  const auto v = tdrc::test::ar1_path(0.4, 1.0, 20000, 5);
  const EmpiricalAutomomentProvider provider(estimate_automoments(to_series(v), 4, 5));
  REQUIRE(provider.automoment(MomentSpec{{1, 1}, {0}}) ==
          provider.automoment(MomentSpec{{2}, {}}));
  REQUIRE(provider.automoment(MomentSpec{{1, 2}, {-3}}) ==
          provider.automoment(MomentSpec{{2, 1}, {3}}));
}

TEST_CASE("provider factorizes across gaps beyond the lag bound", "[moments]") {
  AutomomentTable table(2, 5);
  table.insert(MomentSpec{{1}, {}}, 0.5, 100);
  table.insert(MomentSpec{{1, 1}, {3}}, 0.3, 97);
  const EmpiricalAutomomentProvider provider(std::move(table));

  REQUIRE(provider.automoment(MomentSpec{{1, 1}, {7}}) == Catch::Approx(0.25).epsilon(1e-15));
  REQUIRE(provider.automoment(MomentSpec{{1, 1, 1}, {3, 10}}) ==
          Catch::Approx(0.15).epsilon(1e-15));
  REQUIRE_THROWS_AS(provider.automoment(MomentSpec{{1, 1}, {4}}), MissingMoment);
}

TEST_CASE("automoment tables survive a CSV round trip", "[moments][io]") {
  const auto v = tdrc::test::ar1_path(0.4, 1.0, 5000, 13);
  const AutomomentTable table = estimate_automoments(to_series(v), 3, 4, 1);
  tdrc::test::TempDir dir("automoments");
  const auto path = dir.path() / "table.csv";
  table.save_csv(path);
  const AutomomentTable loaded = AutomomentTable::load_csv(path);

  REQUIRE(loaded.size() == table.size());
  REQUIRE(loaded.max_abs_lag() == table.max_abs_lag());
  for (const auto& [spec, est] : table) {
    REQUIRE(loaded.at(spec).value == est.value);
    REQUIRE(loaded.at(spec).count == est.count);
  }
}

TEST_CASE("comoments of a series with itself reproduce automoments", "[moments]") {
  const auto v = tdrc::test::ar1_path(0.5, 1.0, 50000, 21);
  const TimeSeries s = to_series(v);
  const ComomentTable table = estimate_comoments(s, s, 3, -2, 2);
  REQUIRE(table.comoment(1, 0) == Catch::Approx(brute_automoment(v, MomentSpec{{2}, {}})).epsilon(1e-12));
  REQUIRE(table.comoment(0, 0) == Catch::Approx(series_mean(s)).epsilon(1e-12));
}

TEST_CASE("comoments align series by their origins", "[moments]") {
  const auto v = tdrc::test::ar1_path(0.5, 1.0, 50000, 22);
  const TimeSeries z = to_series(v);
  TimeSeries y = z;
  y.origin = 3;  // y(t) = z(t - 3)
  const ComomentTable table = estimate_comoments(y, z, 2, -4, 0);
  const double second_moment = brute_automoment(v, MomentSpec{{2}, {}});
  REQUIRE(table.comoment(1, -3) == Catch::Approx(second_moment).epsilon(1e-10).margin(1e-10));
  // one step off the alignment the correlation drops to phi * var
  REQUIRE(table.comoment(1, -4) ==
          Catch::Approx(0.5 * second_moment).epsilon(0.05));
}

TEST_CASE("comoments of independent series factorize within sampling error", "[moments]") {
  std::mt19937_64 eng(31);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> a(200000), b(200000);
  for (auto& x : a) x = 1.0 + normal(eng);
  for (auto& x : b) x = 0.5 + normal(eng);
  const TimeSeries y = to_series(a);
  const TimeSeries z = to_series(b);
  const ComomentTable table = estimate_comoments(y, z, 2, 0, 0);

  std::vector<double> products(a.size());
  for (std::size_t t = 0; t < a.size(); ++t) products[t] = a[t] * b[t] * b[t];
  const auto stats = tdrc::test::batch_stats(products);
  const double expected = series_mean(y) * brute_automoment(b, MomentSpec{{2}, {}});
  REQUIRE(std::abs(table.comoment(2, 0) - expected) <= 3.0 * stats.se + 1e-3);
}

TEST_CASE("comoment estimation rejects insufficient overlap", "[moments]") {
  TimeSeries y = to_series({1.0, 2.0, 3.0});
  TimeSeries z = to_series({1.0, 2.0, 3.0});
  z.origin = 100;
  REQUIRE_THROWS_AS(estimate_comoments(y, z, 1, 0, 0), InsufficientData);
}

TEST_CASE("comoment tables survive a CSV round trip", "[moments][io]") {
  const auto v = tdrc::test::ar1_path(0.3, 1.0, 20000, 77);
  const TimeSeries z = to_series(v);
  const ComomentTable table = estimate_comoments(z, z, 2, -3, 1);
  tdrc::test::TempDir dir("comoments");
  const auto path = dir.path() / "table.csv";
  table.save_csv(path);
  const ComomentTable loaded = ComomentTable::load_csv(path);
  REQUIRE(loaded.size() == table.size());
  REQUIRE(loaded.mean_y() == table.mean_y());
  REQUIRE(loaded.lag_min() == table.lag_min());
  REQUIRE(loaded.comoment(2, -3) == table.comoment(2, -3));
}

TEST_CASE("series CSV io round trips", "[moments][io]") {
  TimeSeries s = to_series({1.5, -2.25, 1e-17, 3.0});
  tdrc::test::TempDir dir("series");
  const auto path = dir.path() / "series.csv";
  write_series_csv(path, s);
  const TimeSeries loaded = read_series_csv(path);
  REQUIRE(loaded.values == s.values);
  REQUIRE_THROWS_AS(read_series_csv(dir.path() / "missing.csv"), IoError);
}
