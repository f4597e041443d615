#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tdrc/errors.hpp"
#include "tdrc/time_series.hpp"

namespace tdrc {

/// Identifies a stationary product moment E[z(t)^{r1} z(t+h2)^{r2} ... z(t+hk)^{rk}].
/// powers holds r1..rk; lags holds h2..hk (the first factor sits at lag 0).
struct MomentSpec {
  std::vector<int> powers;
  std::vector<std::int64_t> lags;

  friend auto operator<=>(const MomentSpec&, const MomentSpec&) = default;
};

inline void validate(const MomentSpec& spec) {
  if (spec.powers.empty()) throw ConfigError("moment spec needs at least one factor");
  if (spec.lags.size() + 1 != spec.powers.size()) {
    throw ConfigError("moment spec needs one lag per factor after the first");
  }
  for (int p : spec.powers) {
    if (p < 1) throw ConfigError("moment spec powers must be >= 1");
  }
}

[[nodiscard]] inline int moment_order(const MomentSpec& spec) {
  return std::accumulate(spec.powers.begin(), spec.powers.end(), 0);
}

/// Canonical representative of the stationarity-equivalence class: zero lags
/// folded into the base power, duplicate lags merged, the whole spec shifted
/// so the earliest factor sits at lag 0, remaining lags sorted ascending.
[[nodiscard]] inline MomentSpec canonicalize(const MomentSpec& spec) {
  validate(spec);
  std::map<std::int64_t, int> by_lag;
  by_lag[0] += spec.powers[0];
  for (std::size_t i = 0; i + 1 < spec.powers.size(); ++i) {
    by_lag[spec.lags[i]] += spec.powers[i + 1];
  }
  const std::int64_t shift = by_lag.begin()->first;
  MomentSpec out;
  out.powers.reserve(by_lag.size());
  for (const auto& [lag, power] : by_lag) {
    out.powers.push_back(power);
    if (lag != shift) out.lags.push_back(lag - shift);
  }
  return out;
}

namespace detail {

[[nodiscard]] inline double ipow(double x, int n) {
  double acc = 1.0;
  for (int i = 0; i < n; ++i) acc *= x;
  return acc;
}

[[nodiscard]] inline double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double acc = 1.0;
  for (int i = 1; i <= k; ++i) acc = acc * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(acc);
}

/// Sum over perfect pairings of prod acvf(|t_a - t_b|); zero for odd counts.
inline double wick_pairing_sum(std::vector<std::int64_t>& times,
                               const std::function<double(std::int64_t)>& acvf) {
  const std::size_t n = times.size();
  if (n == 0) return 1.0;
  if (n % 2 == 1) return 0.0;
  double total = 0.0;
  const std::int64_t t0 = times[0];
  for (std::size_t m = 1; m < n; ++m) {
    const double g = acvf(std::abs(times[m] - t0));
    if (g == 0.0) continue;
    std::vector<std::int64_t> rest;
    rest.reserve(n - 2);
    for (std::size_t i = 1; i < n; ++i) {
      if (i != m) rest.push_back(times[i]);
    }
    total += g * wick_pairing_sum(rest, acvf);
  }
  return total;
}

}  // namespace detail

struct MomentEstimate {
  double value = 0.0;
  std::int64_t count = 0;
};

/// Table of estimated automoments keyed by canonical MomentSpec.
class AutomomentTable {
 public:
  AutomomentTable() = default;
  AutomomentTable(int max_order, std::int64_t max_abs_lag)
      : max_order_(max_order), max_abs_lag_(max_abs_lag) {}

  void insert(const MomentSpec& spec, double value, std::int64_t count) {
    entries_[canonicalize(spec)] = MomentEstimate{value, count};
  }

  [[nodiscard]] bool contains(const MomentSpec& spec) const {
    return entries_.count(canonicalize(spec)) > 0;
  }

  [[nodiscard]] const MomentEstimate& at(const MomentSpec& spec) const {
    const MomentSpec canon = canonicalize(spec);
    auto it = entries_.find(canon);
    if (it == entries_.end()) {
      std::ostringstream oss;
      oss << "automoment not in table: powers(";
      for (int p : canon.powers) oss << p << ",";
      oss << ") lags(";
      for (auto l : canon.lags) oss << l << ",";
      oss << ")";
      throw MissingMoment(oss.str());
    }
    return it->second;
  }

  [[nodiscard]] int max_order() const { return max_order_; }
  [[nodiscard]] std::int64_t max_abs_lag() const { return max_abs_lag_; }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] auto begin() const { return entries_.begin(); }
  [[nodiscard]] auto end() const { return entries_.end(); }

  /// Rows "powers;lags;value;count" with powers/lags comma-joined.
  void save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "powers;lags;value;count\n";
    out.precision(17);
    for (const auto& [spec, est] : entries_) {
      for (std::size_t i = 0; i < spec.powers.size(); ++i) {
        if (i) out << ",";
        out << spec.powers[i];
      }
      out << ";";
      for (std::size_t i = 0; i < spec.lags.size(); ++i) {
        if (i) out << ",";
        out << spec.lags[i];
      }
      out << ";" << est.value << ";" << est.count << "\n";
    }
    if (!out) throw IoError("write failed: " + path.string());
  }

  [[nodiscard]] static AutomomentTable load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty file: " + path.string());
    AutomomentTable table;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string powers_f, lags_f, value_f, count_f;
      if (!std::getline(ss, powers_f, ';') || !std::getline(ss, lags_f, ';') ||
          !std::getline(ss, value_f, ';') || !std::getline(ss, count_f)) {
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
      }
      MomentSpec spec;
      std::istringstream ps(powers_f);
      std::string tok;
      while (std::getline(ps, tok, ',')) spec.powers.push_back(std::stoi(tok));
      if (!lags_f.empty()) {
        std::istringstream ls(lags_f);
        while (std::getline(ls, tok, ',')) spec.lags.push_back(std::stoll(tok));
      }
      table.insert(spec, std::stod(value_f), std::stoll(count_f));
      table.max_order_ = std::max(table.max_order_, moment_order(spec));
      std::int64_t prev = 0;
      for (auto l : spec.lags) {
        table.max_abs_lag_ = std::max(table.max_abs_lag_, l - prev);
        prev = l;
      }
    }
    return table;
  }

 private:
  int max_order_ = 0;
  std::int64_t max_abs_lag_ = 0;
  std::map<MomentSpec, MomentEstimate> entries_;
};

/// Estimates the automoments needed downstream from one realization.
///
/// Populated specs: mu^r for r <= max_order; mu^{r,s}(h) for r+s <= max_order
/// and 1 <= h <= max_abs_lag; when window >= 1, additionally the third-order
/// specs {1,1,s} with one gap at most 2*window and every adjacent gap at most
/// max_abs_lag, and fourth-order specs {1,1,1,1} with all lags at most
/// 2*window. window is the widest task window the tables must serve; the
/// default 0 populates orders one and two only.
[[nodiscard]] inline AutomomentTable estimate_automoments(const TimeSeries& z, int max_order,
                                                          std::int64_t max_abs_lag,
                                                          std::int64_t window = 0) {
  if (max_order < 1) throw ConfigError("max_order must be >= 1");
  if (max_abs_lag < 0) throw ConfigError("max_abs_lag must be >= 0");
  if (window < 0) throw ConfigError("window must be >= 0");
  const auto T = static_cast<std::int64_t>(z.size());
  if (T <= max_abs_lag) {
    throw InsufficientData("series length " + std::to_string(T) +
                           " too short for max_abs_lag " + std::to_string(max_abs_lag));
  }
  const std::int64_t small = 2 * window;
  if (window > 0 && T <= max_abs_lag + small) {
    throw InsufficientData("series too short for the requested window");
  }

  std::vector<Eigen::ArrayXd> pw(static_cast<std::size_t>(max_order) + 1);
  pw[1] = Eigen::Map<const Eigen::ArrayXd>(z.values.data(), T);
  for (int r = 2; r <= max_order; ++r) pw[r] = pw[r - 1] * pw[1];

  AutomomentTable table(max_order, max_abs_lag);
  for (int r = 1; r <= max_order; ++r) {
    table.insert(MomentSpec{{r}, {}}, pw[r].mean(), T);
  }
  for (int r = 1; r < max_order; ++r) {
    for (int s = 1; r + s <= max_order; ++s) {
      for (std::int64_t h = 1; h <= max_abs_lag; ++h) {
        const std::int64_t n = T - h;
        const double v = (pw[r].head(n) * pw[s].tail(n)).sum() / static_cast<double>(n);
        table.insert(MomentSpec{{r, s}, {h}}, v, n);
      }
    }
  }

  if (window >= 1 && max_order >= 3) {
    for (int s = 1; s <= max_order - 2; ++s) {
      std::vector<std::array<int, 3>> patterns;
      if (s == 1) {
        patterns = {{1, 1, 1}};
      } else {
        patterns = {{s, 1, 1}, {1, s, 1}, {1, 1, s}};
      }
      for (std::int64_t l1 = 1; l1 <= max_abs_lag; ++l1) {
        const std::int64_t l2_hi = std::min<std::int64_t>(l1 + max_abs_lag, max_abs_lag + small);
        for (std::int64_t l2 = l1 + 1; l2 <= l2_hi; ++l2) {
          if (l1 > small && l2 - l1 > small) continue;
          const std::int64_t n = T - l2;
          for (const auto& p : patterns) {
            const double v =
                (pw[p[0]].head(n) * pw[p[1]].segment(l1, n) * pw[p[2]].segment(l2, n)).sum() /
                static_cast<double>(n);
            table.insert(MomentSpec{{p[0], p[1], p[2]}, {l1, l2}}, v, n);
          }
        }
      }
    }
  }

  if (window >= 1 && max_order >= 4) {
    for (std::int64_t l1 = 1; l1 <= small; ++l1) {
      for (std::int64_t l2 = l1 + 1; l2 <= small; ++l2) {
        for (std::int64_t l3 = l2 + 1; l3 <= small; ++l3) {
          const std::int64_t n = T - l3;
          const double v = (pw[1].head(n) * pw[1].segment(l1, n) * pw[1].segment(l2, n) *
                            pw[1].segment(l3, n))
                               .sum() /
                           static_cast<double>(n);
          table.insert(MomentSpec{{1, 1, 1, 1}, {l1, l2, l3}}, v, n);
        }
      }
    }
  }

  return table;
}

/// Source of stationary automoments mu_z^{r1..rk}(h2..hk).
class AutomomentProvider {
 public:
  virtual ~AutomomentProvider() = default;

  [[nodiscard]] double automoment(const MomentSpec& spec) const {
    return canonical_automoment(canonicalize(spec));
  }

  [[nodiscard]] double mean() const { return automoment(MomentSpec{{1}, {}}); }

 protected:
  [[nodiscard]] virtual double canonical_automoment(const MomentSpec& canon) const = 0;
};

/// Table-backed provider. Specs whose factors split at a time gap larger than
/// the table's lag bound factor into a product of cluster moments: beyond the
/// bound the series is treated as independent of its past, which is what makes
/// the downstream covariance series terminate.
class EmpiricalAutomomentProvider : public AutomomentProvider {
 public:
  explicit EmpiricalAutomomentProvider(AutomomentTable table) : table_(std::move(table)) {}

  [[nodiscard]] const AutomomentTable& table() const { return table_; }

 protected:
  [[nodiscard]] double canonical_automoment(const MomentSpec& canon) const override {
    std::vector<std::int64_t> times(canon.powers.size(), 0);
    for (std::size_t i = 0; i + 1 < canon.powers.size(); ++i) times[i + 1] = canon.lags[i];

    double product = 1.0;
    std::size_t start = 0;
    for (std::size_t i = 1; i <= canon.powers.size(); ++i) {
      const bool split = i == canon.powers.size() || times[i] - times[i - 1] > table_.max_abs_lag();
      if (!split) continue;
      MomentSpec cluster;
      for (std::size_t j = start; j < i; ++j) {
        cluster.powers.push_back(canon.powers[j]);
        if (j > start) cluster.lags.push_back(times[j] - times[start]);
      }
      product *= table_.at(cluster).value;
      start = i;
    }
    return product;
  }

 private:
  AutomomentTable table_;
};

/// Exact automoments of a stationary Gaussian process with the given mean and
/// autocovariance function, via the pairing expansion. Total order <= 8.
class GaussianAutomomentProvider : public AutomomentProvider {
 public:
  GaussianAutomomentProvider(double mean, std::function<double(std::int64_t)> acvf)
      : mean_(mean), acvf_(std::move(acvf)) {}

 protected:
  [[nodiscard]] double canonical_automoment(const MomentSpec& canon) const override {
    if (moment_order(canon) > 8) {
      throw OrderTooHigh("gaussian automoments supported up to total order 8");
    }
    {
      std::scoped_lock lock(cache_mutex_);
      auto it = cache_.find(canon);
      if (it != cache_.end()) return it->second;
    }
    std::vector<std::int64_t> times(canon.powers.size(), 0);
    for (std::size_t i = 0; i + 1 < canon.powers.size(); ++i) times[i + 1] = canon.lags[i];

    double total = 0.0;
    std::vector<int> centered_counts(canon.powers.size(), 0);
    expand(canon, times, 0, 1.0, centered_counts, total);
    {
      std::scoped_lock lock(cache_mutex_);
      cache_[canon] = total;
    }
    return total;
  }

 private:
  void expand(const MomentSpec& canon, const std::vector<std::int64_t>& times, std::size_t idx,
              double coeff, std::vector<int>& centered_counts, double& total) const {
    if (idx == canon.powers.size()) {
      std::vector<std::int64_t> flat;
      for (std::size_t i = 0; i < centered_counts.size(); ++i) {
        for (int c = 0; c < centered_counts[i]; ++c) flat.push_back(times[i]);
      }
      total += coeff * detail::wick_pairing_sum(flat, acvf_);
      return;
    }
    const int p = canon.powers[idx];
    for (int j = 0; j <= p; ++j) {
      centered_counts[idx] = j;
      const double c = coeff * detail::binomial(p, j) * detail::ipow(mean_, p - j);
      if (c != 0.0) expand(canon, times, idx + 1, c, centered_counts, total);
    }
    centered_counts[idx] = 0;
  }

  double mean_;
  std::function<double(std::int64_t)> acvf_;
  mutable std::mutex cache_mutex_;
  mutable std::map<MomentSpec, double> cache_;
};

/// Automoments of an IID sequence: factors at distinct lags are independent,
/// so a canonical spec is a product of raw moments.
class IidAutomomentProvider : public AutomomentProvider {
 public:
  explicit IidAutomomentProvider(std::function<double(int)> raw_moment)
      : raw_moment_(std::move(raw_moment)) {}

 protected:
  [[nodiscard]] double canonical_automoment(const MomentSpec& canon) const override {
    double product = 1.0;
    for (int p : canon.powers) product *= raw_moment_(p);
    return product;
  }

 private:
  std::function<double(int)> raw_moment_;
};

/// Raw moments of N(mean, var); E[Z^k] = (k-1)!! for even k drives the expansion.
[[nodiscard]] inline double gaussian_raw_moment(double mean, double var, int r) {
  if (r < 0) throw ConfigError("moment order must be >= 0");
  const double sd = std::sqrt(var);
  double total = 0.0;
  for (int k = 0; k <= r; k += 2) {
    double dfact = 1.0;
    for (int m = k - 1; m >= 2; m -= 2) dfact *= m;
    total += detail::binomial(r, k) * dfact * detail::ipow(sd, k) * detail::ipow(mean, r - k);
  }
  return total;
}

[[nodiscard]] inline IidAutomomentProvider make_iid_gaussian_provider(double mean, double var) {
  return IidAutomomentProvider([mean, var](int r) { return gaussian_raw_moment(mean, var, r); });
}

/// Cross moments E[y(t) z(t+h)^r] between a teaching series and the input.
/// r = 0 is the teaching mean by convention.
class ComomentTable {
 public:
  ComomentTable() = default;
  ComomentTable(int max_order, std::int64_t lag_min, std::int64_t lag_max)
      : max_order_(max_order), lag_min_(lag_min), lag_max_(lag_max) {}

  void insert(int r, std::int64_t h, double value, std::int64_t count) {
    entries_[{r, h}] = MomentEstimate{value, count};
  }

  [[nodiscard]] bool has(int r, std::int64_t h) const {
    if (r == 0) return entries_.count({0, 0}) > 0;
    return entries_.count({r, h}) > 0;
  }

  [[nodiscard]] double comoment(int r, std::int64_t h) const {
    const auto key = r == 0 ? std::pair<int, std::int64_t>{0, 0} : std::pair<int, std::int64_t>{r, h};
    auto it = entries_.find(key);
    if (it == entries_.end()) {
      throw MissingMoment("comoment not in table: r=" + std::to_string(r) +
                          " h=" + std::to_string(h));
    }
    return it->second.value;
  }

  [[nodiscard]] double mean_y() const { return comoment(0, 0); }
  [[nodiscard]] int max_order() const { return max_order_; }
  [[nodiscard]] std::int64_t lag_min() const { return lag_min_; }
  [[nodiscard]] std::int64_t lag_max() const { return lag_max_; }
  [[nodiscard]] std::size_t size() const { return entries_.size(); }
  [[nodiscard]] auto begin() const { return entries_.begin(); }
  [[nodiscard]] auto end() const { return entries_.end(); }

  void save_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "powers;lags;value;count\n";
    out.precision(17);
    for (const auto& [key, est] : entries_) {
      out << key.first << ";" << key.second << ";" << est.value << ";" << est.count << "\n";
    }
    if (!out) throw IoError("write failed: " + path.string());
  }

  [[nodiscard]] static ComomentTable load_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty file: " + path.string());
    ComomentTable table;
    table.lag_min_ = std::numeric_limits<std::int64_t>::max();
    table.lag_max_ = std::numeric_limits<std::int64_t>::min();
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string r_f, h_f, value_f, count_f;
      if (!std::getline(ss, r_f, ';') || !std::getline(ss, h_f, ';') ||
          !std::getline(ss, value_f, ';') || !std::getline(ss, count_f)) {
        throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed row");
      }
      const int r = std::stoi(r_f);
      const auto h = static_cast<std::int64_t>(std::stoll(h_f));
      table.insert(r, h, std::stod(value_f), std::stoll(count_f));
      table.max_order_ = std::max(table.max_order_, r);
      if (r > 0) {
        table.lag_min_ = std::min(table.lag_min_, h);
        table.lag_max_ = std::max(table.lag_max_, h);
      }
    }
    if (table.lag_min_ > table.lag_max_) {
      table.lag_min_ = 0;
      table.lag_max_ = 0;
    }
    return table;
  }

 private:
  int max_order_ = 0;
  std::int64_t lag_min_ = 0;
  std::int64_t lag_max_ = 0;
  std::map<std::pair<int, std::int64_t>, MomentEstimate> entries_;
};

/// Estimates E[y(t) z(t+h)^r] for r <= max_order and lag_min <= h <= lag_max.
/// Series are aligned on absolute time via their origins.
[[nodiscard]] inline ComomentTable estimate_comoments(const TimeSeries& y, const TimeSeries& z,
                                                      int max_order, std::int64_t lag_min,
                                                      std::int64_t lag_max) {
  if (max_order < 1) throw ConfigError("max_order must be >= 1");
  if (lag_min > lag_max) throw ConfigError("lag_min must be <= lag_max");
  if (y.empty() || z.empty()) throw InsufficientData("empty series");

  const auto T = static_cast<std::int64_t>(z.size());
  std::vector<Eigen::ArrayXd> pw(static_cast<std::size_t>(max_order) + 1);
  pw[1] = Eigen::Map<const Eigen::ArrayXd>(z.values.data(), T);
  for (int r = 2; r <= max_order; ++r) pw[r] = pw[r - 1] * pw[1];
  const Eigen::Map<const Eigen::ArrayXd> yv(y.values.data(), static_cast<std::int64_t>(y.size()));

  ComomentTable table(max_order, lag_min, lag_max);
  table.insert(0, 0, yv.mean(), static_cast<std::int64_t>(y.size()));
  for (std::int64_t h = lag_min; h <= lag_max; ++h) {
    // E[y(t) z(t+h)^r] over t with both series defined
    const std::int64_t t_lo = std::max(y.first_time(), z.first_time() - h);
    const std::int64_t t_hi = std::min(y.last_time(), z.last_time() - h);
    const std::int64_t n = t_hi - t_lo + 1;
    if (n < 2) {
      throw InsufficientData("series overlap too small at lag " + std::to_string(h));
    }
    const std::int64_t yi = t_lo - y.first_time();
    const std::int64_t zi = t_lo + h - z.first_time();
    for (int r = 1; r <= max_order; ++r) {
      const double v = (yv.segment(yi, n) * pw[r].segment(zi, n)).sum() / static_cast<double>(n);
      table.insert(r, h, v, n);
    }
  }
  return table;
}

}  // namespace tdrc
