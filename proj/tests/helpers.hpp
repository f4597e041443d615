#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "tdrc/kernel.hpp"
#include "tdrc/tdr.hpp"

namespace tdrc::test {

struct BatchStats {
  double mean = 0.0;
  double se = 0.0;
};

/// Mean and batch-means standard error (handles autocorrelated samples).
inline BatchStats batch_stats(const std::vector<double>& x, int nbatches = 50) {
  const std::size_t n = x.size() / static_cast<std::size_t>(nbatches);
  std::vector<double> bm;
  bm.reserve(static_cast<std::size_t>(nbatches));
  for (int b = 0; b < nbatches; ++b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[static_cast<std::size_t>(b) * n + i];
    bm.push_back(acc / static_cast<double>(n));
  }
  double mean = 0.0;
  for (double v : bm) mean += v;
  mean /= static_cast<double>(nbatches);
  double var = 0.0;
  for (double v : bm) var += (v - mean) * (v - mean);
  var /= static_cast<double>(nbatches - 1);
  BatchStats out;
  out.mean = mean;
  out.se = std::sqrt(var / static_cast<double>(nbatches));
  return out;
}

/// Zero-mean Gaussian AR(1) path with stationary start.
inline std::vector<double> ar1_path(double phi, double sigma2, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(sigma2));
  std::vector<double> x(n);
  double v = normal(eng) / std::sqrt(1.0 - phi * phi);
  for (std::size_t t = 0; t < n; ++t) {
    x[t] = v;
    v = phi * v + normal(eng);
  }
  return x;
}

inline double ar1_acvf(double phi, double sigma2, std::int64_t h) {
  return sigma2 * std::pow(phi, static_cast<double>(std::abs(h))) / (1.0 - phi * phi);
}

/// Discrete Lyapunov solve X = A X A' + C through the vectorized linear
/// system; independent of the series-summation route.
inline Eigen::MatrixXd dlyap_kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c) {
  const Eigen::Index n = a.rows();
  const Eigen::Index n2 = n * n;
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n2, n2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index k = 0; k < n; ++k) {
        for (Eigen::Index l = 0; l < n; ++l) {
          system(i * n + j, k * n + l) -= a(i, k) * a(j, l);
        }
      }
    }
  }
  Eigen::VectorXd cv(n2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) cv(i * n + j) = c(i, j);
  }
  const Eigen::VectorXd xv = system.partialPivLu().solve(cv);
  Eigen::MatrixXd x(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) x(i, j) = xv(i * n + j);
  }
  return x;
}

/// One cascade step evaluated through the unrolled per-neuron expansion
///   x_i(t) = e^{-i xi} x_N(t-1)
///          + (1 - e^{-xi}) sum_{j=0}^{i-1} e^{-j xi} f(x_{i-j}(t-1), I_{i-j}(t)).
inline Eigen::VectorXd tdr_step_unrolled(const TdrParams& p, const Eigen::VectorXd& x_prev,
                                         double z) {
  const int N = p.neurons;
  const double e = 1.0 / (1.0 + p.separation);
  const double gain = 1.0 - e;
  const std::span<const double> theta(p.theta);
  Eigen::VectorXd x(N);
  for (int i0 = 0; i0 < N; ++i0) {
    double acc = std::pow(e, i0 + 1) * x_prev(N - 1);
    for (int j = 0; j <= i0; ++j) {
      acc += gain * std::pow(e, j) *
             p.kernel->value(x_prev(i0 - j), p.mask(i0 - j) * z, theta);
    }
    x(i0) = acc;
  }
  return x;
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("tdrc_test_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  [[nodiscard]] const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace tdrc::test
