#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tdrc/errors.hpp"

namespace tdrc {

/// Nonlinear neuron map f(x, I, theta) together with the partial derivatives
/// the linearization needs.
class KernelMap {
 public:
  virtual ~KernelMap() = default;

  [[nodiscard]] virtual double value(double x, double input, std::span<const double> theta) const = 0;

  /// First partial derivative in the state argument.
  [[nodiscard]] virtual double dx(double x, double input, std::span<const double> theta) const = 0;

  /// order-th partial derivative in the input argument (order >= 1).
  [[nodiscard]] virtual double dinput(double x, double input, std::span<const double> theta,
                                      int order) const = 0;

  [[nodiscard]] virtual std::size_t theta_size() const = 0;
  [[nodiscard]] virtual std::string name() const = 0;

  /// Search interval for the self-consistent state at zero input.
  [[nodiscard]] virtual std::pair<double, double> fixed_point_bracket(
      std::span<const double> theta) const {
    (void)theta;
    return {-10.0, 10.0};
  }

  void check_theta(std::span<const double> theta) const {
    if (theta.size() != theta_size()) {
      throw ConfigError(name() + " kernel expects " + std::to_string(theta_size()) +
                        " parameters, got " + std::to_string(theta.size()));
    }
    for (double v : theta) {
      if (!std::isfinite(v)) throw ConfigError(name() + " kernel parameters must be finite");
    }
  }
};

/// f(x, I, theta) = eta sin^2(x + gamma I + phi), theta = (eta, gamma, phi).
class IkedaKernel final : public KernelMap {
 public:
  [[nodiscard]] double value(double x, double input, std::span<const double> theta) const override {
    const double s = std::sin(x + theta[1] * input + theta[2]);
    return theta[0] * s * s;
  }

  [[nodiscard]] double dx(double x, double input, std::span<const double> theta) const override {
    return theta[0] * std::sin(2.0 * (x + theta[1] * input + theta[2]));
  }

  [[nodiscard]] double dinput(double x, double input, std::span<const double> theta,
                              int order) const override {
    if (order < 1) throw ConfigError("derivative order must be >= 1");
    // d^r/du^r sin^2(u) = -2^{r-1} cos(2u + r pi/2), chain rule brings gamma^r
    const double u = x + theta[1] * input + theta[2];
    double gamma_pow = 1.0;
    for (int i = 0; i < order; ++i) gamma_pow *= theta[1];
    const double two_pow = std::pow(2.0, order - 1);
    return -theta[0] * gamma_pow * two_pow *
           std::cos(2.0 * u + order * std::numbers::pi / 2.0);
  }

  [[nodiscard]] std::size_t theta_size() const override { return 3; }
  [[nodiscard]] std::string name() const override { return "ikeda"; }

  /// f maps into [0, eta] (or [eta, 0]), so any fixed point lies within
  /// |x| <= |eta|; pad by one.
  [[nodiscard]] std::pair<double, double> fixed_point_bracket(
      std::span<const double> theta) const override {
    const double r = std::abs(theta[0]) + 1.0;
    return {-r, r};
  }
};

/// Taylor coefficients of I -> f(x0, I) at I = 0: b_r = f^(r)(x0, 0) / r!.
[[nodiscard]] inline std::vector<double> input_taylor_coefficients(const KernelMap& kernel,
                                                                   std::span<const double> theta,
                                                                   double x0, int order) {
  if (order < 1) throw ConfigError("polynomial order must be >= 1");
  kernel.check_theta(theta);
  std::vector<double> b(static_cast<std::size_t>(order));
  double factorial = 1.0;
  for (int r = 1; r <= order; ++r) {
    factorial *= r;
    b[static_cast<std::size_t>(r - 1)] = kernel.dinput(x0, 0.0, theta, r) / factorial;
  }
  return b;
}

}  // namespace tdrc
