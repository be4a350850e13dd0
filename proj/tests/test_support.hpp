#pragma once

// Independent oracles for the unit tests: finite differences, naive density
// sums and closed-form Gaussian path probabilities. Nothing here calls into
// the code paths it is used to check.

#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "flowpert/target_gmm.hpp"

namespace flowpert::test {

inline double log_gauss_diag(std::span<const double> x, std::span<const double> mean, std::span<const double> var) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = x[i] - mean[i];
    acc += -0.5 * r * r / var[i] - 0.5 * std::log(2.0 * std::numbers::pi * var[i]);
  }
  return acc;
}

/// Mixture density by direct summation of exp(log N), with covariances inflated by s^2.
inline double naive_density(const GmmSpec& g, std::span<const double> x, double s = 0.0) {
  double p = 0.0;
  for (std::size_t j = 0; j < g.k(); ++j) {
    std::vector<double> var = g.variances[j];
    for (double& v : var) v += s * s;
    p += g.weights[j] * std::exp(log_gauss_diag(x, g.means[j], var));
  }
  return p;
}

using ScalarFn = std::function<double(const std::vector<double>&)>;
using VectorFn = std::function<std::vector<double>(const std::vector<double>&)>;

inline std::vector<double> fd_gradient(const ScalarFn& f, std::vector<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double fd_laplacian(const ScalarFn& f, std::vector<double> x, double h = 1e-4) {
  const double f0 = f(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = f(x);
    x[i] = x0 - h;
    const double fm = f(x);
    x[i] = x0;
    acc += (fp - 2.0 * f0 + fm) / (h * h);
  }
  return acc;
}

/// Row-major Jacobian J[r][c] = d f_r / d x_c by central differences.
inline std::vector<std::vector<double>> fd_jacobian(const VectorFn& f, std::vector<double> x, double h = 1e-5) {
  const std::size_t n = x.size();
  std::vector<std::vector<double>> J(n, std::vector<double>(n));
  for (std::size_t c = 0; c < n; ++c) {
    const double x0 = x[c];
    x[c] = x0 + h;
    const auto fp = f(x);
    x[c] = x0 - h;
    const auto fm = f(x);
    x[c] = x0;
    for (std::size_t r = 0; r < n; ++r) J[r][c] = (fp[r] - fm[r]) / (2.0 * h);
  }
  return J;
}

/// log|det A| by Gaussian elimination with partial pivoting.
inline double log_abs_det(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  double acc = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r) {
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    }
    std::swap(a[c], a[piv]);
    acc += std::log(std::abs(a[c][c]));
    for (std::size_t r = c + 1; r < n; ++r) {
      const double f = a[r][c] / a[c][c];
      for (std::size_t k = c; k < n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return acc;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace flowpert::test
