#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

namespace nsg::detail {

/// Gauss-Legendre nodes and weights on [-1, 1].
inline std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n) {
  std::vector<double> x(static_cast<size_t>(n)), w(static_cast<size_t>(n));
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 1; k <= n; ++k) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
      }
      dp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    x[static_cast<size_t>(i)] = -z;
    x[static_cast<size_t>(n - 1 - i)] = z;
    w[static_cast<size_t>(i)] = w[static_cast<size_t>(n - 1 - i)] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return {x, w};
}

/// Tanh-sinh quadrature of f over [a, b]; tolerant of integrable endpoint
/// singularities. `level` halves the step each increment.
inline double tanh_sinh(const std::function<double(double)>& f, double a, double b, int level = 7) {
  if (!(b > a)) return 0.0;
  const double h = std::ldexp(1.0, -level);
  const double c = 0.5 * (a + b), r = 0.5 * (b - a);
  const double half_pi = 0.5 * std::numbers::pi;
  double acc = 0.0;
  for (int k = -static_cast<int>(4.0 / h); k <= static_cast<int>(4.0 / h); ++k) {
    const double t = k * h;
    const double u = half_pi * std::sinh(t);
    const double ch = std::cosh(u);
    const double weight = half_pi * std::cosh(t) / (ch * ch);
    if (weight < 1e-300) continue;
    // Distance to the nearer endpoint, computed without cancellation.
    const double gap = r / (std::exp(std::abs(u)) * ch);
    const double x = t < 0 ? a + gap : (t > 0 ? b - gap : c);
    if (x <= a || x >= b) continue;
    acc += weight * f(x);
  }
  return r * h * acc;
}

}  // namespace nsg::detail
