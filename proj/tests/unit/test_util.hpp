#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "nsg/grid.hpp"

namespace testutil {

inline double rel(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

inline std::vector<double> random_values(size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> U(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = U(rng);
  return v;
}

inline nsg::GridFunction random_function(const nsg::BoxDomain& dom, std::mt19937_64& rng) {
  return nsg::GridFunction(dom, random_values(dom.size(), rng));
}

}  // namespace testutil
