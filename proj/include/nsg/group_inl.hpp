#pragma once

#include <cmath>

namespace nsg {

inline double dist_unchecked(GroupKind kind, int dim, const double* a, const double* b) {
  if (kind == GroupKind::Heisenberg1) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    // t-coordinate of b^{-1}∘a
    const double dt = a[2] - b[2] - 0.5 * (b[0] * a[1] - b[1] * a[0]);
    const double r2 = dx * dx + dy * dy;
    return std::sqrt(std::sqrt(r2 * r2 + 16.0 * dt * dt));
  }
  double acc = 0.0;
  for (int i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace nsg
