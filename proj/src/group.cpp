#include "nsg/group.hpp"

#include <cmath>
#include <numeric>

#include "nsg/error.hpp"

namespace nsg {

GroupSpec::GroupSpec(GroupKind kind, std::vector<int> exponents)
    : kind_(kind), exponents_(std::move(exponents)),
      q_(std::accumulate(exponents_.begin(), exponents_.end(), 0)) {}

GroupSpec GroupSpec::euclidean(int dim) {
  if (dim < 1) {
    throw InvalidArgument("euclidean group dimension must be positive, got " + std::to_string(dim));
  }
  return GroupSpec(GroupKind::Euclidean, std::vector<int>(static_cast<size_t>(dim), 1));
}

GroupSpec GroupSpec::heisenberg1() { return GroupSpec(GroupKind::Heisenberg1, {1, 1, 2}); }

std::string GroupSpec::name() const {
  return kind_ == GroupKind::Heisenberg1 ? "heisenberg1" : "euclidean";
}

std::string GroupSpec::gauge_name() const {
  return kind_ == GroupKind::Heisenberg1 ? "koranyi: ((x^2+y^2)^2+16t^2)^(1/4)" : "euclidean norm";
}

namespace {

void check_point(const GroupSpec& spec, std::span<const double> a, const char* what) {
  if (static_cast<int>(a.size()) != spec.dim()) {
    throw InvalidArgument(std::string(what) + ": point has " + std::to_string(a.size()) +
                          " coordinates, group dimension is " + std::to_string(spec.dim()));
  }
}

}  // namespace

GroupPoint identity(const GroupSpec& spec) { return GroupPoint(static_cast<size_t>(spec.dim()), 0.0); }

GroupPoint compose(const GroupSpec& spec, std::span<const double> a, std::span<const double> b) {
  check_point(spec, a, "compose");
  check_point(spec, b, "compose");
  GroupPoint out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
  if (spec.kind() == GroupKind::Heisenberg1) {
    out[2] += 0.5 * (a[0] * b[1] - a[1] * b[0]);
  }
  return out;
}

GroupPoint inverse(const GroupSpec& spec, std::span<const double> a) {
  check_point(spec, a, "inverse");
  GroupPoint out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = -a[i];
  return out;
}

GroupPoint dilate(const GroupSpec& spec, double lambda, std::span<const double> a) {
  check_point(spec, a, "dilate");
  if (!(lambda > 0.0)) {
    throw InvalidArgument("dilate: lambda must be positive, got " + std::to_string(lambda));
  }
  GroupPoint out(a.size());
  const auto& r = spec.dilation_exponents();
  for (size_t i = 0; i < a.size(); ++i) {
    double scale = 1.0;
    for (int k = 0; k < r[i]; ++k) scale *= lambda;
    out[i] = scale * a[i];
  }
  return out;
}

double qnorm(const GroupSpec& spec, std::span<const double> a) {
  check_point(spec, a, "qnorm");
  const GroupPoint zero = identity(spec);
  return dist_unchecked(spec.kind(), spec.dim(), a.data(), zero.data());
}

double dist(const GroupSpec& spec, std::span<const double> a, std::span<const double> b) {
  check_point(spec, a, "dist");
  check_point(spec, b, "dist");
  return dist_unchecked(spec.kind(), spec.dim(), a.data(), b.data());
}

}  // namespace nsg
