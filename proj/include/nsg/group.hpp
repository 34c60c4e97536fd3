#pragma once

#include <span>
#include <string>
#include <vector>

namespace nsg {

enum class GroupKind { Euclidean, Heisenberg1 };

/// A stratified group realized on R^N: Euclidean R^N (abelian) or the first
/// Heisenberg group H^1 in polarized coordinates (x, y, t).
class GroupSpec {
 public:
  static GroupSpec euclidean(int dim);
  static GroupSpec heisenberg1();

  GroupKind kind() const { return kind_; }
  /// Topological dimension N.
  int dim() const { return static_cast<int>(exponents_.size()); }
  /// Dilation exponents r_i.
  const std::vector<int>& dilation_exponents() const { return exponents_; }
  /// Homogeneous dimension Q = sum r_i.
  int homogeneous_dim() const { return q_; }

  /// "euclidean" or "heisenberg1".
  std::string name() const;
  /// Human-readable description of the quasi-norm in use.
  std::string gauge_name() const;

  bool operator==(const GroupSpec& other) const = default;

 private:
  GroupSpec(GroupKind kind, std::vector<int> exponents);

  GroupKind kind_;
  std::vector<int> exponents_;
  int q_;
};

using GroupPoint = std::vector<double>;

GroupPoint identity(const GroupSpec& spec);

/// Group law a∘b. On H^1: (x,y,t)∘(x',y',t') = (x+x', y+y', t+t'+(xy'-yx')/2).
GroupPoint compose(const GroupSpec& spec, std::span<const double> a, std::span<const double> b);

GroupPoint inverse(const GroupSpec& spec, std::span<const double> a);

/// D_λ(a): coordinate i scaled by λ^{r_i}. Throws for λ <= 0.
GroupPoint dilate(const GroupSpec& spec, double lambda, std::span<const double> a);

/// Homogeneous quasi-norm: Euclidean norm on R^N, Korányi gauge
/// ((x²+y²)² + 16t²)^{1/4} on H^1.
double qnorm(const GroupSpec& spec, std::span<const double> a);

/// Left-invariant distance |b^{-1}∘a|.
double dist(const GroupSpec& spec, std::span<const double> a, std::span<const double> b);

/// Allocation-free distance for the hot kernels. Both points must have
/// spec.dim() coordinates; no checking is done.
inline double dist_unchecked(GroupKind kind, int dim, const double* a, const double* b);

}  // namespace nsg

#include "nsg/group_inl.hpp"
