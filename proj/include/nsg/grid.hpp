#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nsg/group.hpp"

namespace nsg {

/// Truncated box [-L_0, L_0] x ... x [-L_{N-1}, L_{N-1}] in group coordinates
/// with a cell-centered grid of M_i (even, >= 8) points per axis.
class BoxDomain {
 public:
  BoxDomain(GroupSpec group, std::vector<double> half_widths, std::vector<int> points_per_axis);

  /// Box whose aspect follows the dilations: half-width L^{r_i} on axis i
  /// (so L_t = L^2 on H^1), with M points on every axis.
  static BoxDomain gauge_box(const GroupSpec& group, double half_width, int points);

  const GroupSpec& group() const { return group_; }
  int dim() const { return group_.dim(); }
  const std::vector<double>& half_widths() const { return half_widths_; }
  const std::vector<int>& points_per_axis() const { return points_; }
  const std::vector<double>& spacings() const { return spacings_; }
  /// Product of the spacings.
  double cell_volume() const { return cell_volume_; }
  /// Product of 2 L_i.
  double box_volume() const;
  size_t size() const { return size_; }
  /// Row-major strides (last axis fastest).
  const std::vector<size_t>& strides() const { return strides_; }

  double node_coord(int axis, int k) const { return -half_widths_[static_cast<size_t>(axis)] + (k + 0.5) * spacings_[static_cast<size_t>(axis)]; }
  GroupPoint node(size_t index) const;
  /// Node coordinates as a flat (size x dim) row-major array.
  std::vector<double> node_table() const;
  /// Largest gauge radius of a box corner.
  double max_gauge_radius() const;

  /// Same box, points doubled on every axis.
  BoxDomain refined() const;

  bool operator==(const BoxDomain& other) const = default;

 private:
  GroupSpec group_;
  std::vector<double> half_widths_;
  std::vector<int> points_;
  std::vector<double> spacings_;
  std::vector<size_t> strides_;
  double cell_volume_;
  size_t size_;
};

/// Samples on a BoxDomain; the represented function is zero outside the box.
class GridFunction {
 public:
  GridFunction(BoxDomain domain, std::vector<double> values);
  static GridFunction zeros(BoxDomain domain);

  const BoxDomain& domain() const { return domain_; }
  std::span<const double> values() const { return values_; }
  size_t size() const { return values_.size(); }
  double operator[](size_t i) const { return values_[i]; }

  GridFunction scaled(double c) const;

  /// Multilinear interpolation at an arbitrary point, zero outside the box
  /// (nodes beyond the last cell center act as zeros).
  double interpolate(std::span<const double> point) const;

 private:
  BoxDomain domain_;
  std::vector<double> values_;
};

GridFunction sample(const BoxDomain& domain, const std::function<double(std::span<const double>)>& f);

/// ∫|u|^p ≈ vol Σ |u_i|^p. Throws for p < 1.
double lp_norm_pow(const GridFunction& u, double p);
double lp_norm_pow(std::span<const double> values, double cell_volume, double p);

/// ∫ ρ log ρ with ρ = |u|^p / ‖u‖_p^p, using 0·log 0 = 0. Throws for u ≡ 0.
double entropy_density_integral(const GridFunction& u, double p);

/// x ↦ λ^{amplitude_exponent} u(D_λ x), resampled on the same grid.
GridFunction dilate_resample(const GridFunction& u, double lambda, double amplitude_exponent);

/// Doubles M_i on every axis using multilinear interpolation.
GridFunction refine(const GridFunction& u);

/// NSGF container: "NSGF", u32 version, u32 header length, JSON header,
/// little-endian f64 payload (row-major), u32 CRC32 of the payload bytes.
inline constexpr uint32_t kNsgfVersion = 1;

void save(const GridFunction& u, const std::filesystem::path& path);
void save(const GridFunction& u, const std::filesystem::path& path, const nlohmann::json& meta);
GridFunction load(const std::filesystem::path& path);
/// Loads and also returns the "meta" object stored in the header (null if absent).
GridFunction load(const std::filesystem::path& path, nlohmann::json* meta);

/// CSV with one row per node: coordinates then value.
void export_csv(const GridFunction& u, const std::filesystem::path& path);

nlohmann::json domain_to_json(const BoxDomain& domain);
BoxDomain domain_from_json(const nlohmann::json& j);

}  // namespace nsg
