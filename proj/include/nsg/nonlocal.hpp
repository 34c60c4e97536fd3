#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "nsg/grid.hpp"
#include "nsg/group.hpp"

namespace nsg {

/// Fractional order s, integrability p and the constant multiplying the
/// Gagliardo double integral.
struct KernelSpec {
  GroupSpec group;
  double s;
  double p;
  double kernel_constant = 1.0;

  /// Q + p s, the kernel exponent.
  double kernel_exponent() const { return group.homogeneous_dim() + p * s; }
  /// Throws InvalidArgument unless 0 < s < 1, p > 1 and constant > 0.
  void validate() const;
};

/// w[i] = ∫_{y ∉ Ω} |y^{-1} x_i|^{-(Q+ps)} dy for every node.
struct ExteriorWeights {
  std::vector<double> w;
  double shell_radius = 0.0;
  /// Gauge-sphere constant: dy = σ r^{Q-1} dr in gauge-polar coordinates.
  double sigma = 0.0;
  /// Relative change of the angular quadrature at the last refinement.
  double angular_error = 0.0;
  int angular_points = 0;
};

struct SeminormBreakdown {
  double interior = 0.0;
  double exterior = 0.0;
  double total = 0.0;
};

/// Numerically evaluates ∫_{1<|z|<2} |z|^{-(Q+ps)} dz and solves for σ.
double gauge_sphere_constant(const GroupSpec& group, double ps);

struct ExteriorOptions {
  /// Shell radius as a multiple of the box's largest gauge radius.
  double shell_factor = 4.0;
  double rel_tol = 1e-4;
  int max_refinements = 6;
};

/// Exterior integral for a single point inside the box.
double exterior_weight_at(const BoxDomain& domain, const KernelSpec& kernel, std::span<const double> point,
                          const ExteriorOptions& opts = {});

ExteriorWeights exterior_weights(const BoxDomain& domain, const KernelSpec& kernel,
                                 const ExteriorOptions& opts = {});

/// Same as exterior_weights but reads/writes an NSGF cache file in `cache_dir`
/// keyed by (group, box, M, s, p).
ExteriorWeights exterior_weights_cached(const BoxDomain& domain, const KernelSpec& kernel,
                                        const std::filesystem::path& cache_dir, const ExteriorOptions& opts = {});

/// Largest gauge length of a single grid step, max_a |h_a e_a|; equals
/// max_a h_a on R^N and max(h_x, h_y, 2 sqrt(h_t)) on H^1.
double gauge_cell_size(const BoxDomain& domain);

/// Which pairs get subcell quadrature. GaugeBall: dist <= near_factor ·
/// gauge_cell_size. CellBox: |z_a| <= near_factor · h_a for every coordinate
/// of z = x_j^{-1} x_i, which stays compact on strongly anisotropic H^1 cells.
/// Auto picks GaugeBall on R^N and CellBox on H^1.
enum class NearRule { Auto, GaugeBall, CellBox };

struct NonlocalOptions {
  double near_factor = 2.0;
  NearRule near_rule = NearRule::Auto;
  /// Subcell points per axis (positions (2m+1)/(2n) - 1/2 of a cell).
  int subcell_points = 4;
  ExteriorOptions exterior;
};

/// Discretized Gagliardo seminorm of the X_0 setting on a fixed grid.
///
/// Interior: ordered pairs (i, j) with dist(x_i, x_j) > near radius use the
/// midpoint rule vol² |u_i - u_j|^p K_ij (computed once per unordered pair
/// and doubled). Nearer pairs, including i = j, integrate y over cell j on a
/// subcell lattice with u interpolated multilinearly. Exterior: 2 Σ |u_i|^p w_i vol.
/// Everything is multiplied by kernel_constant.
class NonlocalOperator {
 public:
  NonlocalOperator(BoxDomain domain, KernelSpec kernel, NonlocalOptions opts = {});
  /// Uses precomputed exterior weights (must match the domain size).
  NonlocalOperator(BoxDomain domain, KernelSpec kernel, ExteriorWeights weights, NonlocalOptions opts = {});

  const BoxDomain& domain() const { return domain_; }
  const KernelSpec& kernel() const { return kernel_; }
  const ExteriorWeights& exterior() const { return exterior_; }
  /// Gauge radius of the near region (GaugeBall) or of its bounding ball (CellBox).
  double near_radius() const { return near_radius_; }
  bool near_uses_cell_box() const { return near_box_; }
  /// Average number of near cells per node.
  double mean_near_cells() const;

  SeminormBreakdown seminorm(std::span<const double> u) const;
  /// Seminorm and its exact gradient with respect to the nodal values.
  SeminormBreakdown seminorm_with_gradient(std::span<const double> u, std::span<double> grad) const;
  /// Discrete weak pairing; pairing(u, u) == seminorm(u).total.
  double pairing(std::span<const double> u, std::span<const double> v) const;

 private:
  void init();
  void check(std::span<const double> u) const;
  void subpoint_values(std::span<const double> u, std::vector<double>& out) const;

  BoxDomain domain_;
  KernelSpec kernel_;
  NonlocalOptions opts_;
  ExteriorWeights exterior_;
  double near_radius_ = 0.0;
  bool near_box_ = false;
  double near_limits_[3] = {0.0, 0.0, 0.0};
  // Node coordinates, one array per axis.
  std::vector<std::vector<double>> coords_;
  // For every node, the near cells (CSR layout).
  std::vector<size_t> near_offsets_;
  std::vector<uint32_t> near_cells_;
  // Subcell lattice: per-axis offsets (in units of h) and, per subpoint, the
  // 2^d interpolation stencil relative to its cell.
  int n_sub_ = 0;
  std::vector<std::vector<double>> sub_offsets_;
  std::vector<int> stencil_shift_;     // n_sub * 2^d * d integer index shifts
  std::vector<double> stencil_weight_; // n_sub * 2^d
  // Row chunks of the triangular far-field loop with near-equal pair counts.
  std::vector<size_t> row_chunks_;
};

SeminormBreakdown gagliardo_pp(const GridFunction& u, const KernelSpec& k, const NonlocalOptions& opts = {});
double pairing(const GridFunction& u, const GridFunction& v, const KernelSpec& k, const NonlocalOptions& opts = {});
std::vector<double> seminorm_gradient(const GridFunction& u, const KernelSpec& k, const NonlocalOptions& opts = {});

/// Reference sum over all ordered pairs in a single plain loop, using
/// GridFunction::interpolate and nsg::dist. Exterior weights are passed in so
/// both routes see the same exterior term. Throws for grids above 1e5 nodes.
double oracle_gagliardo_pp(const GridFunction& u, const KernelSpec& k, const ExteriorWeights& weights,
                           const NonlocalOptions& opts = {});

/// Pointwise residual C·P.V.∫ |u(x)-u(y)|^{p-2}(u(x)-u(y)) K dy + |u|^{p-2}u - |u|^{q-2}u
/// at every node, with C = kernel_constant, obtained from the seminorm
/// gradient as grad_i / (2 p vol).
std::vector<double> operator_residual(const NonlocalOperator& op, std::span<const double> u, double q);

}  // namespace nsg
