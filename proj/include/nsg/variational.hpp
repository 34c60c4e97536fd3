#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nsg/grid.hpp"
#include "nsg/nonlocal.hpp"

namespace nsg {

/// Exponents of (-Δ_{p,G})^s u + |u|^{p-2}u = |u|^{q-2}u.
struct ProblemParams {
  KernelSpec kernel;
  double q = 0.0;
  /// Accept Q = ps, where p_s* is infinite (the line with s = 1/2, p = 2).
  bool allow_borderline = false;

  double s() const { return kernel.s; }
  double p() const { return kernel.p; }
  int Q() const { return kernel.group.homogeneous_dim(); }
  /// Qp/(Q - ps), or +inf when Q = ps.
  double critical_exponent() const;
  /// Throws InvalidArgument naming the violated constraint.
  void validate() const;
};

struct EnergyReport {
  double seminorm_pp = 0.0;  // kernel_constant · [u]^p
  double lp_pp = 0.0;
  double lq_qq = 0.0;
  double W_pp = 0.0;  // seminorm_pp + lp_pp
  double I = 0.0;
  double L = 0.0;
  std::optional<double> theta;
  std::optional<double> R;
};

/// I, 𝓛, θ and R on one grid; owns the nonlocal operator.
class EnergyFunctional {
 public:
  EnergyFunctional(ProblemParams params, BoxDomain domain, NonlocalOptions opts = {});
  EnergyFunctional(ProblemParams params, std::shared_ptr<const NonlocalOperator> op);

  const ProblemParams& params() const { return params_; }
  const BoxDomain& domain() const { return op_->domain(); }
  const NonlocalOperator& op() const { return *op_; }

  EnergyReport energy(std::span<const double> u) const;
  /// ∂I_h/∂u_i.
  void energy_gradient(std::span<const double> u, std::span<double> grad) const;
  /// θ with θ^{q-p} = W/‖u‖_q^q. Throws for u ≡ 0.
  double nehari_theta(std::span<const double> u) const;
  /// (1/p - 1/q) W^{q/(q-p)} (‖u‖_q^q)^{-p/(q-p)}. Throws for u ≡ 0.
  double rayleigh(std::span<const double> u) const;
  /// R and ∇R; also returns the report at u through `report` when non-null.
  double rayleigh_with_gradient(std::span<const double> u, std::span<double> grad, EnergyReport* report = nullptr) const;

 private:
  ProblemParams params_;
  std::shared_ptr<const NonlocalOperator> op_;
};

EnergyReport energy(const GridFunction& u, const ProblemParams& params, const NonlocalOptions& opts = {});
double nehari_theta(const GridFunction& u, const ProblemParams& params, const NonlocalOptions& opts = {});
double rayleigh(const GridFunction& u, const ProblemParams& params, const NonlocalOptions& opts = {});
std::vector<double> energy_gradient(const GridFunction& u, const ProblemParams& params,
                                    const NonlocalOptions& opts = {});

enum class InitKind { GaugeBump, Gaussian, File };

struct SolverOptions {
  int max_iter = 2000;
  double tol_rel_R = 1e-8;
  double tol_grad = 1e-6;
  double armijo_c = 1e-4;
  double armijo_shrink = 0.5;
  InitKind init = InitKind::GaugeBump;
  std::filesystem::path init_file;
  /// Gauge radius scale a of the initial guess: exp(-|x|/a) or exp(-|x|²/a²).
  double init_scale = 1.0;
  /// Relative amplitude of seeded uniform noise added to the initial guess.
  double init_noise = 0.0;
  /// Number of refinements; the first solve runs on M / 2^levels points.
  int continuation_levels = 2;
  uint64_t rng_seed = 1;
  /// L-BFGS memory; 0 gives plain steepest descent.
  int lbfgs_memory = 8;
  NonlocalOptions nonlocal;
  /// Directory for cached exterior weights (empty: no cache).
  std::filesystem::path cache_dir;
  /// Called after every accepted iteration (level, iteration, R, weak residual).
  std::function<void(int, int, double, double)> progress;

  void validate() const;
};

struct IdentityResiduals {
  double r1 = 0.0;  // [φ]^p / ‖φ‖_p^p vs Q(q-p)/(pqs-Q(q-p))
  double r2 = 0.0;  // ‖φ‖_q^q / ‖φ‖_p^p vs pqs/(pqs-Q(q-p))
  double r3 = 0.0;  // ‖φ‖_p^p vs (pqs-Q(q-p))/((q-p)s) · d
  double ratio1 = 0.0;
  double ratio2 = 0.0;
  double target1 = 0.0;
  double target2 = 0.0;
};

struct HistoryEntry {
  int level = 0;
  int iter = 0;
  double R = 0.0;
  double grad_norm = 0.0;
  double weak_residual = 0.0;
};

struct LevelSummary {
  std::vector<int> points_per_axis;
  int iterations = 0;
  bool converged = false;
  double d = 0.0;
  double weak_residual = 0.0;
  IdentityResiduals residuals;
};

struct GroundStateResult {
  GridFunction phi;
  double d = 0.0;
  EnergyReport report{};
  IdentityResiduals identity_residuals{};
  double weak_residual = 0.0;
  bool converged = false;
  std::string message{};
  int iterations = 0;
  double phi_min = 0.0;
  double phi_max = 0.0;
  std::vector<HistoryEntry> history{};
  std::vector<LevelSummary> levels{};
};

/// Minimizes the scale-invariant Rayleigh quotient by line-searched quasi-
/// Newton steps with optional grid continuation, then projects onto the
/// Nehari manifold. Never throws for non-convergence: the best iterate is
/// returned with converged = false.
GroundStateResult solve_ground_state(const ProblemParams& params, const BoxDomain& domain,
                                     const SolverOptions& opts = {});

/// Same, on a prebuilt functional (no continuation), from the given start.
GroundStateResult solve_ground_state(const EnergyFunctional& f, std::vector<double> start,
                                     const SolverOptions& opts = {}, int level = 0);

/// Scaling-identity targets and residuals from a report and d.
IdentityResiduals verify_identities(const EnergyReport& report, double d, const ProblemParams& params);
IdentityResiduals verify_identities(const GroundStateResult& result, const ProblemParams& params);

/// ‖∇I_h(φ)‖₂ / ‖∇(‖φ‖_q^q / q)‖₂.
double weak_residual(const EnergyFunctional& f, std::span<const double> phi);

nlohmann::json to_json(const ProblemParams& params);
nlohmann::json to_json(const EnergyReport& r);
nlohmann::json to_json(const IdentityResiduals& r);
/// Scalars, residuals, levels and history; φ itself is not included.
nlohmann::json to_json(const GroundStateResult& r);

}  // namespace nsg
