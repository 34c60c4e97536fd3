#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nsg/grid.hpp"
#include "nsg/variational.hpp"

namespace nsg {

/// Which ground-state quantity feeds a constant formula: ‖φ‖_p^p (route A)
/// or d = I(φ) (route B), related by ‖φ‖_p^p = (pqs - Q(q-p))/((q-p)s) · d.
enum class ConstantSource { LpNorm, Energy };

/// C_GN^{-1} = (a/(pqs)) (Q(q-p)/a)^{Q(q-p)/(sp²)} ‖φ‖_p^{q-p}, a = pqs - Q(q-p).
double c_gn_inverse(const ProblemParams& params, ConstantSource source, double value);
/// C_S^{-1} = (spq/a · ‖φ‖_p^p)^{(q-p)/q} = (pq/(q-p) · d)^{(q-p)/q}.
double c_s_inverse(const ProblemParams& params, ConstantSource source, double value);
/// C_{S,G,p} = (s/(Q d))^{sp/Q}.
double c_s_log(const ProblemParams& params, double d);
/// Relative residual of C_GN^{-p/q} = (a/(pqs)) (Q(q-p)/a)^{Q(q-p)/(pqs)} C_S^{-1}.
double cross_check(double c_gn_inv, double c_s_inv, const ProblemParams& params);

/// ([u]^p)^{Q(q-p)/(sp²)} (‖u‖_p^p)^{(spq-Q(q-p))/(sp²)} / ‖u‖_q^q with the
/// seminorm alone (kernel constant included). Throws for u ≡ 0.
double j_quotient(const EnergyFunctional& f, std::span<const double> u);
/// ([u]^p + ‖u‖_p^p) / (‖u‖_q^q)^{p/q}. Throws for u ≡ 0.
double sobolev_quotient(const EnergyFunctional& f, std::span<const double> u);

/// q/(q-p) log(‖u‖_q^p / ‖u‖_p^p) minus the p-entropy of u. Needs 1 <= p < q.
double log_holder_gap(const GridFunction& u, double p, double q);
/// log of ‖u‖_p^a ‖u‖_q^{1-a} / ‖u‖_r with 1/r = a/p + (1-a)/q. Needs p < r < q.
double holder_interpolation_gap(const GridFunction& u, double p, double r, double q);

/// Prefactor of the inhomogeneous log-Sobolev right-hand side: Q/s as the
/// inequality is usually stated, or Q/(sp) as obtained by letting q -> p_s*
/// in the log-Hölder/Sobolev chain. They agree only for p = 1.
enum class LogSobolevPrefactor { QOverS, QOverSP };

/// (Q/s) log(C_{S,G,p} ([u]^p + ‖u‖_p^p)/‖u‖_p^p) minus entropy.
double log_sobolev_inhom_gap(const EnergyFunctional& f, std::span<const double> u, double d,
                             LogSobolevPrefactor prefactor = LogSobolevPrefactor::QOverS);
/// (Q/s) log(C_GN^{ps/(Q(q-p))} [u]/‖u‖_p) minus entropy, C_GN from d.
double log_sobolev_hom_gap(const EnergyFunctional& f, std::span<const double> u, double d);

struct TrialOptions {
  int trials = 50;
  uint64_t seed = 7;
  /// Gaussian bumps per trial, drawn uniformly in [1, max_bumps].
  int max_bumps = 3;
  /// Bump gauge widths as fractions of the box's gauge radius.
  double min_width = 0.05;
  double max_width = 0.3;
  /// Bump centers lie in the box scaled by this factor.
  double center_fraction = 0.3;
};

struct TrialResult {
  int id = 0;
  int bumps = 0;
  double J = 0.0;
  double sobolev = 0.0;
  double inhom_gap = 0.0;
  double hom_gap = 0.0;
};

/// Random positive sums of gauge-Gaussian bumps on the functional's grid.
/// Optionally reports the number of bumps in each trial.
std::vector<GridFunction> random_bumps(const BoxDomain& domain, const TrialOptions& opts,
                                       std::vector<int>* counts = nullptr);
std::vector<TrialResult> trial_sweep(const EnergyFunctional& f, double d, const TrialOptions& opts = {});

struct ConstantsReport {
  ProblemParams params;
  std::string group{};
  std::vector<int> points_per_axis{};
  std::vector<double> half_widths{};
  double d = 0.0;
  double phi_lp_pp = 0.0;
  double c_gn_inv_routeA = 0.0;
  double c_gn_inv_routeB = 0.0;
  double c_s_inv_routeA = 0.0;
  double c_s_inv_routeB = 0.0;
  double c_s_log = 0.0;
  double cross_residual = 0.0;        // both constants from route A
  double cross_residual_mixed = 0.0;  // C_GN route A against C_S route B
  double route_gap_gn = 0.0;
  double route_gap_s = 0.0;
  double r3 = 0.0;
  double J_phi = 0.0;
  double sobolev_phi = 0.0;
  double inhom_gap_phi = 0.0;
  double inhom_gap_phi_qoversp = 0.0;
  double hom_gap_phi = 0.0;
  double trial_min_J = 0.0;
  double trial_min_S = 0.0;
  double trial_min_inhom_gap = 0.0;
  double trial_min_hom_gap = 0.0;
  std::vector<TrialResult> trials{};
};

/// Constants by both routes, quotients and gaps at φ, and a trial sweep.
ConstantsReport compute_constants(const EnergyFunctional& f, const GridFunction& phi, double d,
                                  const TrialOptions& opts = {});

nlohmann::json to_json(const ConstantsReport& r);
/// One row per trial: trial,bumps,J,sobolev,inhom_gap,hom_gap.
void write_trials_csv(const std::vector<TrialResult>& trials, const std::filesystem::path& path);

}  // namespace nsg
