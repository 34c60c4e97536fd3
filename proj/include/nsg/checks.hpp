#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "nsg/grid.hpp"
#include "nsg/nonlocal.hpp"
#include "nsg/variational.hpp"

namespace nsg {

/// One named property check: `value` is compared against `threshold`
/// (value <= threshold unless `lower_bound`, then value >= threshold).
struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double threshold = 0.0;
  bool lower_bound = false;
  std::string detail{};
  double seconds = 0.0;
};

CheckResult make_check(std::string name, double value, double threshold, bool lower_bound = false,
                       std::string detail = {});

/// Group law, inverse, dilation and gauge properties on `triples` random
/// triples per group, plus the fitted ball-volume exponent on H^1.
std::vector<CheckResult> check_group_properties(int triples, uint64_t seed);

/// Fitted exponent of |B(0, r)| on H^1 from grid counts (should be Q = 4).
double heisenberg_ball_exponent(int points_per_axis = 96);

/// Max relative difference between the fast seminorm and the plain oracle
/// over `seeds` random functions.
CheckResult check_oracle(const KernelSpec& kernel, const BoxDomain& domain, int seeds, uint64_t seed,
                         const NonlocalOptions& opts = {});

/// Central differences against the exact gradients of the seminorm and of I
/// at `nodes` random nodes. Two rows: seminorm, energy.
std::vector<CheckResult> check_gradients(const ProblemParams& params, const BoxDomain& domain, int nodes,
                                         double tol, uint64_t seed, const NonlocalOptions& opts = {});

/// Nehari projection, I(θu) = R(u), scale invariance of R, same-source
/// cross relation, L^p homogeneity and pairing(u, u) = [u]^p.
std::vector<CheckResult> check_identities(const ProblemParams& params, const BoxDomain& domain, int samples,
                                          double tol, uint64_t seed, const NonlocalOptions& opts = {});

/// Minimum log-Hölder and Hölder-interpolation gaps over random functions
/// and exponent tuples; both must stay above -tol.
std::vector<CheckResult> check_inequalities(const BoxDomain& domain, int functions, int tuples, double tol,
                                            uint64_t seed);

nlohmann::json to_json(const CheckResult& c);

}  // namespace nsg
