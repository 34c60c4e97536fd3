#include <cmath>
#include <filesystem>
#include <random>

#include <nlohmann/json.hpp>

#include "doctest.h"
#include "nsg/error.hpp"
#include "nsg/variational.hpp"
#include "test_util.hpp"

using namespace nsg;
using testutil::rel;

namespace {

ProblemParams line_problem(double s = 0.5, double p = 2.0, double q = 3.0) {
  ProblemParams pp{KernelSpec{GroupSpec::euclidean(1), s, p, 1.0}, q};
  pp.allow_borderline = true;
  return pp;
}

ProblemParams heis_problem() { return ProblemParams{KernelSpec{GroupSpec::heisenberg1(), 0.5, 2.0, 1.0}, 2.4}; }

}  // namespace

TEST_CASE("problem validation") {
  CHECK_NOTHROW(heis_problem().validate());
  ProblemParams edge = line_problem();
  edge.allow_borderline = false;
  CHECK_THROWS_AS(edge.validate(), InvalidArgument);
  CHECK(std::isinf(line_problem().critical_exponent()));
  CHECK(rel(heis_problem().critical_exponent(), 8.0 / 3.0) < 1e-15);
  ProblemParams low = heis_problem();
  low.q = 2.0005;
  CHECK_THROWS_AS(low.validate(), InvalidArgument);
  ProblemParams high = heis_problem();
  high.q = 8.0 / 3.0 - 5e-4;
  CHECK_THROWS_AS(high.validate(), InvalidArgument);
  high.q = 3.0;
  CHECK_THROWS_AS(high.validate(), InvalidArgument);

  SolverOptions o;
  CHECK_NOTHROW(o.validate());
  o.armijo_shrink = 1.0;
  CHECK_THROWS_AS(o.validate(), InvalidArgument);
  o = {};
  o.init = InitKind::File;
  CHECK_THROWS_AS(o.validate(), InvalidArgument);
}

TEST_CASE("energy report arithmetic") {
  const BoxDomain dom(GroupSpec::euclidean(1), {8.0}, {64});
  const ProblemParams pp = line_problem();
  const EnergyFunctional f(pp, dom);

  const EnergyReport z = f.energy(std::vector<double>(dom.size(), 0.0));
  CHECK(z.I == 0.0);
  CHECK(z.L == 0.0);
  CHECK_FALSE(z.theta.has_value());
  CHECK_FALSE(z.R.has_value());
  CHECK_THROWS_AS(f.rayleigh(std::vector<double>(dom.size(), 0.0)), InvalidArgument);

  std::mt19937_64 rng(3);
  const auto u = testutil::random_values(dom.size(), rng);
  const EnergyReport r = f.energy(u);
  CHECK(r.W_pp == r.seminorm_pp + r.lp_pp);
  CHECK(r.L == r.W_pp - r.lq_qq);
  CHECK(r.I == r.W_pp / 2.0 - r.lq_qq / 3.0);

  // On the Nehari manifold I = (1/p - 1/q) W, i.e. W/6 here.
  std::vector<double> v(u);
  for (double& x : v) x *= *r.theta;
  const EnergyReport rn = f.energy(v);
  CHECK(std::abs(rn.L) <= 1e-10 * std::max(rn.W_pp, rn.lq_qq));
  CHECK(rel(rn.I, rn.W_pp / 6.0) < 1e-12);
  CHECK(rel(*rn.theta, 1.0) < 1e-12);
}

TEST_CASE("fibering scalar") {
  const BoxDomain dom(GroupSpec::euclidean(1), {8.0}, {64});
  const ProblemParams pp = line_problem(0.3, 2.0, 4.0);
  const EnergyFunctional f(pp, dom);
  std::mt19937_64 rng(5);
  const auto u = testutil::random_values(dom.size(), rng);
  const EnergyReport r = f.energy(u);
  // θ^{q-p} = W/‖u‖_q^q, so W = 2 ‖u‖_q^q gives θ = √2.
  CHECK(rel(f.nehari_theta(u), std::sqrt(r.W_pp / r.lq_qq)) < 1e-14);
  std::vector<double> w(u);
  const double c = std::sqrt(r.W_pp / (2.0 * r.lq_qq));
  for (double& x : w) x *= c;
  const EnergyReport rw = f.energy(w);
  CHECK(rel(rw.W_pp, 2.0 * rw.lq_qq) < 1e-12);
  CHECK(rel(f.nehari_theta(w), std::sqrt(2.0)) < 1e-12);
}

TEST_CASE("nehari projection, rayleigh identity and scale invariance") {
  struct Case {
    BoxDomain dom;
    ProblemParams pp;
  };
  const Case cases[] = {
      {BoxDomain(GroupSpec::euclidean(1), {8.0}, {48}), line_problem()},
      {BoxDomain(GroupSpec::euclidean(1), {8.0}, {48}), line_problem(0.5, 1.5, 3.0)},
      {BoxDomain(GroupSpec::euclidean(2), {3.0, 3.0}, {10, 10}), ProblemParams{KernelSpec{GroupSpec::euclidean(2), 0.4, 3.0, 1.0}, 4.0}},
      {BoxDomain(GroupSpec::heisenberg1(), {2.0, 2.0, 4.0}, {8, 8, 8}), heis_problem()},
  };
  std::mt19937_64 rng(11);
  for (const auto& cs : cases) {
    const EnergyFunctional f(cs.pp, cs.dom);
    for (int t = 0; t < 50; ++t) {
      const auto u = testutil::random_values(cs.dom.size(), rng);
      const double theta = f.nehari_theta(u);
      std::vector<double> v(u);
      for (double& x : v) x *= theta;
      const EnergyReport r = f.energy(v);
      CHECK(std::abs(r.L) <= 1e-10 * std::max(r.W_pp, r.lq_qq));
      const double R = f.rayleigh(u);
      CHECK(rel(r.I, R) < 1e-12);
      std::vector<double> w(u);
      for (double& x : w) x *= 7.0;
      CHECK(rel(f.rayleigh(w), R) < 1e-12);
    }
  }
}

TEST_CASE("energy gradient") {
  SUBCASE("zero function, p and q above 2") {
    const BoxDomain dom(GroupSpec::euclidean(1), {8.0}, {32});
    const EnergyFunctional f(line_problem(0.2, 3.0, 4.0), dom);
    std::vector<double> g(dom.size(), 1.0);
    f.energy_gradient(std::vector<double>(dom.size(), 0.0), g);
    for (double x : g) CHECK(x == 0.0);
  }
  struct Case {
    BoxDomain dom;
    ProblemParams pp;
    double tol;
  };
  const Case cases[] = {
      {BoxDomain(GroupSpec::euclidean(1), {8.0}, {48}), line_problem(), 1e-5},
      {BoxDomain(GroupSpec::euclidean(1), {8.0}, {48}), line_problem(0.5, 1.5, 3.0), 1e-4},
      {BoxDomain(GroupSpec::euclidean(1), {8.0}, {48}), line_problem(0.2, 3.0, 4.0), 1e-4},
      {BoxDomain(GroupSpec::heisenberg1(), {2.0, 2.0, 4.0}, {8, 8, 8}), heis_problem(), 1e-5},
  };
  std::mt19937_64 rng(17);
  for (const auto& cs : cases) {
    const EnergyFunctional f(cs.pp, cs.dom);
    const auto u = testutil::random_values(cs.dom.size(), rng, 0.2, 1.0);
    std::vector<double> g(u.size());
    f.energy_gradient(u, g);

    // Euler identity: Σ g_i u_i = p·(W/p) - q·(‖u‖_q^q/q) = 𝓛(u).
    double eu = 0.0;
    for (size_t i = 0; i < u.size(); ++i) eu += g[i] * u[i];
    CHECK(rel(eu, f.energy(u).L) < 1e-12);

    std::uniform_int_distribution<size_t> pick(0, u.size() - 1);
    for (int k = 0; k < 20; ++k) {
      const size_t i = pick(rng);
      const double h = 1e-5 * std::max(1.0, std::abs(u[i]));
      std::vector<double> a(u), b(u);
      a[i] += h;
      b[i] -= h;
      const double fd = (f.energy(a).I - f.energy(b).I) / (2.0 * h);
      CHECK(std::abs(fd - g[i]) <= cs.tol * std::max(std::abs(g[i]), 1e-3 * cs.dom.cell_volume()));
    }
  }
}

TEST_CASE("rayleigh gradient") {
  const BoxDomain dom(GroupSpec::euclidean(1), {8.0}, {48});
  const EnergyFunctional f(line_problem(), dom);
  std::mt19937_64 rng(23);
  const auto u = testutil::random_values(dom.size(), rng, 0.2, 1.0);
  std::vector<double> g(u.size());
  EnergyReport rep;
  const double R = f.rayleigh_with_gradient(u, g, &rep);
  CHECK(rel(R, f.rayleigh(u)) < 1e-14);
  CHECK(rel(*rep.R, R) < 1e-14);
  // Degree-zero homogeneity: Σ g_i u_i = 0.
  double eu = 0.0, gn = 0.0, un = 0.0;
  for (size_t i = 0; i < u.size(); ++i) {
    eu += g[i] * u[i];
    gn += g[i] * g[i];
    un += u[i] * u[i];
  }
  CHECK(std::abs(eu) <= 1e-10 * std::sqrt(gn * un));
  for (size_t i = 0; i < u.size(); i += 7) {
    const double h = 1e-5;
    std::vector<double> a(u), b(u);
    a[i] += h;
    b[i] -= h;
    const double fd = (f.rayleigh(a) - f.rayleigh(b)) / (2.0 * h);
    CHECK(std::abs(fd - g[i]) <= 1e-5 * std::max(std::abs(g[i]), 1e-6 * R));
  }
}

TEST_CASE("ground state on a small line problem") {
  const BoxDomain dom(GroupSpec::euclidean(1), {20.0}, {256});
  const ProblemParams pp = line_problem();
  SolverOptions o;
  o.continuation_levels = 2;
  o.tol_grad = 1e-7;
  o.tol_rel_R = 1e-15;  // only the weak residual can end the iteration
  const GroundStateResult r = solve_ground_state(pp, dom, o);
  REQUIRE(r.converged);
  CHECK(r.message == "weak residual below tol_grad");
  CHECK(r.weak_residual <= o.tol_grad);
  CHECK(r.levels.size() == 3);
  CHECK(r.levels.front().points_per_axis == std::vector<int>{64});

  // φ lies on the discrete Nehari manifold and d = I(φ) = R.
  CHECK(std::abs(r.report.L) <= 1e-10 * std::max(r.report.W_pp, r.report.lq_qq));
  CHECK(rel(r.d, r.report.I) < 1e-12);
  CHECK(rel(r.d, *r.report.R) < 1e-12);
  CHECK(rel(r.d, (0.5 - 1.0 / 3.0) * r.report.W_pp) < 1e-10);

  // Descent is monotone within each level.
  for (size_t k = 1; k < r.history.size(); ++k)
    if (r.history[k].level == r.history[k - 1].level) CHECK(r.history[k].R <= r.history[k - 1].R);

  // A converged φ satisfies the identities to within the box truncation error.
  const IdentityResiduals id = verify_identities(r, pp);
  CHECK(rel(id.target1, 0.5) < 1e-15);
  CHECK(rel(id.target2, 1.5) < 1e-15);
  CHECK(std::abs(id.ratio2 - id.ratio1 - 1.0) < 1e-9);
  CHECK(id.r1 < 0.3);

  // Restarting from the saved φ is a fixed point.
  const auto dir = std::filesystem::temp_directory_path() / "nsg_restart_test";
  std::filesystem::create_directories(dir);
  save(r.phi, dir / "phi.nsgf");
  SolverOptions o2 = o;
  o2.init = InitKind::File;
  o2.init_file = dir / "phi.nsgf";
  const GroundStateResult r2 = solve_ground_state(pp, dom, o2);
  CHECK(r2.converged);
  CHECK(r2.iterations <= 5);
  CHECK(rel(r2.d, r.d) < 1e-8);
  std::filesystem::remove_all(dir);

  // Same options, same answer.
  const GroundStateResult r3 = solve_ground_state(pp, dom, o);
  CHECK(r3.d == r.d);
  CHECK(r3.iterations == r.iterations);

  const auto j = to_json(r);
  CHECK(j.contains("d"));
  CHECK(j.contains("history"));
}

TEST_CASE("identity targets") {
  EnergyReport rep;
  rep.seminorm_pp = 2.0;
  rep.lp_pp = 1.0;
  rep.lq_qq = 3.0;
  const IdentityResiduals id = verify_identities(rep, 0.25, heis_problem());
  CHECK(rel(id.target1, 2.0) < 1e-14);
  CHECK(rel(id.target2, 3.0) < 1e-14);
  CHECK(id.r1 < 1e-14);
  CHECK(id.r2 < 1e-14);
  // ‖φ‖_p^p = (pqs - Q(q-p))/((q-p)s) d = 4 d.
  CHECK(id.r3 < 1e-14);
  rep.lp_pp = 0.0;
  CHECK_THROWS_AS(verify_identities(rep, 1.0, heis_problem()), InvalidArgument);
}
