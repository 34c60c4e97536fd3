#include "nsg/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nsg/constants.hpp"

namespace nsg {

namespace {

double rel(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * std::ldexp(static_cast<double>(rng() >> 11), -53);
}

std::vector<double> random_vector(size_t n, std::mt19937_64& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform(rng, -1.0, 1.0);
  return v;
}

GroupPoint random_point(const GroupSpec& g, std::mt19937_64& rng) {
  GroupPoint a(static_cast<size_t>(g.dim()));
  for (double& x : a) x = uniform(rng, -3.0, 3.0);
  return a;
}

double max_abs_diff(const GroupPoint& a, const GroupPoint& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]) / std::max(1.0, std::abs(b[i])));
  return m;
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

}  // namespace

CheckResult make_check(std::string name, double value, double threshold, bool lower_bound, std::string detail) {
  CheckResult c;
  c.name = std::move(name);
  c.value = value;
  c.threshold = threshold;
  c.lower_bound = lower_bound;
  c.passed = std::isfinite(value) && (lower_bound ? value >= threshold : value <= threshold);
  c.detail = std::move(detail);
  return c;
}

double heisenberg_ball_exponent(int m) {
  const GroupSpec h = GroupSpec::heisenberg1();
  std::vector<double> lr, lv;
  GroupPoint z(3);
  for (double r : {0.5, 1.0, 2.0, 4.0}) {
    // Box scaled with the dilations, just enclosing the ball.
    const double lx = 1.05 * r, lt = 0.26 * r * r;
    const double hx = 2 * lx / m, ht = 2 * lt / m;
    long count = 0;
    for (int i = 0; i < m; ++i) {
      z[0] = -lx + (i + 0.5) * hx;
      for (int j = 0; j < m; ++j) {
        z[1] = -lx + (j + 0.5) * hx;
        for (int k = 0; k < m; ++k) {
          z[2] = -lt + (k + 0.5) * ht;
          if (qnorm(h, z) < r) ++count;
        }
      }
    }
    lr.push_back(std::log(r));
    lv.push_back(std::log(count * hx * hx * ht));
  }
  const double n = static_cast<double>(lr.size());
  double mr = 0, mv = 0;
  for (size_t i = 0; i < lr.size(); ++i) mr += lr[i] / n, mv += lv[i] / n;
  double num = 0, den = 0;
  for (size_t i = 0; i < lr.size(); ++i) {
    num += (lr[i] - mr) * (lv[i] - mv);
    den += (lr[i] - mr) * (lr[i] - mr);
  }
  return num / den;
}

std::vector<CheckResult> check_group_properties(int triples, uint64_t seed) {
  std::vector<CheckResult> out;
  std::mt19937_64 rng(seed);
  for (const GroupSpec& g : {GroupSpec::heisenberg1(), GroupSpec::euclidean(1), GroupSpec::euclidean(3)}) {
    Timer t;
    double assoc = 0, inv = 0, ident = 0, hom = 0, sym = 0, left = 0, dil = 0, distdef = 0;
    const GroupPoint e = identity(g);
    for (int k = 0; k < triples; ++k) {
      const GroupPoint a = random_point(g, rng), b = random_point(g, rng), c = random_point(g, rng);
      assoc = std::max(assoc, max_abs_diff(compose(g, compose(g, a, b), c), compose(g, a, compose(g, b, c))));
      inv = std::max(inv, max_abs_diff(compose(g, a, inverse(g, a)), e));
      ident = std::max(ident, std::max(max_abs_diff(compose(g, a, e), a), max_abs_diff(compose(g, e, a), a)));
      const double na = qnorm(g, a);
      const double lam = uniform(rng, 0.1, 10.0);
      hom = std::max(hom, rel(qnorm(g, dilate(g, lam, a)), lam * na));
      sym = std::max(sym, rel(qnorm(g, inverse(g, a)), na));
      // Round-off in c∘a - c∘b scales with the operands, not with dist(a, b).
      const double scale = std::max(dist(g, a, b), qnorm(g, a) + qnorm(g, b) + qnorm(g, c));
      left = std::max(left, std::abs(dist(g, compose(g, c, a), compose(g, c, b)) - dist(g, a, b)) / scale);
      dil = std::max(dil, max_abs_diff(dilate(g, lam, compose(g, a, b)), compose(g, dilate(g, lam, a), dilate(g, lam, b))));
      distdef = std::max(distdef, rel(dist(g, a, b), qnorm(g, compose(g, inverse(g, b), a))));
    }
    const std::string p = g.name() + (g.kind() == GroupKind::Euclidean ? std::to_string(g.dim()) : "") + ": ";
    out.push_back(make_check(p + "associativity", assoc, 1e-13));
    out.push_back(make_check(p + "inverse", inv, 1e-13));
    out.push_back(make_check(p + "identity", ident, 0.0));
    out.push_back(make_check(p + "gauge homogeneity", hom, 1e-12));
    out.push_back(make_check(p + "gauge symmetry", sym, 1e-14));
    out.push_back(make_check(p + "left invariance", left, 1e-12));
    out.push_back(make_check(p + "dilations are automorphisms", dil, 1e-12));
    out.push_back(make_check(p + "dist = |b^-1 a|", distdef, 1e-14));
    for (auto it = out.end() - 8; it != out.end(); ++it) it->seconds = t.seconds() / 8;
  }
  Timer t;
  const double slope = heisenberg_ball_exponent();
  auto c = make_check("heisenberg1: ball volume exponent |fit - 4|/4", std::abs(slope - 4.0) / 4.0, 0.01, false,
                      "fitted exponent " + std::to_string(slope));
  c.seconds = t.seconds();
  out.push_back(c);
  return out;
}

CheckResult check_oracle(const KernelSpec& kernel, const BoxDomain& domain, int seeds, uint64_t seed,
                         const NonlocalOptions& opts) {
  Timer t;
  const NonlocalOperator op(domain, kernel, opts);
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int k = 0; k < seeds; ++k) {
    const GridFunction u(domain, random_vector(domain.size(), rng));
    worst = std::max(worst, rel(op.seminorm(u.values()).total, oracle_gagliardo_pp(u, kernel, op.exterior(), opts)));
  }
  std::ostringstream name;
  name << "oracle equivalence, " << domain.group().name() << " " << domain.size() << " nodes, " << seeds << " seeds";
  auto c = make_check(name.str(), worst, 1e-12);
  c.seconds = t.seconds();
  return c;
}

std::vector<CheckResult> check_gradients(const ProblemParams& params, const BoxDomain& domain, int nodes,
                                         double tol, uint64_t seed, const NonlocalOptions& opts) {
  Timer t;
  auto op = std::make_shared<NonlocalOperator>(domain, params.kernel, opts);
  const EnergyFunctional f(params, op);
  std::mt19937_64 rng(seed);
  std::vector<double> u(domain.size());
  for (double& x : u) x = uniform(rng, 0.2, 1.0) * (rng() % 2 ? 1.0 : -1.0);
  std::vector<double> gs(u.size()), gi(u.size());
  op->seminorm_with_gradient(u, gs);
  f.energy_gradient(u, gi);
  double ws = 0.0, wi = 0.0;
  const double eps = 1e-5;
  for (int k = 0; k < nodes; ++k) {
    const size_t i = static_cast<size_t>(rng() % u.size());
    const double u0 = u[i];
    u[i] = u0 + eps;
    const double sp = op->seminorm(u).total, ip = f.energy(u).I;
    u[i] = u0 - eps;
    const double sm = op->seminorm(u).total, im = f.energy(u).I;
    u[i] = u0;
    ws = std::max(ws, rel((sp - sm) / (2 * eps), gs[i]));
    // I's gradient can cancel between its terms; measure against their sizes.
    const double vol = domain.cell_volume(), a = std::abs(u0);
    const double size = std::abs(gs[i]) / params.p() + vol * std::pow(a, params.p() - 1) + vol * std::pow(a, params.q - 1);
    wi = std::max(wi, std::abs((ip - im) / (2 * eps) - gi[i]) / size);
  }
  std::ostringstream tag;
  tag << domain.group().name() << " p=" << params.p() << ", " << nodes << " nodes";
  std::vector<CheckResult> out{make_check("seminorm gradient vs central differences, " + tag.str(), ws, tol),
                               make_check("energy gradient vs central differences, " + tag.str(), wi, tol)};
  for (auto& c : out) c.seconds = t.seconds() / 2;
  return out;
}

std::vector<CheckResult> check_identities(const ProblemParams& params, const BoxDomain& domain, int samples,
                                          double tol, uint64_t seed, const NonlocalOptions& opts) {
  Timer t;
  auto op = std::make_shared<NonlocalOperator>(domain, params.kernel, opts);
  const EnergyFunctional f(params, op);
  std::mt19937_64 rng(seed);
  double neh = 0, ray = 0, scale = 0, cross = 0, lp = 0, pair = 0;
  const double p = params.p();
  for (int k = 0; k < samples; ++k) {
    const auto u = random_vector(domain.size(), rng);
    const double theta = f.nehari_theta(u);
    std::vector<double> v(u);
    for (double& x : v) x *= theta;
    const EnergyReport r = f.energy(v);
    neh = std::max(neh, std::abs(r.L) / std::max(r.W_pp, r.lq_qq));
    const double R = f.rayleigh(u);
    ray = std::max(ray, rel(r.I, R));
    const double c = uniform(rng, 0.1, 10.0);
    std::vector<double> w(u);
    for (double& x : w) x *= c;
    scale = std::max(scale, rel(f.rayleigh(w), R));
    const double vol = domain.cell_volume();
    lp = std::max(lp, rel(lp_norm_pow(w, vol, p), std::pow(c, p) * lp_norm_pow(u, vol, p)));
    pair = std::max(pair, rel(op->pairing(u, u), op->seminorm(u).total));
    for (ConstantSource src : {ConstantSource::LpNorm, ConstantSource::Energy}) {
      const double val = src == ConstantSource::LpNorm ? r.lp_pp : r.I;
      cross = std::max(cross, cross_check(c_gn_inverse(params, src, val), c_s_inverse(params, src, val), params));
    }
  }
  const std::string tag = ", " + domain.group().name() + ", " + std::to_string(samples) + " functions";
  std::vector<CheckResult> out{
      make_check("Nehari projection |L(theta u)|/scale" + tag, neh, tol),
      make_check("I(theta u) = rayleigh(u)" + tag, ray, tol),
      make_check("rayleigh(c u) = rayleigh(u)" + tag, scale, tol),
      make_check("same-source cross relation" + tag, cross, tol),
      make_check("L^p homogeneity" + tag, lp, tol),
      make_check("pairing(u, u) = [u]^p" + tag, pair, tol),
  };
  for (auto& c : out) c.seconds = t.seconds() / static_cast<double>(out.size());
  return out;
}

std::vector<CheckResult> check_inequalities(const BoxDomain& domain, int functions, int tuples, double tol,
                                            uint64_t seed) {
  Timer t;
  std::mt19937_64 rng(seed);
  double log_gap = std::numeric_limits<double>::infinity(), interp_gap = log_gap;
  for (int k = 0; k < functions; ++k) {
    const GridFunction u(domain, random_vector(domain.size(), rng));
    for (int j = 0; j < tuples; ++j) {
      double e[3] = {uniform(rng, 1.0, 10.0), uniform(rng, 1.0, 10.0), uniform(rng, 1.0, 10.0)};
      std::sort(e, e + 3);
      if (!(e[0] < e[1] && e[1] < e[2])) continue;
      log_gap = std::min(log_gap, log_holder_gap(u, e[0], e[2]));
      interp_gap = std::min(interp_gap, holder_interpolation_gap(u, e[0], e[1], e[2]));
    }
  }
  const std::string tag = ", " + std::to_string(functions) + " functions x " + std::to_string(tuples) + " tuples";
  std::vector<CheckResult> out{make_check("log-Hoelder gap (min)" + tag, log_gap, -tol, true),
                               make_check("Hoelder interpolation gap (min)" + tag, interp_gap, -tol, true)};
  for (auto& c : out) c.seconds = t.seconds() / 2;
  return out;
}

nlohmann::json to_json(const CheckResult& c) {
  return {{"name", c.name},           {"passed", c.passed}, {"value", c.value}, {"threshold", c.threshold},
          {"lower_bound", c.lower_bound}, {"detail", c.detail}};
}

}  // namespace nsg
