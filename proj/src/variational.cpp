#include "nsg/variational.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "nsg/error.hpp"

namespace nsg {

using json = nlohmann::json;

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(5);
  os << v;
  return os.str();
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// |u|^{r-2} u
inline double signed_pow(double u, double r) {
  if (r == 2.0) return u;
  if (u == 0.0) return 0.0;
  return std::copysign(std::pow(std::abs(u), r - 1.0), u);
}

}  // namespace

double ProblemParams::critical_exponent() const {
  const double Q = this->Q(), ps = p() * s();
  if (Q <= ps) return std::numeric_limits<double>::infinity();
  return Q * p() / (Q - ps);
}

void ProblemParams::validate() const {
  kernel.validate();
  const double Q = this->Q(), ps = p() * s();
  if (!(Q > ps) && !(allow_borderline && Q == ps)) {
    throw InvalidArgument("problem: Q > ps is required (Q = " + fmt(Q) + ", ps = " + fmt(ps) + ")");
  }
  const double crit = critical_exponent();
  if (!(q > p() && q < crit) || !std::isfinite(q)) {
    throw InvalidArgument("q must satisfy p < q < p_s* = " + fmt(crit) + " (q = " + fmt(q) + ")");
  }
  if (q - p() < 1e-3) throw InvalidArgument("q must exceed p by at least 1e-3 (q - p = " + fmt(q - p()) + ")");
  if (crit - q < 1e-3) {
    throw InvalidArgument("q must stay at least 1e-3 below p_s* = " + fmt(crit) + " (q = " + fmt(q) + ")");
  }
}

void SolverOptions::validate() const {
  if (max_iter < 0) throw InvalidArgument("solver: max_iter must be >= 0");
  if (!(tol_rel_R > 0.0)) throw InvalidArgument("solver: tol_rel_R must be positive");
  if (!(tol_grad > 0.0)) throw InvalidArgument("solver: tol_grad must be positive");
  if (!(armijo_c > 0.0 && armijo_c < 1.0)) throw InvalidArgument("solver: armijo_c must lie in (0, 1)");
  if (!(armijo_shrink > 0.0 && armijo_shrink < 1.0)) throw InvalidArgument("solver: armijo_shrink must lie in (0, 1)");
  if (!(init_scale > 0.0)) throw InvalidArgument("solver: init_scale must be positive");
  if (!(init_noise >= 0.0)) throw InvalidArgument("solver: init_noise must be >= 0");
  if (continuation_levels < 0) throw InvalidArgument("solver: continuation_levels must be >= 0");
  if (lbfgs_memory < 0) throw InvalidArgument("solver: lbfgs_memory must be >= 0");
  if (init == InitKind::File && init_file.empty()) throw InvalidArgument("solver: init = file needs init_file");
}

// ---------------------------------------------------------------------------

EnergyFunctional::EnergyFunctional(ProblemParams params, BoxDomain domain, NonlocalOptions opts)
    : params_(std::move(params)) {
  params_.validate();
  op_ = std::make_shared<NonlocalOperator>(std::move(domain), params_.kernel, opts);
}

EnergyFunctional::EnergyFunctional(ProblemParams params, std::shared_ptr<const NonlocalOperator> op)
    : params_(std::move(params)), op_(std::move(op)) {
  params_.validate();
  if (!op_) throw InvalidArgument("energy: null operator");
  const KernelSpec& k = op_->kernel();
  if (!(k.group == params_.kernel.group) || k.s != params_.kernel.s || k.p != params_.kernel.p ||
      k.kernel_constant != params_.kernel.kernel_constant) {
    throw InvalidArgument("energy: operator kernel differs from the problem kernel");
  }
}

EnergyReport EnergyFunctional::energy(std::span<const double> u) const {
  const double p = params_.p(), q = params_.q;
  const double vol = domain().cell_volume();
  EnergyReport r;
  r.seminorm_pp = op_->seminorm(u).total;
  r.lp_pp = lp_norm_pow(u, vol, p);
  r.lq_qq = lp_norm_pow(u, vol, q);
  r.W_pp = r.seminorm_pp + r.lp_pp;
  r.I = r.W_pp / p - r.lq_qq / q;
  r.L = r.W_pp - r.lq_qq;
  if (r.lq_qq > 0.0) {
    r.theta = std::pow(r.W_pp / r.lq_qq, 1.0 / (q - p));
    r.R = (1.0 / p - 1.0 / q) * r.W_pp * std::pow(r.W_pp / r.lq_qq, p / (q - p));
  }
  return r;
}

void EnergyFunctional::energy_gradient(std::span<const double> u, std::span<double> grad) const {
  const double p = params_.p(), q = params_.q;
  const double vol = domain().cell_volume();
  op_->seminorm_with_gradient(u, grad);
  for (size_t i = 0; i < u.size(); ++i) grad[i] = grad[i] / p + vol * (signed_pow(u[i], p) - signed_pow(u[i], q));
}

double EnergyFunctional::nehari_theta(std::span<const double> u) const {
  const EnergyReport r = energy(u);
  if (!r.theta) throw InvalidArgument("nehari_theta: u vanishes on the grid");
  return *r.theta;
}

double EnergyFunctional::rayleigh(std::span<const double> u) const {
  const EnergyReport r = energy(u);
  if (!r.R) throw InvalidArgument("rayleigh: u vanishes on the grid");
  return *r.R;
}

double EnergyFunctional::rayleigh_with_gradient(std::span<const double> u, std::span<double> grad,
                                                EnergyReport* report) const {
  const double p = params_.p(), q = params_.q;
  const double vol = domain().cell_volume();
  EnergyReport r;
  r.seminorm_pp = op_->seminorm_with_gradient(u, grad).total;
  r.lp_pp = lp_norm_pow(u, vol, p);
  r.lq_qq = lp_norm_pow(u, vol, q);
  r.W_pp = r.seminorm_pp + r.lp_pp;
  r.I = r.W_pp / p - r.lq_qq / q;
  r.L = r.W_pp - r.lq_qq;
  if (!(r.lq_qq > 0.0)) throw InvalidArgument("rayleigh: u vanishes on the grid");
  const double ratio = r.W_pp / r.lq_qq;
  r.theta = std::pow(ratio, 1.0 / (q - p));
  const double R = (1.0 / p - 1.0 / q) * r.W_pp * std::pow(ratio, p / (q - p));
  r.R = R;
  // ∇R = R [q/(q-p) ∇W/W - p/(q-p) ∇Lq/Lq]
  const double aw = R * q / ((q - p) * r.W_pp);
  const double al = R * p / ((q - p) * r.lq_qq);
  for (size_t i = 0; i < u.size(); ++i) {
    const double gw = grad[i] + p * vol * signed_pow(u[i], p);
    const double gl = q * vol * signed_pow(u[i], q);
    grad[i] = aw * gw - al * gl;
  }
  if (report) *report = r;
  return R;
}

EnergyReport energy(const GridFunction& u, const ProblemParams& params, const NonlocalOptions& opts) {
  return EnergyFunctional(params, u.domain(), opts).energy(u.values());
}

double nehari_theta(const GridFunction& u, const ProblemParams& params, const NonlocalOptions& opts) {
  return EnergyFunctional(params, u.domain(), opts).nehari_theta(u.values());
}

double rayleigh(const GridFunction& u, const ProblemParams& params, const NonlocalOptions& opts) {
  return EnergyFunctional(params, u.domain(), opts).rayleigh(u.values());
}

std::vector<double> energy_gradient(const GridFunction& u, const ProblemParams& params, const NonlocalOptions& opts) {
  std::vector<double> g(u.size());
  EnergyFunctional(params, u.domain(), opts).energy_gradient(u.values(), g);
  return g;
}

// ---------------------------------------------------------------------------

IdentityResiduals verify_identities(const EnergyReport& report, double d, const ProblemParams& params) {
  const double p = params.p(), q = params.q, s = params.s(), Q = params.Q();
  const double a = p * q * s - Q * (q - p);
  IdentityResiduals r;
  r.target1 = Q * (q - p) / a;
  r.target2 = p * q * s / a;
  if (!(report.lp_pp > 0.0)) throw InvalidArgument("verify_identities: ‖φ‖_p vanishes (solver did not converge)");
  r.ratio1 = report.seminorm_pp / report.lp_pp;
  r.ratio2 = report.lq_qq / report.lp_pp;
  r.r1 = std::abs(r.ratio1 - r.target1) / r.target1;
  r.r2 = std::abs(r.ratio2 - r.target2) / r.target2;
  const double predicted = a / ((q - p) * s) * d;
  r.r3 = std::abs(report.lp_pp - predicted) / std::abs(predicted);
  return r;
}

IdentityResiduals verify_identities(const GroundStateResult& result, const ProblemParams& params) {
  return verify_identities(result.report, result.d, params);
}

double weak_residual(const EnergyFunctional& f, std::span<const double> phi) {
  std::vector<double> g(phi.size());
  f.energy_gradient(phi, g);
  const double q = f.params().q, vol = f.domain().cell_volume();
  double den = 0.0;
  for (double v : phi) {
    const double t = vol * signed_pow(v, q);
    den += t * t;
  }
  if (!(den > 0.0)) throw InvalidArgument("weak_residual: φ vanishes on the grid");
  return norm2(g) / std::sqrt(den);
}

// ---------------------------------------------------------------------------

namespace {

struct Memory {
  std::deque<std::vector<double>> s, y;
  std::deque<double> rho;

  void clear() {
    s.clear();
    y.clear();
    rho.clear();
  }

  // d = -H g by the two-loop recursion.
  std::vector<double> direction(std::span<const double> g) const {
    std::vector<double> d(g.begin(), g.end());
    const size_t m = s.size();
    std::vector<double> alpha(m);
    for (size_t k = m; k-- > 0;) {
      alpha[k] = rho[k] * dot(s[k], d);
      for (size_t i = 0; i < d.size(); ++i) d[i] -= alpha[k] * y[k][i];
    }
    if (m > 0) {
      const double gamma = dot(s[m - 1], y[m - 1]) / dot(y[m - 1], y[m - 1]);
      for (double& v : d) v *= gamma;
    }
    for (size_t k = 0; k < m; ++k) {
      const double beta = rho[k] * dot(y[k], d);
      for (size_t i = 0; i < d.size(); ++i) d[i] += (alpha[k] - beta) * s[k][i];
    }
    for (double& v : d) v = -v;
    return d;
  }
};

double weak_from_rayleigh_gradient(std::span<const double> gR, std::span<const double> u, double theta, double q,
                                   double vol) {
  // ∇I(θu) = ∇R(u)/θ.
  double den = 0.0;
  for (double v : u) {
    const double t = vol * signed_pow(theta * v, q);
    den += t * t;
  }
  return norm2(gR) / theta / std::sqrt(den);
}

}  // namespace

GroundStateResult solve_ground_state(const EnergyFunctional& f, std::vector<double> u, const SolverOptions& opts,
                                     int level) {
  opts.validate();
  const size_t n = f.domain().size();
  if (u.size() != n) throw InvalidArgument("solver: start vector does not match the grid");
  const double q = f.params().q, vol = f.domain().cell_volume();

  std::vector<double> g(n), g_trial(n), u_trial(n);
  EnergyReport rep, rep_trial;
  double R = f.rayleigh_with_gradient(u, g, &rep);
  const double ref_norm = norm2(u);

  GroundStateResult res{.phi = GridFunction::zeros(f.domain())};
  Memory mem;
  int stagnant = 0;
  int it = 0;
  bool converged = false;
  std::string message = "iteration limit reached";
  double wr = weak_from_rayleigh_gradient(g, u, *rep.theta, q, vol);
  for (;; ++it) {
    res.history.push_back({level, it, R, norm2(g), wr});
    if (opts.progress) opts.progress(level, it, R, wr);
    if (wr <= opts.tol_grad) {
      converged = true;
      message = "weak residual below tol_grad";
      break;
    }
    if (stagnant >= 3) {
      converged = true;
      message = "relative change of R below tol_rel_R";
      break;
    }
    if (it >= opts.max_iter) break;

    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      std::vector<double> d = mem.direction(g);
      double slope = dot(g, d);
      if (!(slope < 0.0)) {
        mem.clear();
        d = mem.direction(g);
        slope = dot(g, d);
      }
      double alpha = 1.0;
      if (mem.s.empty()) alpha = 1e-2 * ref_norm / std::max(norm2(g), 1e-300);
      for (int ls = 0; ls < 60; ++ls) {
        for (size_t i = 0; i < n; ++i) u_trial[i] = u[i] + alpha * d[i];
        bool ok = true;
        double Rt = 0.0;
        try {
          Rt = f.rayleigh_with_gradient(u_trial, g_trial, &rep_trial);
        } catch (const InvalidArgument&) {
          ok = false;  // collapsed to zero
        }
        ok = ok && std::isfinite(Rt) && Rt <= R + opts.armijo_c * alpha * slope;
        if (ok) {
          accepted = true;
          if (opts.lbfgs_memory > 0) {
            std::vector<double> sv(n), yv(n);
            for (size_t i = 0; i < n; ++i) {
              sv[i] = u_trial[i] - u[i];
              yv[i] = g_trial[i] - g[i];
            }
            const double sy = dot(sv, yv);
            if (sy > 1e-12 * norm2(sv) * norm2(yv)) {
              mem.s.push_back(std::move(sv));
              mem.y.push_back(std::move(yv));
              mem.rho.push_back(1.0 / sy);
              if (static_cast<int>(mem.s.size()) > opts.lbfgs_memory) {
                mem.s.pop_front();
                mem.y.pop_front();
                mem.rho.pop_front();
              }
            }
          }
          stagnant = (R - Rt) <= opts.tol_rel_R * std::abs(R) ? stagnant + 1 : 0;
          std::swap(u, u_trial);
          std::swap(g, g_trial);
          rep = rep_trial;
          R = Rt;
          break;
        }
        alpha *= opts.armijo_shrink;
      }
      if (!accepted) mem.clear();
    }
    if (!accepted) {
      message = "line search failed";
      break;
    }
    // R is scale invariant; keep the iterate's norm near its start value.
    const double nu = norm2(u);
    if (nu > 2.0 * ref_norm || nu < 0.5 * ref_norm) {
      const double c = ref_norm / nu;
      for (size_t i = 0; i < n; ++i) {
        u[i] *= c;
        g[i] /= c;
      }
      rep.theta = *rep.theta / c;
      mem.clear();
    }
    wr = weak_from_rayleigh_gradient(g, u, *rep.theta, q, vol);
  }

  std::vector<double> phi(n);
  for (size_t i = 0; i < n; ++i) phi[i] = *rep.theta * u[i];
  res.phi = GridFunction(f.domain(), phi);
  res.report = f.energy(phi);
  res.d = res.report.I;
  res.identity_residuals = verify_identities(res.report, res.d, f.params());
  res.weak_residual = weak_residual(f, phi);
  res.converged = converged;
  res.message = message;
  res.iterations = it;
  const auto [mn, mx] = std::minmax_element(phi.begin(), phi.end());
  res.phi_min = *mn;
  res.phi_max = *mx;
  res.levels.push_back({f.domain().points_per_axis(), it, converged, res.d, res.weak_residual, res.identity_residuals});
  return res;
}

GroundStateResult solve_ground_state(const ProblemParams& params, const BoxDomain& domain, const SolverOptions& opts) {
  params.validate();
  opts.validate();
  if (!(domain.group() == params.kernel.group)) throw InvalidArgument("solver: domain and problem groups differ");

  std::optional<GridFunction> from_file;
  if (opts.init == InitKind::File) from_file = load(opts.init_file);

  // Coarsest level: M / 2^levels on every axis, as long as it stays even and >= 8.
  std::vector<BoxDomain> chain{domain};
  for (int l = 0; l < opts.continuation_levels; ++l) {
    const auto& fine = chain.front();
    std::vector<int> pts = fine.points_per_axis();
    bool ok = true;
    for (int& m : pts) {
      if (m % 4 != 0 || m / 2 < 8) ok = false;
      m /= 2;
    }
    if (!ok) break;
    if (from_file && from_file->domain() == fine) break;
    chain.insert(chain.begin(), BoxDomain(fine.group(), fine.half_widths(), pts));
  }

  const GroupSpec& G = domain.group();
  std::vector<double> start;
  if (from_file) {
    const GridFunction& f0 = *from_file;
    if (!(f0.domain().group() == G)) throw InvalidArgument("solver: init file lives on a different group");
    if (f0.domain() == chain.front()) {
      start.assign(f0.values().begin(), f0.values().end());
    } else {
      const GridFunction u0 = sample(chain.front(), [&](std::span<const double> x) { return f0.interpolate(x); });
      start.assign(u0.values().begin(), u0.values().end());
    }
  } else {
    const double a = opts.init_scale;
    const bool bump = opts.init == InitKind::GaugeBump;
    const GridFunction u0 = sample(chain.front(), [&](std::span<const double> x) {
      const double r = qnorm(G, x) / a;
      return bump ? std::exp(-r) : std::exp(-r * r);
    });
    start.assign(u0.values().begin(), u0.values().end());
  }
  if (opts.init_noise > 0.0) {
    std::mt19937_64 rng(opts.rng_seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const double amp = opts.init_noise * std::abs(*std::max_element(start.begin(), start.end(),
                                                                     [](double x, double y) { return std::abs(x) < std::abs(y); }));
    for (double& v : start) v += amp * U(rng);
  }

  GroundStateResult out{.phi = GridFunction::zeros(domain)};
  std::vector<LevelSummary> levels;
  std::vector<HistoryEntry> history;
  for (size_t l = 0; l < chain.size(); ++l) {
    std::shared_ptr<const NonlocalOperator> op;
    if (!opts.cache_dir.empty()) {
      op = std::make_shared<NonlocalOperator>(
          chain[l], params.kernel, exterior_weights_cached(chain[l], params.kernel, opts.cache_dir, opts.nonlocal.exterior),
          opts.nonlocal);
    } else {
      op = std::make_shared<NonlocalOperator>(chain[l], params.kernel, opts.nonlocal);
    }
    const EnergyFunctional f(params, op);
    GroundStateResult r = solve_ground_state(f, start, opts, static_cast<int>(l));
    levels.push_back(r.levels.front());
    history.insert(history.end(), r.history.begin(), r.history.end());
    if (l + 1 < chain.size()) {
      const GridFunction next = refine(r.phi);
      start.assign(next.values().begin(), next.values().end());
    } else {
      out = std::move(r);
    }
  }
  out.levels = std::move(levels);
  out.history = std::move(history);
  int total = 0;
  for (const auto& lv : out.levels) total += lv.iterations;
  out.iterations = total;
  return out;
}

// ---------------------------------------------------------------------------

json to_json(const ProblemParams& params) {
  json j;
  j["group"] = params.kernel.group.name();
  j["dim"] = params.kernel.group.dim();
  j["Q"] = params.Q();
  j["gauge"] = params.kernel.group.gauge_name();
  j["s"] = params.s();
  j["p"] = params.p();
  j["q"] = params.q;
  j["kernel_constant"] = params.kernel.kernel_constant;
  const double crit = params.critical_exponent();
  j["critical_exponent"] = std::isfinite(crit) ? json(crit) : json("inf");
  return j;
}

json to_json(const EnergyReport& r) {
  json j{{"seminorm_pp", r.seminorm_pp}, {"lp_pp", r.lp_pp}, {"lq_qq", r.lq_qq}, {"W_pp", r.W_pp},
         {"I", r.I},                     {"L", r.L}};
  j["theta"] = r.theta ? json(*r.theta) : json(nullptr);
  j["R"] = r.R ? json(*r.R) : json(nullptr);
  return j;
}

json to_json(const IdentityResiduals& r) {
  return json{{"r1", r.r1},         {"r2", r.r2},         {"r3", r.r3},          {"ratio1", r.ratio1},
              {"ratio2", r.ratio2}, {"target1", r.target1}, {"target2", r.target2}};
}

json to_json(const GroundStateResult& r) {
  json j;
  j["d"] = r.d;
  j["converged"] = r.converged;
  j["message"] = r.message;
  j["iterations"] = r.iterations;
  j["weak_residual"] = r.weak_residual;
  j["energy"] = to_json(r.report);
  j["identity_residuals"] = to_json(r.identity_residuals);
  j["phi_min"] = r.phi_min;
  j["phi_max"] = r.phi_max;
  j["domain"] = domain_to_json(r.phi.domain());
  json lv = json::array();
  for (const auto& l : r.levels) {
    lv.push_back({{"points_per_axis", l.points_per_axis},
                  {"iterations", l.iterations},
                  {"converged", l.converged},
                  {"d", l.d},
                  {"weak_residual", l.weak_residual},
                  {"identity_residuals", to_json(l.residuals)}});
  }
  j["levels"] = lv;
  json h = json::array();
  for (const auto& e : r.history) h.push_back({e.level, e.iter, e.R, e.grad_norm, e.weak_residual});
  j["history"] = {{"columns", {"level", "iter", "R", "grad_norm", "weak_residual"}}, {"rows", h}};
  return j;
}

}  // namespace nsg
