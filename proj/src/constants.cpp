#include "nsg/constants.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "nsg/error.hpp"

namespace nsg {

using json = nlohmann::json;

namespace {

struct Exponents {
  double p, q, s, Q, a;
};

Exponents exps(const ProblemParams& pp) {
  pp.validate();
  return {pp.p(), pp.q, pp.s(), static_cast<double>(pp.Q()), pp.p() * pp.q * pp.s() - pp.Q() * (pp.q - pp.p())};
}

// ‖φ‖_p^p from either source.
double lp_from(const Exponents& e, ConstantSource src, double value) {
  if (!(value > 0.0)) throw InvalidArgument("constants: the source value must be positive");
  return src == ConstantSource::LpNorm ? value : e.a / ((e.q - e.p) * e.s) * value;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * std::ldexp(static_cast<double>(rng() >> 11), -53);
}

double entropy(const EnergyFunctional& f, std::span<const double> u) {
  return entropy_density_integral(GridFunction(f.domain(), std::vector<double>(u.begin(), u.end())), f.params().p());
}

double json_min(const std::vector<TrialResult>& t, double TrialResult::*m) {
  double v = std::numeric_limits<double>::infinity();
  for (const auto& r : t) v = std::min(v, r.*m);
  return v;
}

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

double c_gn_inverse(const ProblemParams& params, ConstantSource source, double value) {
  const Exponents e = exps(params);
  const double n = lp_from(e, source, value);
  const double b = e.Q * (e.q - e.p);
  return e.a / (e.p * e.q * e.s) * std::pow(b / e.a, b / (e.s * e.p * e.p)) * std::pow(n, (e.q - e.p) / e.p);
}

double c_s_inverse(const ProblemParams& params, ConstantSource source, double value) {
  const Exponents e = exps(params);
  if (source == ConstantSource::Energy) {
    if (!(value > 0.0)) throw InvalidArgument("constants: d must be positive");
    return std::pow(e.p * e.q / (e.q - e.p) * value, (e.q - e.p) / e.q);
  }
  const double n = lp_from(e, source, value);
  return std::pow(e.s * e.p * e.q / e.a * n, (e.q - e.p) / e.q);
}

double c_s_log(const ProblemParams& params, double d) {
  if (!(d > 0.0)) throw InvalidArgument("constants: d must be positive");
  const Exponents e = exps(params);
  return std::pow(e.s / (e.Q * d), e.s * e.p / e.Q);
}

double cross_check(double c_gn_inv, double c_s_inv, const ProblemParams& params) {
  const Exponents e = exps(params);
  const double b = e.Q * (e.q - e.p);
  const double lhs = std::pow(c_gn_inv, e.p / e.q);
  const double rhs = e.a / (e.p * e.q * e.s) * std::pow(b / e.a, b / (e.p * e.q * e.s)) * c_s_inv;
  return std::abs(lhs - rhs) / std::abs(rhs);
}

double j_quotient(const EnergyFunctional& f, std::span<const double> u) {
  const Exponents e = exps(f.params());
  const EnergyReport r = f.energy(u);
  if (!(r.lq_qq > 0.0)) throw InvalidArgument("j_quotient: u vanishes on the grid");
  const double sp2 = e.s * e.p * e.p;
  return std::pow(r.seminorm_pp, e.Q * (e.q - e.p) / sp2) * std::pow(r.lp_pp, e.a / sp2) / r.lq_qq;
}

double sobolev_quotient(const EnergyFunctional& f, std::span<const double> u) {
  const EnergyReport r = f.energy(u);
  if (!(r.lq_qq > 0.0)) throw InvalidArgument("sobolev_quotient: u vanishes on the grid");
  return r.W_pp / std::pow(r.lq_qq, f.params().p() / f.params().q);
}

double log_holder_gap(const GridFunction& u, double p, double q) {
  if (!(p >= 1.0 && q > p)) throw InvalidArgument("log_holder_gap: needs 1 <= p < q");
  const double np = lp_norm_pow(u, p);
  if (np == 0.0) throw InvalidArgument("log_holder_gap: u is identically zero");
  // log(‖u‖_q^p) = (p/q) log ‖u‖_q^q.
  const double rhs = q / (q - p) * ((p / q) * std::log(lp_norm_pow(u, q)) - std::log(np));
  return rhs - entropy_density_integral(u, p);
}

double holder_interpolation_gap(const GridFunction& u, double p, double r, double q) {
  if (!(p >= 1.0 && p < r && r < q)) throw InvalidArgument("holder_interpolation_gap: needs 1 <= p < r < q");
  const double a = (1.0 / r - 1.0 / q) / (1.0 / p - 1.0 / q);
  const double lp = std::log(lp_norm_pow(u, p)) / p;
  const double lr = std::log(lp_norm_pow(u, r)) / r;
  const double lq = std::log(lp_norm_pow(u, q)) / q;
  if (!std::isfinite(lp)) throw InvalidArgument("holder_interpolation_gap: u is identically zero");
  return a * lp + (1.0 - a) * lq - lr;
}

double log_sobolev_inhom_gap(const EnergyFunctional& f, std::span<const double> u, double d,
                             LogSobolevPrefactor prefactor) {
  const Exponents e = exps(f.params());
  const double c = c_s_log(f.params(), d);
  const EnergyReport r = f.energy(u);
  if (!(r.lp_pp > 0.0)) throw InvalidArgument("log_sobolev_inhom_gap: u vanishes on the grid");
  const double k = prefactor == LogSobolevPrefactor::QOverS ? e.Q / e.s : e.Q / (e.s * e.p);
  return k * std::log(c * r.W_pp / r.lp_pp) - entropy(f, u);
}

double log_sobolev_hom_gap(const EnergyFunctional& f, std::span<const double> u, double d) {
  const Exponents e = exps(f.params());
  const double c_gn = 1.0 / c_gn_inverse(f.params(), ConstantSource::Energy, d);
  const EnergyReport r = f.energy(u);
  if (!(r.lp_pp > 0.0)) throw InvalidArgument("log_sobolev_hom_gap: u vanishes on the grid");
  const double arg = e.p * e.s / (e.Q * (e.q - e.p)) * std::log(c_gn) + std::log(r.seminorm_pp / r.lp_pp) / e.p;
  return e.Q / e.s * arg - entropy(f, u);
}

std::vector<GridFunction> random_bumps(const BoxDomain& domain, const TrialOptions& opts, std::vector<int>* counts) {
  if (opts.trials < 0 || opts.max_bumps < 1) throw InvalidArgument("trials: counts must be non-negative");
  if (!(opts.min_width > 0.0 && opts.max_width >= opts.min_width))
    throw InvalidArgument("trials: need 0 < min_width <= max_width");
  const GroupSpec& g = domain.group();
  const auto& L = domain.half_widths();
  const double radius = qnorm(g, L);
  std::mt19937_64 rng(opts.seed);
  std::vector<GridFunction> out;
  out.reserve(static_cast<size_t>(opts.trials));
  if (counts) counts->clear();
  for (int t = 0; t < opts.trials; ++t) {
    const int nb = 1 + static_cast<int>(rng() % static_cast<uint64_t>(opts.max_bumps));
    if (counts) counts->push_back(nb);
    std::vector<GroupPoint> centers;
    std::vector<double> widths, amps;
    for (int b = 0; b < nb; ++b) {
      GroupPoint c(L.size());
      for (size_t a = 0; a < L.size(); ++a) c[a] = uniform(rng, -1.0, 1.0) * opts.center_fraction * L[a];
      centers.push_back(inverse(g, c));
      widths.push_back(uniform(rng, opts.min_width, opts.max_width) * radius);
      amps.push_back(uniform(rng, 0.5, 1.5));
    }
    out.push_back(sample(domain, [&](std::span<const double> x) {
      double v = 0.0;
      for (size_t b = 0; b < centers.size(); ++b) {
        const double r = qnorm(g, compose(g, centers[b], x)) / widths[b];
        v += amps[b] * std::exp(-r * r);
      }
      return v;
    }));
  }
  return out;
}

std::vector<TrialResult> trial_sweep(const EnergyFunctional& f, double d, const TrialOptions& opts) {
  std::vector<int> counts;
  const auto bumps = random_bumps(f.domain(), opts, &counts);
  std::vector<TrialResult> out;
  for (size_t t = 0; t < bumps.size(); ++t) {
    const auto u = bumps[t].values();
    TrialResult r;
    r.id = static_cast<int>(t);
    r.bumps = counts[t];
    r.J = j_quotient(f, u);
    r.sobolev = sobolev_quotient(f, u);
    r.inhom_gap = log_sobolev_inhom_gap(f, u, d);
    r.hom_gap = log_sobolev_hom_gap(f, u, d);
    out.push_back(r);
  }
  return out;
}

ConstantsReport compute_constants(const EnergyFunctional& f, const GridFunction& phi, double d,
                                  const TrialOptions& opts) {
  if (!(phi.domain() == f.domain())) throw InvalidArgument("constants: φ lives on a different grid");
  const ProblemParams& pp = f.params();
  ConstantsReport c{.params = pp};
  c.group = pp.kernel.group.name();
  c.points_per_axis = f.domain().points_per_axis();
  c.half_widths = f.domain().half_widths();
  c.d = d;
  const EnergyReport rep = f.energy(phi.values());
  c.phi_lp_pp = rep.lp_pp;
  c.r3 = verify_identities(rep, d, pp).r3;
  c.c_gn_inv_routeA = c_gn_inverse(pp, ConstantSource::LpNorm, rep.lp_pp);
  c.c_gn_inv_routeB = c_gn_inverse(pp, ConstantSource::Energy, d);
  c.c_s_inv_routeA = c_s_inverse(pp, ConstantSource::LpNorm, rep.lp_pp);
  c.c_s_inv_routeB = c_s_inverse(pp, ConstantSource::Energy, d);
  c.c_s_log = c_s_log(pp, d);
  c.cross_residual = cross_check(c.c_gn_inv_routeA, c.c_s_inv_routeA, pp);
  c.cross_residual_mixed = cross_check(c.c_gn_inv_routeA, c.c_s_inv_routeB, pp);
  c.route_gap_gn = std::abs(c.c_gn_inv_routeA - c.c_gn_inv_routeB) / c.c_gn_inv_routeB;
  c.route_gap_s = std::abs(c.c_s_inv_routeA - c.c_s_inv_routeB) / c.c_s_inv_routeB;
  c.J_phi = j_quotient(f, phi.values());
  c.sobolev_phi = sobolev_quotient(f, phi.values());
  c.inhom_gap_phi = log_sobolev_inhom_gap(f, phi.values(), d);
  c.inhom_gap_phi_qoversp = log_sobolev_inhom_gap(f, phi.values(), d, LogSobolevPrefactor::QOverSP);
  c.hom_gap_phi = log_sobolev_hom_gap(f, phi.values(), d);
  c.trials = trial_sweep(f, d, opts);
  c.trial_min_J = json_min(c.trials, &TrialResult::J);
  c.trial_min_S = json_min(c.trials, &TrialResult::sobolev);
  c.trial_min_inhom_gap = json_min(c.trials, &TrialResult::inhom_gap);
  c.trial_min_hom_gap = json_min(c.trials, &TrialResult::hom_gap);
  return c;
}

json to_json(const ConstantsReport& r) {
  json j;
  j["params"] = to_json(r.params);
  j["gauge"] = r.params.kernel.group.gauge_name();
  j["kernel_constant"] = r.params.kernel.kernel_constant;
  j["points_per_axis"] = r.points_per_axis;
  j["half_widths"] = r.half_widths;
  j["d"] = r.d;
  j["phi_lp_pp"] = r.phi_lp_pp;
  j["r3"] = r.r3;
  j["c_gn_inv_routeA"] = r.c_gn_inv_routeA;
  j["c_gn_inv_routeB"] = r.c_gn_inv_routeB;
  j["c_s_inv_routeA"] = r.c_s_inv_routeA;
  j["c_s_inv_routeB"] = r.c_s_inv_routeB;
  j["c_s_log"] = r.c_s_log;
  j["cross_residual"] = r.cross_residual;
  j["cross_residual_mixed"] = r.cross_residual_mixed;
  j["route_gap_gn"] = r.route_gap_gn;
  j["route_gap_s"] = r.route_gap_s;
  j["J_phi"] = r.J_phi;
  j["sobolev_phi"] = r.sobolev_phi;
  j["inhom_gap_phi"] = r.inhom_gap_phi;
  j["inhom_gap_phi_q_over_sp"] = r.inhom_gap_phi_qoversp;
  j["hom_gap_phi"] = r.hom_gap_phi;
  j["trial_count"] = r.trials.size();
  j["trial_min_J"] = num(r.trial_min_J);
  j["trial_min_S"] = num(r.trial_min_S);
  j["trial_min_inhom_gap"] = num(r.trial_min_inhom_gap);
  j["trial_min_hom_gap"] = num(r.trial_min_hom_gap);
  return j;
}

void write_trials_csv(const std::vector<TrialResult>& trials, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
  os.precision(17);
  os << "trial,bumps,J,sobolev,inhom_gap,hom_gap\n";
  for (const auto& t : trials)
    os << t.id << ',' << t.bumps << ',' << t.J << ',' << t.sobolev << ',' << t.inhom_gap << ',' << t.hom_gap << '\n';
  if (!os) throw FormatError("write failed for '" + path.string() + "'");
}

}  // namespace nsg
