#include "nsg/nonlocal.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <zlib.h>

#include <nlohmann/json.hpp>

#include "nsg/error.hpp"
#include "nsg/parallel.hpp"
#include "quadrature.hpp"

namespace nsg {

using json = nlohmann::json;

void KernelSpec::validate() const {
  if (!(s > 0.0 && s < 1.0)) throw InvalidArgument("kernel: s must lie in (0, 1)");
  if (!(p > 1.0) || !std::isfinite(p)) throw InvalidArgument("kernel: p must be > 1");
  if (!(kernel_constant > 0.0) || !std::isfinite(kernel_constant)) {
    throw InvalidArgument("kernel: kernel_constant must be positive");
  }
}

namespace {

// X^{-alpha} where X is the squared (Euclidean) or fourth-power (Korányi)
// distance; fast paths for exponents that are multiples of 1/4.
struct KernelPower {
  double alpha;
  int quarters = -1;

  explicit KernelPower(double a) : alpha(a) {
    const double q4 = 4.0 * a;
    if (std::abs(q4 - std::round(q4)) < 1e-12 && q4 > 0 && q4 <= 64) quarters = static_cast<int>(std::round(q4));
  }

  double operator()(double x) const {
    if (quarters < 0) return std::pow(x, -alpha);
    double whole = 1.0;
    for (int k = 0; k < quarters / 4; ++k) whole *= x;
    switch (quarters % 4) {
      case 1: whole *= std::sqrt(std::sqrt(x)); break;
      case 2: whole *= std::sqrt(x); break;
      case 3: {
        const double r = std::sqrt(x);
        whole *= r * std::sqrt(r);
        break;
      }
      default: break;
    }
    return 1.0 / whole;
  }
};

struct AbsPower {
  double p;
  bool square;
  explicit AbsPower(double pp) : p(pp), square(pp == 2.0) {}
  double value(double a) const { return square ? a * a : std::pow(std::abs(a), p); }
  /// |a|^{p-2} a
  double slope(double a) const {
    if (square) return a;
    if (a == 0.0) return 0.0;
    return std::copysign(std::pow(std::abs(a), p - 1.0), a);
  }
};

// Distance "base": squared distance (Euclidean) or fourth power (Korányi).
inline double dist_base(GroupKind kind, int dim, const double* a, const double* b) {
  if (kind == GroupKind::Heisenberg1) {
    const double dx = a[0] - b[0];
    const double dy = a[1] - b[1];
    const double dt = a[2] - b[2] - 0.5 * (b[0] * a[1] - b[1] * a[0]);
    const double r2 = dx * dx + dy * dy;
    return r2 * r2 + 16.0 * dt * dt;
  }
  double acc = 0.0;
  for (int i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

inline double base_power(GroupKind kind) { return kind == GroupKind::Heisenberg1 ? 4.0 : 2.0; }

// Near-field predicate on z = x_j^{-1} x_i: either a gauge ball (via the
// distance base) or a box of near_factor cells per coordinate.
struct NearTest {
  bool box = false;
  double base = 0.0;
  double f[3] = {0.0, 0.0, 0.0};
  // z components (dz) and distance base b for the same pair.
  bool operator()(const double* dz, int dim, double b) const {
    if (!box) return b <= base;
    for (int a = 0; a < dim; ++a)
      if (std::abs(dz[a]) > f[a]) return false;
    return true;
  }
};

inline bool resolve_cell_box(NearRule rule, GroupKind kind) {
  if (rule == NearRule::Auto) return kind == GroupKind::Heisenberg1;
  return rule == NearRule::CellBox;
}

inline NearTest make_near_test(bool box, double radius, const double* limits, GroupKind kind) {
  NearTest t;
  t.box = box;
  t.base = std::pow(radius, base_power(kind));
  for (int a = 0; a < 3; ++a) t.f[a] = limits[a];
  return t;
}

inline void pair_z(GroupKind kind, int dim, const double* a, const double* b, double* z) {
  for (int i = 0; i < dim; ++i) z[i] = a[i] - b[i];
  if (kind == GroupKind::Heisenberg1) z[2] -= 0.5 * (b[0] * a[1] - b[1] * a[0]);
}

// Unit-gauge directions ω with weights dσ such that dz = r^{Q-1} dr dσ(ω).
struct SphereRule {
  std::vector<double> dirs;  // n x dim
  std::vector<double> weights;
};

SphereRule sphere_rule(const GroupSpec& group, int level) {
  SphereRule rule;
  const double pi = std::numbers::pi;
  if (group.kind() == GroupKind::Euclidean && group.dim() == 1) {
    rule.dirs = {1.0, -1.0};
    rule.weights = {1.0, 1.0};
    return rule;
  }
  const int n_phi = 16 << level;
  const int panels = 2 << level;
  const auto [gx, gw] = detail::gauss_legendre(4);
  if (group.kind() == GroupKind::Euclidean && group.dim() == 2) {
    for (int k = 0; k < n_phi; ++k) {
      const double phi = 2.0 * pi * (k + 0.5) / n_phi;
      rule.dirs.insert(rule.dirs.end(), {std::cos(phi), std::sin(phi)});
      rule.weights.push_back(2.0 * pi / n_phi);
    }
    return rule;
  }
  if (group.kind() == GroupKind::Euclidean && group.dim() == 3) {
    for (int pnl = 0; pnl < panels; ++pnl) {
      const double a = -1.0 + 2.0 * pnl / panels, b = -1.0 + 2.0 * (pnl + 1) / panels;
      for (size_t g = 0; g < gx.size(); ++g) {
        const double mu = 0.5 * (a + b) + 0.5 * (b - a) * gx[g];
        const double wmu = 0.5 * (b - a) * gw[g];
        const double st = std::sqrt(std::max(0.0, 1.0 - mu * mu));
        for (int k = 0; k < n_phi; ++k) {
          const double phi = 2.0 * pi * (k + 0.5) / n_phi;
          rule.dirs.insert(rule.dirs.end(), {st * std::cos(phi), st * std::sin(phi), mu});
          rule.weights.push_back(wmu * 2.0 * pi / n_phi);
        }
      }
    }
    return rule;
  }
  if (group.kind() == GroupKind::Heisenberg1) {
    // ω = (sqrt(cos α) cos φ, sqrt(cos α) sin φ, sin α / 4), dσ = dα dφ / 4.
    for (int pnl = 0; pnl < panels; ++pnl) {
      const double a = -0.5 * pi + pi * pnl / panels, b = -0.5 * pi + pi * (pnl + 1) / panels;
      for (size_t g = 0; g < gx.size(); ++g) {
        const double alpha = 0.5 * (a + b) + 0.5 * (b - a) * gx[g];
        const double wa = 0.5 * (b - a) * gw[g];
        const double rc = std::sqrt(std::cos(alpha));
        for (int k = 0; k < n_phi; ++k) {
          const double phi = 2.0 * pi * (k + 0.5) / n_phi;
          rule.dirs.insert(rule.dirs.end(), {rc * std::cos(phi), rc * std::sin(phi), 0.25 * std::sin(alpha)});
          rule.weights.push_back(0.25 * wa * 2.0 * pi / n_phi);
        }
      }
    }
    return rule;
  }
  throw InvalidArgument("exterior weights: euclidean groups of dimension > 3 are not supported");
}

// ∫ r^{-1-ps} dr over {r in (0, R] : x∘D_r ω outside the box}; F(r) = r^{-ps}/ps.
double ray_exterior(const BoxDomain& dom, const double* x, const double* w, const KernelPower& rp, double ps,
                    double R, double FR) {
  const int d = dom.dim();
  const double* L = dom.half_widths().data();
  auto F = [&](double r) { return rp(r) / ps; };
  const bool heis = dom.group().kind() == GroupKind::Heisenberg1;
  // Exit radius through the linearly moving coordinates.
  const int linear_axes = heis ? 2 : d;
  double r_lin = R;
  for (int a = 0; a < linear_axes; ++a) {
    if (w[a] > 0.0) r_lin = std::min(r_lin, (L[a] - x[a]) / w[a]);
    if (w[a] < 0.0) r_lin = std::min(r_lin, (-L[a] - x[a]) / w[a]);
  }
  double acc = r_lin < R ? F(r_lin) - FR : 0.0;
  if (!heis) return acc;

  // t(r) = t + b r + c r^2 must stay within (-L_t, L_t) as well.
  const double Lt = L[2];
  const double b = 0.5 * (x[0] * w[1] - x[1] * w[0]);
  const double c = w[2];
  double pts[6];
  int np = 0;
  for (double level : {Lt, -Lt}) {
    const double c0 = x[2] - level;
    if (c == 0.0) {
      if (b != 0.0) pts[np++] = -c0 / b;
      continue;
    }
    const double disc = b * b - 4.0 * c * c0;
    if (disc < 0.0) continue;
    const double qq = -0.5 * (b + std::copysign(std::sqrt(disc), b));
    if (qq != 0.0) {
      pts[np++] = qq / c;
      pts[np++] = c0 / qq;
    }
  }
  int m = 0;
  for (int k = 0; k < np; ++k) {
    if (pts[k] > 0.0 && pts[k] < r_lin) pts[m++] = pts[k];
  }
  std::sort(pts, pts + m);
  pts[m++] = r_lin;
  double a0 = 0.0;
  for (int k = 0; k < m; ++k) {
    const double a1 = pts[k];
    if (a1 > a0 && a0 > 0.0) {
      const double mid = 0.5 * (a0 + a1);
      if (std::abs(x[2] + b * mid + c * mid * mid) >= Lt) acc += F(a0) - F(a1);
    }
    a0 = a1;
  }
  return acc;
}

struct RayContext {
  KernelPower rp;
  double ps, R, FR, tail;
};

double exterior_with_rule(const BoxDomain& dom, const SphereRule& rule, const double* x, const RayContext& rc) {
  const size_t d = static_cast<size_t>(dom.dim());
  double acc = 0.0;
  for (size_t k = 0; k < rule.weights.size(); ++k) {
    acc += rule.weights[k] * ray_exterior(dom, x, &rule.dirs[k * d], rc.rp, rc.ps, rc.R, rc.FR);
  }
  return acc + rc.tail;
}

// Index of a representative node under the reflections that map the box to
// itself and preserve the gauge: x_a -> -x_a on R^N; on H^1, x -> -x and
// y -> -y each combined with t -> -t.
size_t reflection_representative(const BoxDomain& dom, size_t i) {
  const int d = dom.dim();
  const auto& M = dom.points_per_axis();
  const auto& S = dom.strides();
  int idx[8];
  for (int a = 0; a < d; ++a) idx[a] = static_cast<int>((i / S[static_cast<size_t>(a)]) % static_cast<size_t>(M[static_cast<size_t>(a)]));
  if (dom.group().kind() == GroupKind::Heisenberg1) {
    int flips = 0;
    for (int a = 0; a < 2; ++a) {
      if (idx[a] >= M[static_cast<size_t>(a)] / 2) {
        idx[a] = M[static_cast<size_t>(a)] - 1 - idx[a];
        ++flips;
      }
    }
    if (flips % 2 == 1) idx[2] = M[2] - 1 - idx[2];
  } else {
    for (int a = 0; a < d; ++a) idx[a] = std::min(idx[a], M[static_cast<size_t>(a)] - 1 - idx[a]);
  }
  size_t r = 0;
  for (int a = 0; a < d; ++a) r += static_cast<size_t>(idx[a]) * S[static_cast<size_t>(a)];
  return r;
}

}  // namespace

double gauge_sphere_constant(const GroupSpec& group, double ps) {
  const double e = group.homogeneous_dim() + ps;
  const double pi = std::numbers::pi;
  double integral = 0.0;
  if (group.kind() == GroupKind::Euclidean && group.dim() == 1) {
    integral = 2.0 * detail::tanh_sinh([&](double z) { return std::pow(z, -e); }, 1.0, 2.0);
  } else if (group.kind() == GroupKind::Euclidean && group.dim() == 2) {
    auto inner = [&](double x) {
      const double lo = x < 1.0 ? std::sqrt(1.0 - x * x) : 0.0;
      const double hi = std::sqrt(std::max(0.0, 4.0 - x * x));
      return detail::tanh_sinh([&](double y) { return std::pow(x * x + y * y, -0.5 * e); }, lo, hi);
    };
    integral = 4.0 * (detail::tanh_sinh(inner, 0.0, 1.0) + detail::tanh_sinh(inner, 1.0, 2.0));
  } else if (group.kind() == GroupKind::Euclidean && group.dim() == 3) {
    auto inner = [&](double rho) {
      const double lo = rho < 1.0 ? std::sqrt(1.0 - rho * rho) : 0.0;
      const double hi = std::sqrt(std::max(0.0, 4.0 - rho * rho));
      return 2.0 * rho * detail::tanh_sinh([&](double z) { return std::pow(rho * rho + z * z, -0.5 * e); }, lo, hi);
    };
    integral = 2.0 * pi * (detail::tanh_sinh(inner, 0.0, 1.0) + detail::tanh_sinh(inner, 1.0, 2.0));
  } else if (group.kind() == GroupKind::Heisenberg1) {
    // 1 < r^4 + 16 t^2 < 16 in cylindrical coordinates (r, t).
    auto inner = [&](double r) {
      const double r4 = r * r * r * r;
      const double lo = r < 1.0 ? 0.25 * std::sqrt(1.0 - r4) : 0.0;
      const double hi = 0.25 * std::sqrt(std::max(0.0, 16.0 - r4));
      return 2.0 * r * detail::tanh_sinh([&](double t) { return std::pow(r4 + 16.0 * t * t, -0.25 * e); }, lo, hi);
    };
    integral = 2.0 * pi * (detail::tanh_sinh(inner, 0.0, 1.0) + detail::tanh_sinh(inner, 1.0, 2.0));
  } else {
    throw InvalidArgument("gauge_sphere_constant: unsupported group");
  }
  return integral * ps / (1.0 - std::pow(2.0, -ps));
}

namespace {

struct ExteriorSetup {
  double ps, R, sigma, tail;
  RayContext ray() const { return RayContext{KernelPower(ps), ps, R, KernelPower(ps)(R) / ps, tail}; }
};

ExteriorSetup exterior_setup(const BoxDomain& domain, const KernelSpec& kernel, const ExteriorOptions& opts) {
  kernel.validate();
  if (!(domain.group() == kernel.group)) throw InvalidArgument("exterior weights: group mismatch");
  ExteriorSetup st{};
  st.ps = kernel.p * kernel.s;
  st.R = opts.shell_factor * domain.max_gauge_radius();
  st.sigma = gauge_sphere_constant(domain.group(), st.ps);
  st.tail = st.sigma * std::pow(st.R, -st.ps) / st.ps;
  return st;
}

}  // namespace

double exterior_weight_at(const BoxDomain& domain, const KernelSpec& kernel, std::span<const double> point,
                          const ExteriorOptions& opts) {
  const ExteriorSetup st = exterior_setup(domain, kernel, opts);
  if (static_cast<int>(point.size()) != domain.dim()) throw InvalidArgument("exterior_weight_at: dimension mismatch");
  for (int a = 0; a < domain.dim(); ++a) {
    if (std::abs(point[static_cast<size_t>(a)]) >= domain.half_widths()[static_cast<size_t>(a)]) {
      throw InvalidArgument("exterior_weight_at: point must lie inside the box");
    }
  }
  const RayContext rc = st.ray();
  double prev = exterior_with_rule(domain, sphere_rule(domain.group(), 0), point.data(), rc);
  for (int level = 1; level <= opts.max_refinements; ++level) {
    const double cur = exterior_with_rule(domain, sphere_rule(domain.group(), level), point.data(), rc);
    if (std::abs(cur - prev) <= opts.rel_tol * std::abs(cur)) return cur;
    prev = cur;
  }
  return prev;
}

ExteriorWeights exterior_weights(const BoxDomain& domain, const KernelSpec& kernel, const ExteriorOptions& opts) {
  const ExteriorSetup st = exterior_setup(domain, kernel, opts);
  const size_t d = static_cast<size_t>(domain.dim());

  // Pick the angular level on probe nodes: a corner, an edge midpoint and the center.
  std::vector<GroupPoint> probes;
  {
    std::vector<int> corner(d, 0), edge(d), center(d);
    for (size_t a = 0; a < d; ++a) {
      center[a] = domain.points_per_axis()[a] / 2;
      edge[a] = a == 0 ? 0 : domain.points_per_axis()[a] / 2;
    }
    for (const auto& idx : {corner, edge, center}) {
      GroupPoint x(d);
      for (size_t a = 0; a < d; ++a) x[a] = domain.node_coord(static_cast<int>(a), idx[a]);
      probes.push_back(x);
    }
  }
  const RayContext rc = st.ray();
  int level = 0;
  double err = 0.0;
  std::vector<double> prev(probes.size());
  {
    const SphereRule r0 = sphere_rule(domain.group(), 0);
    for (size_t k = 0; k < probes.size(); ++k) prev[k] = exterior_with_rule(domain, r0, probes[k].data(), rc);
  }
  bool converged = domain.group().kind() == GroupKind::Euclidean && domain.dim() == 1;
  while (!converged && level < opts.max_refinements) {
    ++level;
    const SphereRule r = sphere_rule(domain.group(), level);
    err = 0.0;
    for (size_t k = 0; k < probes.size(); ++k) {
      const double cur = exterior_with_rule(domain, r, probes[k].data(), rc);
      err = std::max(err, std::abs(cur - prev[k]) / std::abs(cur));
      prev[k] = cur;
    }
    converged = err <= opts.rel_tol;
  }
  if (!converged) {
    std::ostringstream os;
    os << "exterior weights: angular quadrature did not reach rel_tol " << opts.rel_tol << " after " << level
       << " refinements (last relative change " << err << ")";
    throw ConvergenceError(os.str());
  }

  const SphereRule rule = sphere_rule(domain.group(), level);
  ExteriorWeights out;
  out.shell_radius = st.R;
  out.sigma = st.sigma;
  out.angular_error = err;
  out.angular_points = static_cast<int>(rule.weights.size());
  out.w.resize(domain.size());
  const std::vector<double> nodes = domain.node_table();
  std::vector<size_t> rep(domain.size()), todo;
  for (size_t i = 0; i < domain.size(); ++i) {
    rep[i] = reflection_representative(domain, i);
    if (rep[i] == i) todo.push_back(i);
  }
  const int chunks = chunk_count();
  parallel_chunks(chunks, [&](int c) {
    const auto [b, e] = chunk_range(todo.size(), chunks, c);
    for (size_t k = b; k < e; ++k) out.w[todo[k]] = exterior_with_rule(domain, rule, &nodes[todo[k] * d], rc);
  });
  for (size_t i = 0; i < domain.size(); ++i) out.w[i] = out.w[rep[i]];
  return out;
}

ExteriorWeights exterior_weights_cached(const BoxDomain& domain, const KernelSpec& kernel,
                                        const std::filesystem::path& cache_dir, const ExteriorOptions& opts) {
  json key = domain_to_json(domain);
  key["s"] = kernel.s;
  key["p"] = kernel.p;
  key["shell_factor"] = opts.shell_factor;
  key["rel_tol"] = opts.rel_tol;
  const std::string text = key.dump();
  const uint32_t h = static_cast<uint32_t>(
      crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(text.data()), static_cast<uInt>(text.size())));
  std::ostringstream name;
  name << "extw_" << std::hex << h << ".nsgf";
  const auto path = cache_dir / name.str();
  if (std::filesystem::exists(path)) {
    json meta;
    try {
      GridFunction g = load(path, &meta);
      if (meta.value("key", json()) == key) {
        ExteriorWeights out;
        out.w.assign(g.values().begin(), g.values().end());
        out.shell_radius = meta.at("shell_radius").get<double>();
        out.sigma = meta.at("sigma").get<double>();
        out.angular_error = meta.at("angular_error").get<double>();
        out.angular_points = meta.at("angular_points").get<int>();
        return out;
      }
    } catch (const FormatError&) {
      // stale or corrupt cache entry: recompute below
    }
  }
  ExteriorWeights out = exterior_weights(domain, kernel, opts);
  std::filesystem::create_directories(cache_dir);
  json meta{{"kind", "exterior_weights"},
            {"key", key},
            {"shell_radius", out.shell_radius},
            {"sigma", out.sigma},
            {"angular_error", out.angular_error},
            {"angular_points", out.angular_points}};
  save(GridFunction(domain, out.w), path, meta);
  return out;
}

double gauge_cell_size(const BoxDomain& domain) {
  double out = 0.0;
  for (int a = 0; a < domain.dim(); ++a) {
    const double h = domain.spacings()[static_cast<size_t>(a)];
    out = std::max(out, std::pow(h, 1.0 / domain.group().dilation_exponents()[static_cast<size_t>(a)]) *
                            (domain.group().kind() == GroupKind::Heisenberg1 && a == 2 ? 2.0 : 1.0));
  }
  return out;
}

// ---------------------------------------------------------------------------

NonlocalOperator::NonlocalOperator(BoxDomain domain, KernelSpec kernel, NonlocalOptions opts)
    : domain_(std::move(domain)), kernel_(std::move(kernel)), opts_(opts) {
  kernel_.validate();
  exterior_ = exterior_weights(domain_, kernel_, opts_.exterior);
  init();
}

NonlocalOperator::NonlocalOperator(BoxDomain domain, KernelSpec kernel, ExteriorWeights weights, NonlocalOptions opts)
    : domain_(std::move(domain)), kernel_(std::move(kernel)), opts_(opts), exterior_(std::move(weights)) {
  kernel_.validate();
  if (exterior_.w.size() != domain_.size()) throw InvalidArgument("nonlocal: exterior weights do not match the grid");
  init();
}

void NonlocalOperator::init() {
  if (!(domain_.group() == kernel_.group)) throw InvalidArgument("nonlocal: domain and kernel groups differ");
  if (opts_.subcell_points < 1) throw InvalidArgument("nonlocal: subcell_points must be >= 1");
  if (domain_.size() > std::numeric_limits<uint32_t>::max()) throw InvalidArgument("nonlocal: grid too large");
  const int d = domain_.dim();
  const size_t n = domain_.size();
  const GroupKind kind = domain_.group().kind();

  coords_.assign(static_cast<size_t>(d), std::vector<double>(n));
  for (size_t i = 0; i < n; ++i) {
    const GroupPoint x = domain_.node(i);
    for (int a = 0; a < d; ++a) coords_[static_cast<size_t>(a)][i] = x[static_cast<size_t>(a)];
  }

  near_box_ = resolve_cell_box(opts_.near_rule, kind);
  for (int a = 0; a < d; ++a) near_limits_[a] = opts_.near_factor * domain_.spacings()[static_cast<size_t>(a)] * (1.0 + 1e-9);
  if (near_box_) {
    GroupPoint corner(static_cast<size_t>(d));
    for (int a = 0; a < d; ++a) corner[static_cast<size_t>(a)] = near_limits_[a];
    near_radius_ = qnorm(domain_.group(), corner);
  } else {
    near_radius_ = opts_.near_factor * gauge_cell_size(domain_) * (1.0 + 1e-9);
  }
  const NearTest nt = make_near_test(near_box_, near_radius_, near_limits_, kind);

  // Near lists: scan an index window per axis.
  std::vector<int> window(static_cast<size_t>(d));
  for (int a = 0; a < d; ++a) {
    const size_t ua = static_cast<size_t>(a);
    const auto& L = domain_.half_widths();
    double reach = nt.box ? nt.f[a] : near_radius_;
    if (kind == GroupKind::Heisenberg1 && a == 2) {
      reach = nt.box ? nt.f[2] + 0.5 * (nt.f[0] * L[1] + nt.f[1] * L[0])
                     : 0.25 * near_radius_ * near_radius_ + 0.5 * (L[0] + L[1]) * near_radius_;
    }
    window[ua] = static_cast<int>(std::ceil(reach / domain_.spacings()[ua])) + 1;
  }
  near_offsets_.assign(n + 1, 0);
  near_cells_.clear();
  std::vector<int> idx(static_cast<size_t>(d)), lo(static_cast<size_t>(d)), hi(static_cast<size_t>(d)),
      cur(static_cast<size_t>(d));
  double xi[3], xj[3];
  for (size_t i = 0; i < n; ++i) {
    for (int a = 0; a < d; ++a) {
      const size_t ua = static_cast<size_t>(a);
      idx[ua] = static_cast<int>((i / domain_.strides()[ua]) % static_cast<size_t>(domain_.points_per_axis()[ua]));
      lo[ua] = std::max(0, idx[ua] - window[ua]);
      hi[ua] = std::min(domain_.points_per_axis()[ua] - 1, idx[ua] + window[ua]);
      cur[ua] = lo[ua];
      xi[a] = coords_[ua][i];
    }
    while (true) {
      size_t j = 0;
      for (int a = 0; a < d; ++a) j += static_cast<size_t>(cur[static_cast<size_t>(a)]) * domain_.strides()[static_cast<size_t>(a)];
      for (int a = 0; a < d; ++a) xj[a] = coords_[static_cast<size_t>(a)][j];
      double z[3];
      pair_z(kind, d, xi, xj, z);
      if (nt(z, d, dist_base(kind, d, xi, xj))) near_cells_.push_back(static_cast<uint32_t>(j));
      int a = d - 1;
      while (a >= 0 && ++cur[static_cast<size_t>(a)] > hi[static_cast<size_t>(a)]) {
        cur[static_cast<size_t>(a)] = lo[static_cast<size_t>(a)];
        --a;
      }
      if (a < 0) break;
    }
    near_offsets_[i + 1] = near_cells_.size();
  }

  // Subcell lattice and interpolation stencils.
  const int m = opts_.subcell_points;
  n_sub_ = 1;
  for (int a = 0; a < d; ++a) n_sub_ *= m;
  const int corners = 1 << d;
  sub_offsets_.assign(static_cast<size_t>(n_sub_), std::vector<double>(static_cast<size_t>(d)));
  stencil_shift_.assign(static_cast<size_t>(n_sub_ * corners * d), 0);
  stencil_weight_.assign(static_cast<size_t>(n_sub_ * corners), 0.0);
  for (int sidx = 0; sidx < n_sub_; ++sidx) {
    int rem = sidx;
    std::vector<int> base_shift(static_cast<size_t>(d));
    std::vector<double> frac(static_cast<size_t>(d));
    for (int a = d - 1; a >= 0; --a) {
      const int k = rem % m;
      rem /= m;
      const double off = (2.0 * k + 1.0) / (2.0 * m) - 0.5;  // in units of h
      sub_offsets_[static_cast<size_t>(sidx)][static_cast<size_t>(a)] = off * domain_.spacings()[static_cast<size_t>(a)];
      base_shift[static_cast<size_t>(a)] = off < 0.0 ? -1 : 0;
      frac[static_cast<size_t>(a)] = off < 0.0 ? 1.0 + off : off;
    }
    for (int c = 0; c < corners; ++c) {
      double w = 1.0;
      for (int a = 0; a < d; ++a) {
        const int bit = (c >> a) & 1;
        stencil_shift_[static_cast<size_t>((sidx * corners + c) * d + a)] = base_shift[static_cast<size_t>(a)] + bit;
        w *= bit ? frac[static_cast<size_t>(a)] : 1.0 - frac[static_cast<size_t>(a)];
      }
      stencil_weight_[static_cast<size_t>(sidx * corners + c)] = w;
    }
  }

  // Triangular far-field rows split into chunks of near-equal pair counts.
  const int chunks = chunk_count();
  row_chunks_.assign(static_cast<size_t>(chunks) + 1, n);
  row_chunks_[0] = 0;
  const double total_pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  size_t row = 0;
  double acc = 0.0;
  for (int c = 1; c < chunks; ++c) {
    const double target = total_pairs * c / chunks;
    while (row < n && acc < target) {
      acc += static_cast<double>(n - 1 - row);
      ++row;
    }
    row_chunks_[static_cast<size_t>(c)] = row;
  }
}

double NonlocalOperator::mean_near_cells() const {
  return static_cast<double>(near_cells_.size()) / static_cast<double>(domain_.size());
}

void NonlocalOperator::check(std::span<const double> u) const {
  if (u.size() != domain_.size()) {
    throw InvalidArgument("nonlocal: function has " + std::to_string(u.size()) + " values, grid has " +
                          std::to_string(domain_.size()));
  }
}

void NonlocalOperator::subpoint_values(std::span<const double> u, std::vector<double>& out) const {
  const int d = domain_.dim();
  const int corners = 1 << d;
  const size_t n = domain_.size();
  out.assign(n * static_cast<size_t>(n_sub_), 0.0);
  const int chunks = chunk_count();
  parallel_chunks(chunks, [&](int c) {
    const auto [b, e] = chunk_range(n, chunks, c);
    int idx[3];
    for (size_t j = b; j < e; ++j) {
      for (int a = 0; a < d; ++a) {
        idx[a] = static_cast<int>((j / domain_.strides()[static_cast<size_t>(a)]) %
                                  static_cast<size_t>(domain_.points_per_axis()[static_cast<size_t>(a)]));
      }
      for (int sidx = 0; sidx < n_sub_; ++sidx) {
        double v = 0.0;
        for (int cr = 0; cr < corners; ++cr) {
          const int* sh = &stencil_shift_[static_cast<size_t>((sidx * corners + cr) * d)];
          size_t k = 0;
          bool inside = true;
          for (int a = 0; a < d; ++a) {
            const int q = idx[a] + sh[a];
            if (q < 0 || q >= domain_.points_per_axis()[static_cast<size_t>(a)]) {
              inside = false;
              break;
            }
            k += static_cast<size_t>(q) * domain_.strides()[static_cast<size_t>(a)];
          }
          if (inside) v += stencil_weight_[static_cast<size_t>(sidx * corners + cr)] * u[k];
        }
        out[j * static_cast<size_t>(n_sub_) + static_cast<size_t>(sidx)] = v;
      }
    }
  });
}

namespace {

struct Accum {
  double interior = 0.0;
  double exterior = 0.0;
};

}  // namespace

SeminormBreakdown NonlocalOperator::seminorm(std::span<const double> u) const {
  const double total = pairing(u, u);
  // pairing() already includes both parts; recompute the exterior part alone.
  check(u);
  const AbsPower ap(kernel_.p);
  const double vol = domain_.cell_volume();
  const double ext = kernel_.kernel_constant * 2.0 * vol * chunked_sum(domain_.size(), [&](size_t b, size_t e) {
                       double acc = 0.0;
                       for (size_t i = b; i < e; ++i) acc += ap.value(u[i]) * exterior_.w[i];
                       return acc;
                     });
  SeminormBreakdown out;
  out.exterior = ext;
  out.interior = total - ext;
  out.total = total;
  return out;
}

double NonlocalOperator::pairing(std::span<const double> u, std::span<const double> v) const {
  check(u);
  check(v);
  const int d = domain_.dim();
  const size_t n = domain_.size();
  const GroupKind kind = domain_.group().kind();
  const double vol = domain_.cell_volume();
  const double sub_vol = vol / n_sub_;
  const KernelPower kp(kernel_.kernel_exponent() / base_power(kind));
  const AbsPower ap(kernel_.p);
  const NearTest nt = make_near_test(near_box_, near_radius_, near_limits_, kind);
  const int chunks = chunk_count();

  std::vector<double> su, sv;
  subpoint_values(u, su);
  subpoint_values(v, sv);

  std::vector<double> far(static_cast<size_t>(chunks), 0.0), near(static_cast<size_t>(chunks), 0.0),
      ext(static_cast<size_t>(chunks), 0.0);
  const double* X = coords_[0].data();
  const double* Y = d > 1 ? coords_[1].data() : nullptr;
  const double* T = d > 2 ? coords_[2].data() : nullptr;
  parallel_chunks(chunks, [&](int c) {
    const size_t rb = row_chunks_[static_cast<size_t>(c)], re = row_chunks_[static_cast<size_t>(c) + 1];
    double acc = 0.0;
    for (size_t i = rb; i < re; ++i) {
      const double ui = u[i], vi = v[i];
      double row = 0.0;
      if (kind == GroupKind::Heisenberg1) {
        const double xi = X[i], yi = Y[i], ti = T[i];
        for (size_t j = i + 1; j < n; ++j) {
          const double dx = xi - X[j], dy = yi - Y[j];
          const double dt = ti - T[j] - 0.5 * (X[j] * yi - Y[j] * xi);
          const double r2 = dx * dx + dy * dy;
          const double base = r2 * r2 + 16.0 * dt * dt;
          const double z[3] = {dx, dy, dt};
          if (nt(z, 3, base)) continue;
          row += ap.slope(ui - u[j]) * (vi - v[j]) * kp(base);
        }
      } else {
        double xi[3];
        for (int a = 0; a < d; ++a) xi[a] = coords_[static_cast<size_t>(a)][i];
        for (size_t j = i + 1; j < n; ++j) {
          double base = 0.0, z[3];
          for (int a = 0; a < d; ++a) {
            z[a] = xi[a] - coords_[static_cast<size_t>(a)][j];
            base += z[a] * z[a];
          }
          if (nt(z, d, base)) continue;
          row += ap.slope(ui - u[j]) * (vi - v[j]) * kp(base);
        }
      }
      acc += row;
    }
    far[static_cast<size_t>(c)] = 2.0 * vol * vol * acc;

    const auto [b, e] = chunk_range(n, chunks, c);
    double nacc = 0.0, eacc = 0.0;
    double xi[3], y[3];
    for (size_t i = b; i < e; ++i) {
      for (int a = 0; a < d; ++a) xi[a] = coords_[static_cast<size_t>(a)][i];
      for (size_t q = near_offsets_[i]; q < near_offsets_[i + 1]; ++q) {
        const size_t j = near_cells_[q];
        for (int sidx = 0; sidx < n_sub_; ++sidx) {
          const auto& off = sub_offsets_[static_cast<size_t>(sidx)];
          for (int a = 0; a < d; ++a) y[a] = coords_[static_cast<size_t>(a)][j] + off[static_cast<size_t>(a)];
          const size_t s = j * static_cast<size_t>(n_sub_) + static_cast<size_t>(sidx);
          nacc += ap.slope(u[i] - su[s]) * (v[i] - sv[s]) * kp(dist_base(kind, d, xi, y));
        }
      }
      eacc += ap.slope(u[i]) * v[i] * exterior_.w[i];
    }
    near[static_cast<size_t>(c)] = vol * sub_vol * nacc;
    ext[static_cast<size_t>(c)] = 2.0 * vol * eacc;
  });
  double total = 0.0;
  for (int c = 0; c < chunks; ++c) total += far[static_cast<size_t>(c)];
  for (int c = 0; c < chunks; ++c) total += near[static_cast<size_t>(c)];
  for (int c = 0; c < chunks; ++c) total += ext[static_cast<size_t>(c)];
  return kernel_.kernel_constant * total;
}

SeminormBreakdown NonlocalOperator::seminorm_with_gradient(std::span<const double> u, std::span<double> grad) const {
  check(u);
  if (grad.size() != domain_.size()) throw InvalidArgument("nonlocal: gradient buffer has the wrong size");
  const int d = domain_.dim();
  const size_t n = domain_.size();
  const GroupKind kind = domain_.group().kind();
  const double vol = domain_.cell_volume();
  const double sub_vol = vol / n_sub_;
  const double p = kernel_.p;
  const KernelPower kp(kernel_.kernel_exponent() / base_power(kind));
  const AbsPower ap(p);
  const NearTest nt = make_near_test(near_box_, near_radius_, near_limits_, kind);
  const int chunks = chunk_count();
  const double cst = kernel_.kernel_constant;

  std::vector<double> su;
  subpoint_values(u, su);

  // Far field: triangular loop, scatter into per-chunk buffers.
  std::vector<std::vector<double>> gbuf(static_cast<size_t>(chunks));
  std::vector<double> far(static_cast<size_t>(chunks), 0.0), near(static_cast<size_t>(chunks), 0.0),
      ext(static_cast<size_t>(chunks), 0.0);
  const double* X = coords_[0].data();
  const double* Y = d > 1 ? coords_[1].data() : nullptr;
  const double* T = d > 2 ? coords_[2].data() : nullptr;
  const double far_scale = 2.0 * vol * vol;
  parallel_chunks(chunks, [&](int c) {
    const size_t rb = row_chunks_[static_cast<size_t>(c)], re = row_chunks_[static_cast<size_t>(c) + 1];
    auto& g = gbuf[static_cast<size_t>(c)];
    if (rb == re) return;
    g.assign(n, 0.0);
    double acc = 0.0;
    for (size_t i = rb; i < re; ++i) {
      const double ui = u[i];
      double row = 0.0, gi = 0.0;
      if (kind == GroupKind::Heisenberg1) {
        const double xi = X[i], yi = Y[i], ti = T[i];
        for (size_t j = i + 1; j < n; ++j) {
          const double dx = xi - X[j], dy = yi - Y[j];
          const double dt = ti - T[j] - 0.5 * (X[j] * yi - Y[j] * xi);
          const double r2 = dx * dx + dy * dy;
          const double base = r2 * r2 + 16.0 * dt * dt;
          const double z[3] = {dx, dy, dt};
          if (nt(z, 3, base)) continue;
          const double k = kp(base);
          const double a = ui - u[j];
          row += ap.value(a) * k;
          const double t = ap.slope(a) * k;
          gi += t;
          g[j] -= t;
        }
      } else {
        double xi[3];
        for (int a = 0; a < d; ++a) xi[a] = coords_[static_cast<size_t>(a)][i];
        for (size_t j = i + 1; j < n; ++j) {
          double base = 0.0, z[3];
          for (int a = 0; a < d; ++a) {
            z[a] = xi[a] - coords_[static_cast<size_t>(a)][j];
            base += z[a] * z[a];
          }
          if (nt(z, d, base)) continue;
          const double k = kp(base);
          const double a = ui - u[j];
          row += ap.value(a) * k;
          const double t = ap.slope(a) * k;
          gi += t;
          g[j] -= t;
        }
      }
      g[i] += gi;
      acc += row;
    }
    far[static_cast<size_t>(c)] = far_scale * acc;
  });

  // Near field, pass 1: value and derivative with respect to u_i.
  std::vector<double> gnear(n, 0.0), gsub(n * static_cast<size_t>(n_sub_), 0.0);
  parallel_chunks(chunks, [&](int c) {
    const auto [b, e] = chunk_range(n, chunks, c);
    double nacc = 0.0, eacc = 0.0;
    double xi[3], y[3];
    for (size_t i = b; i < e; ++i) {
      for (int a = 0; a < d; ++a) xi[a] = coords_[static_cast<size_t>(a)][i];
      double gi = 0.0;
      for (size_t q = near_offsets_[i]; q < near_offsets_[i + 1]; ++q) {
        const size_t j = near_cells_[q];
        for (int sidx = 0; sidx < n_sub_; ++sidx) {
          const auto& off = sub_offsets_[static_cast<size_t>(sidx)];
          for (int a = 0; a < d; ++a) y[a] = coords_[static_cast<size_t>(a)][j] + off[static_cast<size_t>(a)];
          const double k = kp(dist_base(kind, d, xi, y));
          const double a = u[i] - su[j * static_cast<size_t>(n_sub_) + static_cast<size_t>(sidx)];
          nacc += ap.value(a) * k;
          gi += ap.slope(a) * k;
        }
      }
      gnear[i] = gi;
      eacc += ap.value(u[i]) * exterior_.w[i];
    }
    near[static_cast<size_t>(c)] = vol * sub_vol * nacc;
    ext[static_cast<size_t>(c)] = 2.0 * vol * eacc;
  });
  // Pass 2: derivative with respect to the subpoint values of cell j (the
  // near relation is symmetric, so near_cells_ of j lists every i).
  parallel_chunks(chunks, [&](int c) {
    const auto [b, e] = chunk_range(n, chunks, c);
    double xi[3], y[3];
    for (size_t j = b; j < e; ++j) {
      for (int sidx = 0; sidx < n_sub_; ++sidx) {
        const auto& off = sub_offsets_[static_cast<size_t>(sidx)];
        for (int a = 0; a < d; ++a) y[a] = coords_[static_cast<size_t>(a)][j] + off[static_cast<size_t>(a)];
        const double sj = su[j * static_cast<size_t>(n_sub_) + static_cast<size_t>(sidx)];
        double acc = 0.0;
        for (size_t q = near_offsets_[j]; q < near_offsets_[j + 1]; ++q) {
          const size_t i = near_cells_[q];
          for (int a = 0; a < d; ++a) xi[a] = coords_[static_cast<size_t>(a)][i];
          acc -= ap.slope(u[i] - sj) * kp(dist_base(kind, d, xi, y));
        }
        gsub[j * static_cast<size_t>(n_sub_) + static_cast<size_t>(sidx)] = acc;
      }
    }
  });
  // Gather subpoint derivatives back onto nodes through the stencils.
  const int corners = 1 << d;
  parallel_chunks(chunks, [&](int c) {
    const auto [b, e] = chunk_range(n, chunks, c);
    int idx[3];
    for (size_t k = b; k < e; ++k) {
      for (int a = 0; a < d; ++a) {
        idx[a] = static_cast<int>((k / domain_.strides()[static_cast<size_t>(a)]) %
                                  static_cast<size_t>(domain_.points_per_axis()[static_cast<size_t>(a)]));
      }
      double acc = 0.0;
      for (int sidx = 0; sidx < n_sub_; ++sidx) {
        for (int cr = 0; cr < corners; ++cr) {
          const int* sh = &stencil_shift_[static_cast<size_t>((sidx * corners + cr) * d)];
          size_t j = 0;
          bool inside = true;
          for (int a = 0; a < d; ++a) {
            const int q = idx[a] - sh[a];
            if (q < 0 || q >= domain_.points_per_axis()[static_cast<size_t>(a)]) {
              inside = false;
              break;
            }
            j += static_cast<size_t>(q) * domain_.strides()[static_cast<size_t>(a)];
          }
          if (inside) {
            acc += stencil_weight_[static_cast<size_t>(sidx * corners + cr)] *
                   gsub[j * static_cast<size_t>(n_sub_) + static_cast<size_t>(sidx)];
          }
        }
      }
      grad[k] = acc;
    }
  });

  for (size_t k = 0; k < n; ++k) {
    double gf = 0.0;
    for (int c = 0; c < chunks; ++c) {
      const auto& g = gbuf[static_cast<size_t>(c)];
      if (!g.empty()) gf += g[k];
    }
    grad[k] = cst * p *
              (far_scale * gf + vol * sub_vol * (gnear[k] + grad[k]) + 2.0 * vol * ap.slope(u[k]) * exterior_.w[k]);
  }

  SeminormBreakdown out;
  double f = 0.0, nr = 0.0, ex = 0.0;
  for (int c = 0; c < chunks; ++c) f += far[static_cast<size_t>(c)];
  for (int c = 0; c < chunks; ++c) nr += near[static_cast<size_t>(c)];
  for (int c = 0; c < chunks; ++c) ex += ext[static_cast<size_t>(c)];
  out.interior = cst * (f + nr);
  out.exterior = cst * ex;
  out.total = out.interior + out.exterior;
  return out;
}

SeminormBreakdown gagliardo_pp(const GridFunction& u, const KernelSpec& k, const NonlocalOptions& opts) {
  const NonlocalOperator op(u.domain(), k, opts);
  return op.seminorm(u.values());
}

double pairing(const GridFunction& u, const GridFunction& v, const KernelSpec& k, const NonlocalOptions& opts) {
  if (!(u.domain() == v.domain())) throw InvalidArgument("pairing: functions live on different grids");
  const NonlocalOperator op(u.domain(), k, opts);
  return op.pairing(u.values(), v.values());
}

std::vector<double> seminorm_gradient(const GridFunction& u, const KernelSpec& k, const NonlocalOptions& opts) {
  const NonlocalOperator op(u.domain(), k, opts);
  std::vector<double> g(u.size());
  op.seminorm_with_gradient(u.values(), g);
  return g;
}

double oracle_gagliardo_pp(const GridFunction& u, const KernelSpec& k, const ExteriorWeights& weights,
                           const NonlocalOptions& opts) {
  k.validate();
  const BoxDomain& dom = u.domain();
  if (!(dom.group() == k.group)) throw InvalidArgument("oracle: group mismatch");
  if (dom.size() > 100000) throw InvalidArgument("oracle: grid too large (limit 1e5 nodes)");
  if (weights.w.size() != dom.size()) throw InvalidArgument("oracle: exterior weights do not match the grid");
  const GroupSpec& g = dom.group();
  const int d = dom.dim();
  const double vol = dom.cell_volume();
  const double e = k.kernel_exponent();
  const bool box = resolve_cell_box(opts.near_rule, g.kind());
  const double radius = opts.near_factor * gauge_cell_size(dom) * (1.0 + 1e-9);
  auto is_near = [&](const GroupPoint& xi, const GroupPoint& xj) {
    if (!box) return dist(g, xi, xj) <= radius;
    const GroupPoint z = compose(g, inverse(g, xj), xi);
    for (int a = 0; a < d; ++a)
      if (std::abs(z[static_cast<size_t>(a)]) > opts.near_factor * dom.spacings()[static_cast<size_t>(a)] * (1.0 + 1e-9))
        return false;
    return true;
  };
  const int m = opts.subcell_points;
  int n_sub = 1;
  for (int a = 0; a < d; ++a) n_sub *= m;

  double total = 0.0;
  for (size_t i = 0; i < dom.size(); ++i) {
    const GroupPoint xi = dom.node(i);
    for (size_t j = 0; j < dom.size(); ++j) {
      const GroupPoint xj = dom.node(j);
      if (!is_near(xi, xj)) {
        total += vol * vol * std::pow(std::abs(u[i] - u[j]), k.p) * std::pow(dist(g, xi, xj), -e);
        continue;
      }
      for (int sidx = 0; sidx < n_sub; ++sidx) {
        GroupPoint y = xj;
        int rem = sidx;
        for (int a = d - 1; a >= 0; --a) {
          const int kk = rem % m;
          rem /= m;
          y[static_cast<size_t>(a)] += ((2.0 * kk + 1.0) / (2.0 * m) - 0.5) * dom.spacings()[static_cast<size_t>(a)];
        }
        total += vol * (vol / n_sub) * std::pow(std::abs(u[i] - u.interpolate(y)), k.p) * std::pow(dist(g, xi, y), -e);
      }
    }
  }
  for (size_t i = 0; i < dom.size(); ++i) total += 2.0 * vol * std::pow(std::abs(u[i]), k.p) * weights.w[i];
  return k.kernel_constant * total;
}

std::vector<double> operator_residual(const NonlocalOperator& op, std::span<const double> u, double q) {
  std::vector<double> g(u.size());
  op.seminorm_with_gradient(u, g);
  const double p = op.kernel().p;
  const double vol = op.domain().cell_volume();
  const AbsPower ap(p), aq(q);
  for (size_t i = 0; i < u.size(); ++i) g[i] = g[i] / (2.0 * p * vol) + ap.slope(u[i]) - aq.slope(u[i]);
  return g;
}

}  // namespace nsg
