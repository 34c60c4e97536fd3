// Command-line driver: solve, constants, verify, sweep.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nsg/checks.hpp"
#include "nsg/config.hpp"
#include "nsg/constants.hpp"
#include "nsg/error.hpp"
#include "nsg/parallel.hpp"
#include "nsg/variational.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace nsg;

namespace {

enum Exit { kOk = 0, kConfig = 1, kNoConvergence = 2, kVerifyFailed = 3 };

struct Common {
  std::string config;
  std::vector<std::string> sets;
  int threads = 0;
  std::string output;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

json load_raw(const Common& c) {
  json raw = read_config_file(c.config);
  for (const auto& s : c.sets) apply_override(raw, s);
  return raw;
}

RunConfig load_config(const Common& c) {
  RunConfig rc = build_run_config(load_raw(c));
  if (!c.output.empty()) {
    rc.output.directory = c.output;
    rc.echo["output"]["directory"] = c.output;
  }
  if (c.threads > 0) set_num_threads(c.threads);
  return rc;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw FormatError("write failed: " + path.string());
}

json run_header(const RunConfig& rc) {
  return json{{"config", rc.echo},
              {"problem", to_json(rc.params)},
              {"domain", domain_to_json(rc.domain)},
              {"threads", num_threads()},
              {"chunk_count", chunk_count()}};
}

void write_convergence_csv(const GroundStateResult& r, const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw FormatError("cannot write " + path.string());
  os << "level,iter,R,grad_norm,weak_residual\n";
  os.precision(17);
  for (const auto& e : r.history)
    os << e.level << ',' << e.iter << ',' << e.R << ',' << e.grad_norm << ',' << e.weak_residual << '\n';
}

SolverOptions with_progress(SolverOptions so) {
  so.progress = [](int level, int iter, double R, double wr) {
    if (iter % 25 == 0) std::fprintf(stderr, "  level %d iter %d R %.10g weak residual %.3e\n", level, iter, R, wr);
  };
  return so;
}

GroundStateResult solve_and_write(const RunConfig& rc, json& report, json& timings) {
  const auto t0 = std::chrono::steady_clock::now();
  GroundStateResult res = solve_ground_state(rc.params, rc.domain, with_progress(rc.solver));
  timings["solve_seconds"] = seconds_since(t0);
  report["ground_state"] = to_json(res);
  const fs::path dir = rc.output.directory;
  if (rc.output.csv) write_convergence_csv(res, dir / "convergence.csv");
  if (rc.output.nsgf && rc.output.dump_phi)
    save(res.phi, dir / "phi.nsgf", json{{"d", res.d}, {"problem", to_json(rc.params)}});
  if (rc.output.csv && rc.output.dump_phi) export_csv(res.phi, dir / "phi.csv");
  std::printf("%s after %d iterations: d = %.12g, weak residual %.3e\n", res.message.c_str(), res.iterations,
              res.d, res.weak_residual);
  const auto& ir = res.identity_residuals;
  std::printf("ratios %.6f (target %.6f), %.6f (target %.6f); r1 %.3e r2 %.3e r3 %.3e\n", ir.ratio1, ir.target1,
              ir.ratio2, ir.target2, ir.r1, ir.r2, ir.r3);
  return res;
}

int cmd_solve(const Common& c) {
  const RunConfig rc = load_config(c);
  fs::create_directories(rc.output.directory);
  json report = run_header(rc);
  json timings;
  const GroundStateResult res = solve_and_write(rc, report, timings);
  if (rc.output.json) {
    write_json(rc.output.directory / "report.json", report);
    write_json(rc.output.directory / "timings.json", timings);
  }
  return res.converged ? kOk : kNoConvergence;
}

int cmd_constants(const Common& c, const std::string& phi_path) {
  const RunConfig rc = load_config(c);
  fs::create_directories(rc.output.directory);
  json report = run_header(rc);
  json timings;
  const EnergyFunctional f(rc.params, rc.domain, rc.solver.nonlocal);
  std::optional<GridFunction> phi;
  double d = 0.0;
  bool converged = true;
  if (phi_path.empty()) {
    GroundStateResult res = solve_and_write(rc, report, timings);
    converged = res.converged;
    d = res.d;
    phi.emplace(std::move(res.phi));
  } else {
    json meta;
    phi.emplace(nsg::load(phi_path, &meta));
    if (!(phi->domain() == rc.domain))
      throw InvalidArgument("phi grid in '" + phi_path + "' does not match the configured domain");
    // The ground state level is the Rayleigh quotient of φ.
    d = f.rayleigh(phi->values());
    report["phi_file"] = phi_path;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const ConstantsReport cr = compute_constants(f, *phi, d, rc.trials);
  timings["constants_seconds"] = seconds_since(t0);
  report["constants"] = to_json(cr);
  if (rc.output.json) {
    write_json(rc.output.directory / "constants.json", report);
    write_json(rc.output.directory / "timings.json", timings);
  }
  if (rc.output.csv) write_trials_csv(cr.trials, rc.output.directory / "trials.csv");
  std::printf("C_GN^-1: route A %.12g, route B %.12g\n", cr.c_gn_inv_routeA, cr.c_gn_inv_routeB);
  std::printf("C_S^-1:  route A %.12g, route B %.12g\n", cr.c_s_inv_routeA, cr.c_s_inv_routeB);
  std::printf("C_S,log %.12g; cross residual %.3e\n", cr.c_s_log, cr.cross_residual);
  return converged ? kOk : kNoConvergence;
}

// Small grid on the configured box used for the quadratic-cost suites.
BoxDomain verify_domain(const RunConfig& rc) {
  const int cap = rc.domain.dim() == 1 ? 64 : 8;
  std::vector<int> pts;
  for (int m : rc.domain.points_per_axis()) pts.push_back(std::min(m, cap));
  return BoxDomain(rc.domain.group(), rc.domain.half_widths(), pts);
}

int cmd_verify(const Common& c, const std::string& suite) {
  const RunConfig rc = load_config(c);
  const uint64_t seed = rc.solver.rng_seed;
  const bool all = suite == "all";
  std::vector<CheckResult> rows;
  const auto add = [&](std::vector<CheckResult> v) { rows.insert(rows.end(), v.begin(), v.end()); };
  if (all || suite == "group") add(check_group_properties(1000, seed));
  if (all || suite == "kernels") {
    const BoxDomain dom = verify_domain(rc);
    rows.push_back(check_oracle(rc.params.kernel, dom, 20, seed, rc.solver.nonlocal));
    const double tol = rc.params.p() == 2.0 ? 1e-5 : 1e-4;
    add(check_gradients(rc.params, dom, 20, tol, seed, rc.solver.nonlocal));
  }
  if (all || suite == "identities") add(check_identities(rc.params, verify_domain(rc), 20, 1e-10, seed, rc.solver.nonlocal));
  if (all || suite == "inequalities") add(check_inequalities(rc.domain, 100, 20, 1e-12, seed));

  bool ok = true;
  json out = json::array();
  std::printf("%-44s %-6s %12s %12s\n", "check", "result", "value", "threshold");
  for (const auto& r : rows) {
    ok = ok && r.passed;
    std::printf("%-44s %-6s %12.3e %s%11.3e\n", r.name.c_str(), r.passed ? "PASS" : "FAIL", r.value,
                r.lower_bound ? ">" : "<", r.threshold);
    if (!r.passed && !r.detail.empty()) std::printf("    %s\n", r.detail.c_str());
    json j = to_json(r);
    j.erase("seconds");
    out.push_back(j);
  }
  if (rc.output.json) {
    fs::create_directories(rc.output.directory);
    json report = run_header(rc);
    report["suite"] = suite;
    report["checks"] = out;
    write_json(rc.output.directory / "verify.json", report);
  }
  return ok ? kOk : kVerifyFailed;
}

int cmd_sweep(const Common& c, const std::string& axis, const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("sweep: --values needs at least one value");
  const json base = load_raw(c);
  RunConfig first = load_config(c);
  fs::create_directories(first.output.directory);
  const fs::path csv = first.output.directory / "sweep.csv";
  std::ofstream os(csv);
  if (!os) throw FormatError("cannot write " + csv.string());
  os.precision(17);
  os << "axis,value,status,converged,iterations,d,weak_residual,r1,r2,r3,c_gn_inv_routeA,c_gn_inv_routeB,"
        "c_s_inv_routeA,c_s_inv_routeB,c_s_log,cross_residual,seconds\n";
  int succeeded = 0;
  for (double v : values) {
    json raw = base;
    if (axis == "q") {
      raw["problem"]["q"] = v;
    } else if (axis == "s") {
      raw["problem"]["s"] = v;
    } else {
      raw["domain"]["points_per_axis"] = static_cast<int>(v);
    }
    os << axis << ',' << v << ',';
    std::optional<RunConfig> rc;
    try {
      rc.emplace(build_run_config(raw));
    } catch (const Error& e) {
      std::printf("%s = %g skipped: %s\n", axis.c_str(), v, e.what());
      os << "skipped,,,,,,,,,,,,,,\n";
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    const GroundStateResult res = solve_ground_state(rc->params, rc->domain, with_progress(rc->solver));
    TrialOptions to = rc->trials;
    to.trials = 0;
    const EnergyFunctional f(rc->params, rc->domain, rc->solver.nonlocal);
    const ConstantsReport cr = compute_constants(f, res.phi, res.d, to);
    const double secs = seconds_since(t0);
    const auto& ir = res.identity_residuals;
    os << "ok," << res.converged << ',' << res.iterations << ',' << res.d << ',' << res.weak_residual << ','
       << ir.r1 << ',' << ir.r2 << ',' << ir.r3 << ',' << cr.c_gn_inv_routeA << ',' << cr.c_gn_inv_routeB << ','
       << cr.c_s_inv_routeA << ',' << cr.c_s_inv_routeB << ',' << cr.c_s_log << ',' << cr.cross_residual << ','
       << secs << '\n';
    os.flush();
    std::printf("%s = %g: d %.10g, r1 %.3e r2 %.3e r3 %.3e (%s)\n", axis.c_str(), v, res.d, ir.r1, ir.r2, ir.r3,
                res.message.c_str());
    ++succeeded;
  }
  return succeeded > 0 ? kOk : kConfig;
}

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Config file (sections of key = value, or JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  sub->add_option("--set", c.sets, "Override a config key: section.key=value")->take_all();
  sub->add_option("--threads", c.threads, "Worker threads (recorded in the report)")->check(CLI::NonNegativeNumber);
  sub->add_option("--output", c.output, "Output directory (overrides output.directory)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fractional p-sublaplacian ground states and best constants"};
  app.require_subcommand(1);
  Common common;

  auto* solve = app.add_subcommand("solve", "Compute the ground state and write report.json");
  add_common(solve, common);

  std::string phi_path;
  auto* constants = app.add_subcommand("constants", "Best constants from a ground state");
  add_common(constants, common);
  constants->add_option("--phi", phi_path, "NSGF ground state (solved when absent)")->check(CLI::ExistingFile);

  std::string suite = "all";
  auto* verify = app.add_subcommand("verify", "Run property suites and print a pass/fail table");
  add_common(verify, common);
  verify->add_option("--suite", suite, "Suite to run")
      ->check(CLI::IsMember({"group", "kernels", "identities", "inequalities", "all"}));

  std::string axis;
  std::vector<double> values;
  auto* sweep = app.add_subcommand("sweep", "Solve over a list of q, s or M values and write sweep.csv");
  add_common(sweep, common);
  sweep->add_option("--axis", axis, "Swept parameter")->required()->check(CLI::IsMember({"q", "s", "M"}));
  sweep->add_option("--values", values, "Values, comma or space separated")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*solve) return cmd_solve(common);
    if (*constants) return cmd_constants(common, phi_path);
    if (*verify) return cmd_verify(common, suite);
    if (*sweep) return cmd_sweep(common, axis, values);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfig;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kConfig;
  }
  return kConfig;
}
