#include "nsg/config.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>

#include "nsg/error.hpp"

namespace nsg {

using json = nlohmann::json;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Drops a trailing # comment that is not inside a string.
std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

json parse_value(const std::string& text, const std::string& where) {
  try {
    return json::parse(text);
  } catch (const json::parse_error&) {
    throw ConfigError(where + ": cannot parse value '" + text + "' (strings need double quotes)");
  }
}

const std::vector<std::pair<std::string, std::vector<std::string>>>& schema() {
  static const std::vector<std::pair<std::string, std::vector<std::string>>> s{
      {"group", {"kind", "dim"}},
      {"problem", {"s", "p", "q", "kernel_constant", "allow_borderline"}},
      {"domain", {"half_widths", "points_per_axis", "shell_factor"}},
      {"solver",
       {"max_iter", "tol_rel_R", "tol_grad", "armijo_c", "armijo_shrink", "init", "init_file", "init_scale",
        "init_noise", "continuation_levels", "rng_seed", "lbfgs_memory", "near_factor", "near_rule",
        "subcell_points", "exterior_rel_tol", "exterior_max_refinements", "cache_dir"}},
      {"constants", {"trials", "seed", "max_bumps", "min_width", "max_width", "center_fraction"}},
      {"output", {"directory", "formats", "dump_phi"}},
  };
  return s;
}

class Reader {
 public:
  Reader(const json& cfg, std::string section) : section_(std::move(section)) {
    if (cfg.contains(section_)) {
      obj_ = cfg.at(section_);
      if (!obj_.is_object()) throw ConfigError(section_ + ": must be a section");
    } else {
      obj_ = json::object();
    }
  }

  bool has(const std::string& k) const { return obj_.contains(k); }
  std::string key(const std::string& k) const { return section_ + "." + k; }

  double num(const std::string& k, double def) {
    if (!has(k)) return record(k, def);
    const json& v = obj_.at(k);
    if (!v.is_number()) throw ConfigError(key(k) + ": expected a number");
    return record(k, v.get<double>());
  }
  double num(const std::string& k) {
    if (!has(k)) throw ConfigError(key(k) + ": required key is missing");
    return num(k, 0.0);
  }
  int integer(const std::string& k, int def) {
    if (!has(k)) return record(k, def);
    const json& v = obj_.at(k);
    if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(key(k) + ": expected an integer");
    return record(k, v.get<int>());
  }
  bool boolean(const std::string& k, bool def) {
    if (!has(k)) return record(k, def);
    const json& v = obj_.at(k);
    if (!v.is_boolean()) throw ConfigError(key(k) + ": expected true or false");
    return record(k, v.get<bool>());
  }
  std::string str(const std::string& k, const std::string& def) {
    if (!has(k)) return record(k, def);
    const json& v = obj_.at(k);
    if (!v.is_string()) throw ConfigError(key(k) + ": expected a string");
    return record(k, v.get<std::string>());
  }
  json raw(const std::string& k) const { return has(k) ? obj_.at(k) : json(); }

  json echo;

 private:
  template <class T>
  T record(const std::string& k, T v) {
    echo[k] = v;
    return v;
  }
  std::string section_;
  json obj_;
};

template <class T>
std::vector<T> per_axis(const json& v, int dim, const std::string& key) {
  std::vector<T> out;
  if (v.is_number()) {
    out.assign(static_cast<size_t>(dim), v.get<T>());
  } else if (v.is_array()) {
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(key + ": entries must be numbers");
      out.push_back(e.get<T>());
    }
  } else {
    throw ConfigError(key + ": expected a number or an array");
  }
  if (static_cast<int>(out.size()) != dim)
    throw ConfigError(key + ": expected " + std::to_string(dim) + " entries, got " + std::to_string(out.size()));
  return out;
}

}  // namespace

json parse_config_text(const std::string& text) {
  json out = json::object();
  std::string section;
  std::istringstream is(text);
  std::string line;
  int no = 0;
  while (std::getline(is, line)) {
    ++no;
    const std::string t = trim(strip_comment(line));
    if (t.empty()) continue;
    const std::string where = "line " + std::to_string(no);
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError(where + ": unterminated section header");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      if (out.contains(section)) throw ConfigError(where + ": section [" + section + "] appears twice");
      out[section] = json::object();
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
    const std::string k = trim(t.substr(0, eq));
    if (k.empty()) throw ConfigError(where + ": missing key");
    if (section.empty()) throw ConfigError(where + ": key '" + k + "' outside any section");
    if (out[section].contains(k)) throw ConfigError(where + ": duplicate key " + section + "." + k);
    out[section][k] = parse_value(trim(t.substr(eq + 1)), where);
  }
  return out;
}

json read_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  const std::string text = ss.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (path.extension() == ".json" || (first != std::string::npos && text[first] == '{')) {
    try {
      return json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(path.string() + ": invalid JSON: " + e.what());
    }
  }
  return parse_config_text(text);
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
  const std::string lhs = trim(assignment.substr(0, eq));
  const auto dot = lhs.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == lhs.size())
    throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
  const std::string section = lhs.substr(0, dot), key = lhs.substr(dot + 1);
  const std::string rhs = trim(assignment.substr(eq + 1));
  json v;
  try {
    v = json::parse(rhs);
  } catch (const json::parse_error&) {
    v = rhs;  // bare words are strings on the command line
  }
  config[section][key] = v;
}

std::vector<std::pair<std::string, std::vector<std::string>>> config_schema() { return schema(); }

RunConfig build_run_config(const json& config) {
  if (!config.is_object()) throw ConfigError("config: expected sections at the top level");
  for (const auto& [section, body] : config.items()) {
    const auto& sch = schema();
    const auto it = std::find_if(sch.begin(), sch.end(), [&](const auto& e) { return e.first == section; });
    if (it == sch.end()) throw ConfigError("unknown section [" + section + "]");
    if (!body.is_object()) throw ConfigError(section + ": must be a section");
    for (const auto& [k, v] : body.items())
      if (std::find(it->second.begin(), it->second.end(), k) == it->second.end())
        throw ConfigError("unknown key " + section + "." + k);
  }

  json echo;
  Reader g(config, "group");
  const std::string kind = g.str("kind", "euclidean");
  std::optional<GroupSpec> group;
  try {
    if (kind == "euclidean") {
      group = GroupSpec::euclidean(g.integer("dim", 1));
    } else if (kind == "heisenberg1") {
      if (g.has("dim") && g.integer("dim", 3) != 3) throw ConfigError("group.dim: heisenberg1 has dimension 3");
      group = GroupSpec::heisenberg1();
    } else {
      throw ConfigError("group.kind: expected \"euclidean\" or \"heisenberg1\", got \"" + kind + "\"");
    }
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("group.dim: ") + e.what());
  }
  echo["group"] = g.echo;
  const int dim = group->dim();

  Reader p(config, "problem");
  ProblemParams params{KernelSpec{*group, p.num("s"), p.num("p"), p.num("kernel_constant", 1.0)}, p.num("q")};
  params.allow_borderline = p.boolean("allow_borderline", false);
  try {
    params.kernel.validate();
    params.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  echo["problem"] = p.echo;

  Reader d(config, "domain");
  if (!d.has("half_widths")) throw ConfigError("domain.half_widths: required key is missing");
  if (!d.has("points_per_axis")) throw ConfigError("domain.points_per_axis: required key is missing");
  const auto hw = per_axis<double>(d.raw("half_widths"), dim, "domain.half_widths");
  const auto pts = per_axis<int>(d.raw("points_per_axis"), dim, "domain.points_per_axis");
  d.echo["half_widths"] = hw;
  d.echo["points_per_axis"] = pts;
  std::optional<BoxDomain> domain;
  try {
    domain.emplace(*group, hw, pts);
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("domain: ") + e.what());
  }

  SolverOptions so;
  so.nonlocal.exterior.shell_factor = d.num("shell_factor", so.nonlocal.exterior.shell_factor);
  echo["domain"] = d.echo;

  Reader s(config, "solver");
  so.max_iter = s.integer("max_iter", so.max_iter);
  so.tol_rel_R = s.num("tol_rel_R", so.tol_rel_R);
  so.tol_grad = s.num("tol_grad", so.tol_grad);
  so.armijo_c = s.num("armijo_c", so.armijo_c);
  so.armijo_shrink = s.num("armijo_shrink", so.armijo_shrink);
  const std::string init = s.str("init", "gauge_bump");
  if (init == "gauge_bump") {
    so.init = InitKind::GaugeBump;
  } else if (init == "gaussian") {
    so.init = InitKind::Gaussian;
  } else if (init == "file") {
    so.init = InitKind::File;
  } else {
    throw ConfigError("solver.init: expected \"gauge_bump\", \"gaussian\" or \"file\", got \"" + init + "\"");
  }
  so.init_file = s.str("init_file", "");
  so.init_scale = s.num("init_scale", so.init_scale);
  so.init_noise = s.num("init_noise", so.init_noise);
  so.continuation_levels = s.integer("continuation_levels", so.continuation_levels);
  so.rng_seed = static_cast<uint64_t>(s.integer("rng_seed", static_cast<int>(so.rng_seed)));
  so.lbfgs_memory = s.integer("lbfgs_memory", so.lbfgs_memory);
  so.nonlocal.near_factor = s.num("near_factor", so.nonlocal.near_factor);
  const std::string rule = s.str("near_rule", "auto");
  if (rule == "auto") {
    so.nonlocal.near_rule = NearRule::Auto;
  } else if (rule == "gauge_ball") {
    so.nonlocal.near_rule = NearRule::GaugeBall;
  } else if (rule == "cell_box") {
    so.nonlocal.near_rule = NearRule::CellBox;
  } else {
    throw ConfigError("solver.near_rule: expected \"auto\", \"gauge_ball\" or \"cell_box\", got \"" + rule + "\"");
  }
  so.nonlocal.subcell_points = s.integer("subcell_points", so.nonlocal.subcell_points);
  so.nonlocal.exterior.rel_tol = s.num("exterior_rel_tol", so.nonlocal.exterior.rel_tol);
  so.nonlocal.exterior.max_refinements = s.integer("exterior_max_refinements", so.nonlocal.exterior.max_refinements);
  so.cache_dir = s.str("cache_dir", "");
  try {
    so.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (!(so.nonlocal.near_factor > 0.0)) throw ConfigError("solver.near_factor: must be positive");
  if (so.nonlocal.subcell_points < 1) throw ConfigError("solver.subcell_points: must be >= 1");
  if (!(so.nonlocal.exterior.shell_factor > 1.0)) throw ConfigError("domain.shell_factor: must exceed 1");
  echo["solver"] = s.echo;

  Reader c(config, "constants");
  TrialOptions to;
  to.trials = c.integer("trials", to.trials);
  to.seed = static_cast<uint64_t>(c.integer("seed", static_cast<int>(to.seed)));
  to.max_bumps = c.integer("max_bumps", to.max_bumps);
  to.min_width = c.num("min_width", to.min_width);
  to.max_width = c.num("max_width", to.max_width);
  to.center_fraction = c.num("center_fraction", to.center_fraction);
  if (to.trials < 0) throw ConfigError("constants.trials: must be >= 0");
  if (to.max_bumps < 1) throw ConfigError("constants.max_bumps: must be >= 1");
  if (!(to.min_width > 0.0 && to.max_width >= to.min_width))
    throw ConfigError("constants: need 0 < min_width <= max_width");
  echo["constants"] = c.echo;

  Reader o(config, "output");
  OutputConfig out;
  out.directory = o.str("directory", out.directory.string());
  out.dump_phi = o.boolean("dump_phi", out.dump_phi);
  if (o.has("formats")) {
    const json f = o.raw("formats");
    if (!f.is_array()) throw ConfigError("output.formats: expected an array of strings");
    out.json = out.csv = out.nsgf = false;
    for (const auto& e : f) {
      const std::string v = e.is_string() ? e.get<std::string>() : "";
      if (v == "json") {
        out.json = true;
      } else if (v == "csv") {
        out.csv = true;
      } else if (v == "nsgf") {
        out.nsgf = true;
      } else {
        throw ConfigError("output.formats: unknown format " + e.dump());
      }
    }
  }
  o.echo["formats"] = json::array();
  if (out.json) o.echo["formats"].push_back("json");
  if (out.csv) o.echo["formats"].push_back("csv");
  if (out.nsgf) o.echo["formats"].push_back("nsgf");
  echo["output"] = o.echo;

  return RunConfig{params, *domain, so, to, out, echo};
}

}  // namespace nsg
