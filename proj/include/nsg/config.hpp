#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nsg/constants.hpp"
#include "nsg/grid.hpp"
#include "nsg/variational.hpp"

namespace nsg {

/// Parses the declarative run format into JSON with one object per section:
///
///   [section]
///   key = 1.5            # numbers, true/false, "strings", [1, 2] arrays
///
/// Throws ConfigError with the line number on malformed input.
nlohmann::json parse_config_text(const std::string& text);

/// Reads a config file: JSON when the extension is .json or the first
/// non-blank character is '{', otherwise the sectioned key = value format.
nlohmann::json read_config_file(const std::filesystem::path& path);

/// Applies "section.key=value" (value parsed like the file format).
void apply_override(nlohmann::json& config, const std::string& assignment);

struct OutputConfig {
  std::filesystem::path directory = "nsg_out";
  bool json = true;
  bool csv = true;
  bool nsgf = true;
  bool dump_phi = true;
};

struct RunConfig {
  ProblemParams params;
  BoxDomain domain;
  SolverOptions solver;
  TrialOptions trials;
  OutputConfig output;
  nlohmann::json echo;  // the validated input, defaults filled in
};

/// Validates every section and key (unknown keys are rejected) and the
/// problem constraints. Throws ConfigError naming the key or constraint.
RunConfig build_run_config(const nlohmann::json& config);

/// Sections and keys understood by build_run_config.
std::vector<std::pair<std::string, std::vector<std::string>>> config_schema();

}  // namespace nsg
