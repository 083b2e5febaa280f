#pragma once

#include "excel/basis.hpp"
#include "excel/error.hpp"

#include "json.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace excel::app {

inline constexpr int kSchemaVersion = 1;

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"fit",         "effect",    "select-tau", "select-tail",
                                              "bootstrap-ci", "iv-repair", "simulate",   "aggregate"};
  return names;
}

struct SimulateConfig {
  std::string scenario = "NoIvLinear";
  std::vector<std::size_t> n{1000};
  std::vector<int> d_U{1};
  std::size_t replications = 100;
  std::vector<std::string> methods;  // empty selects the scenario's defaults
  std::map<std::string, double> overrides;
};

// Every key of the config file; flags override the file.
struct RunConfig {
  int schema_version = kSchemaVersion;
  std::string data;
  std::string y = "y";
  std::vector<std::string> x{"x"};
  std::vector<std::string> z;
  std::string cluster;
  std::string strata;

  std::optional<double> tau;  // default 0.01 / n^{1/4}
  double alpha = 0.05;
  std::size_t bootstrap = 500;
  std::uint64_t seed = 0;
  std::string tail = "auto";
  std::string basis = "linear";
  std::vector<double> lambda_grid;  // empty selects 0.05, ..., 0.95
  int threads = 1;

  std::vector<double> x_point;   // effect and select-tau evaluation point
  std::vector<double> x0_point;  // reference point, zeros by default
  std::vector<double> tau_candidates;  // empty: 0.01 k / n^{1/4}, k = 1..tau_count
  int tau_count = 5;
  std::size_t tau_bootstrap = 200;
  bool allow_degenerate = false;
  int num_grid = 10;
  bool residualize_on_z = false;
  std::string centering = "grand_mean";

  std::string output;
  std::string plot;
  std::string aggregate_output;

  SimulateConfig simulate;
};

// Rejects unknown keys and wrong types with InvalidConfig.
RunConfig parse_config(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const RunConfig& config);

// linear | poly:K | spline:D | spline:D,K  (D degree, K interior knots per dimension)
BasisSpec parse_basis(const std::string& text, int input_dim);
// Object form {"kind": ..., "degree": ..., "knots_per_dim": ...} to the text form.
std::string basis_text(const nlohmann::json& j);

// config 2, data 3, numerical 4.
int exit_code(ErrorCategory category);

// Runs one command line (program name excluded). stdout receives only the
// report path; progress and diagnostics go to err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace excel::app
