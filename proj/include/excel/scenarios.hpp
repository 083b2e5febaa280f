#pragma once

#include "excel/dataset.hpp"
#include "excel/excel.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace excel {

enum class Scenario {
  NoIvLinear,
  NoIvLinearHeavyTail,
  InvalidIv,
  MixtureIllustration,
  ConfounderExample,
  SelectionExample,
  MeasurementErrorExample,
};

const char* to_string(Scenario scenario);
Scenario scenario_from_string(const std::string& name);  // InvalidConfig on unknown names

struct DgpConfig {
  Scenario scenario = Scenario::NoIvLinear;
  std::size_t n = 1000;
  int d_U = 1;
  std::uint64_t seed = 0;
  std::map<std::string, double> overrides;

  void validate() const;
  // Override if present, else the documented default.
  double param(const std::string& key) const;
};

// Documented parameters and their defaults for a scenario (d_U-dependent
// defaults are resolved for the given d_U).
std::map<std::string, double> scenario_parameters(Scenario scenario, int d_U);

struct GroundTruth {
  double theta0 = 0.0;     // scalar causal slope (or f0(1) - f0(0) for the mixture)
  Vector structural;       // noiseless f0(X_i)
  Vector confounder;       // U_i' gamma_U, or the mixture sign U_i; empty for the other examples
};

struct GeneratedData {
  Dataset data;
  GroundTruth truth;
};

GeneratedData generate(const DgpConfig& config);

enum class Method { OLS, TSLS_all, TSLS_oracle, EXCEL, EXCEL_bootstrapCI, IV_repair, EXCEL_adaptive_tau };
const char* to_string(Method method);
Method method_from_string(const std::string& name);
bool produces_interval(Method method);

enum class TailChoice { Auto, Upper, Lower };

struct ExperimentOptions {
  TailChoice tail = TailChoice::Auto;
  double tau = 0.0;             // 0 selects default_tau(n)
  std::size_t B = 500;          // bootstrap replicates for interval methods
  std::size_t tau_B = 200;      // bootstrap replicates inside tau selection
  int tau_candidates = 5;       // candidates 0.01 k / n^{1/4}, k = 1..tau_candidates
  bool allow_degenerate_tau = true;
  std::vector<double> lambda_grid;  // empty selects the default grid
  int threads = 1;              // replicate-level workers
};

struct MethodRow {
  Method method = Method::EXCEL;
  double bias = 0.0;
  double mse = 0.0;
  std::optional<double> coverage;
  std::optional<double> mean_length;
  std::size_t replications = 0;  // successful replicates
  std::size_t failures = 0;
  std::vector<double> estimates;  // per replicate, NaN where failed
  std::map<std::string, double> extra;
};

struct ExperimentReport {
  DgpConfig dgp;
  std::vector<Method> methods;
  std::size_t replications = 0;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  ExperimentOptions options;
  std::vector<MethodRow> rows;
  double wall_seconds = 0.0;

  const MethodRow& row(Method method) const;
};

ExperimentReport run_experiment(const DgpConfig& dgp, const std::vector<Method>& methods, std::size_t replications,
                                double alpha, std::uint64_t seed, const ExperimentOptions& options = {});

// Selection example: c + (1 - 2c) logistic(x + y), always inside [c, 1].
double selection_probability(double x, double y, double floor);

// OLS bias of the slope in the no-IV design with the printed gamma_U.
double analytic_ols_bias(int d_U);

}  // namespace excel
