#include "excel/scenarios.hpp"

#include "excel/error.hpp"
#include "excel/iv_repair.hpp"
#include "excel/random.hpp"
#include "excel/replicate.hpp"
#include "excel/resample.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace excel {

namespace {

struct ScenarioName {
  Scenario scenario;
  const char* name;
};

constexpr ScenarioName kScenarioNames[] = {
    {Scenario::NoIvLinear, "NoIvLinear"},
    {Scenario::NoIvLinearHeavyTail, "NoIvLinearHeavyTail"},
    {Scenario::InvalidIv, "InvalidIv"},
    {Scenario::MixtureIllustration, "MixtureIllustration"},
    {Scenario::ConfounderExample, "ConfounderExample"},
    {Scenario::SelectionExample, "SelectionExample"},
    {Scenario::MeasurementErrorExample, "MeasurementErrorExample"},
};

struct MethodName {
  Method method;
  const char* name;
};

constexpr MethodName kMethodNames[] = {
    {Method::OLS, "OLS"},
    {Method::TSLS_all, "TSLS_all"},
    {Method::TSLS_oracle, "TSLS_oracle"},
    {Method::EXCEL, "EXCEL"},
    {Method::EXCEL_bootstrapCI, "EXCEL_bootstrapCI"},
    {Method::IV_repair, "IV_repair"},
    {Method::EXCEL_adaptive_tau, "EXCEL_adaptive_tau"},
};

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

bool linear_confounded(Scenario s) {
  return s == Scenario::NoIvLinear || s == Scenario::NoIvLinearHeavyTail || s == Scenario::ConfounderExample ||
         s == Scenario::InvalidIv;
}

// Confounder composite U'gamma with gamma = (g, ..., g).
double confounder(Sampler& s, const DgpConfig& c, int trials, double p, double g) {
  double total = 0.0;
  for (int j = 0; j < c.d_U; ++j) total += s.binomial(trials, p);
  return g * total;
}

}  // namespace

const char* to_string(Scenario scenario) {
  for (const auto& entry : kScenarioNames)
    if (entry.scenario == scenario) return entry.name;
  return "unknown";
}

Scenario scenario_from_string(const std::string& name) {
  for (const auto& entry : kScenarioNames)
    if (name == entry.name) return entry.scenario;
  throw Error(ErrorCode::InvalidConfig, "unknown scenario '" + name + "'");
}

const char* to_string(Method method) {
  for (const auto& entry : kMethodNames)
    if (entry.method == method) return entry.name;
  return "unknown";
}

Method method_from_string(const std::string& name) {
  for (const auto& entry : kMethodNames)
    if (name == entry.name) return entry.method;
  throw Error(ErrorCode::InvalidConfig, "unknown method '" + name + "'");
}

bool produces_interval(Method method) {
  return method == Method::TSLS_all || method == Method::TSLS_oracle || method == Method::EXCEL_bootstrapCI ||
         method == Method::IV_repair;
}

std::map<std::string, double> scenario_parameters(Scenario scenario, int d_U) {
  const double g = std::sqrt(static_cast<double>(std::max(d_U, 1)));
  std::map<std::string, double> base{{"theta0", 0.4},  {"gamma_u", g},   {"u_trials", 2}, {"u_prob", 0.3},
                                     {"x_confound", 0.2}, {"y_confound", 4.0}, {"sd_x", 1.0}, {"sd_y", 0.5}};
  switch (scenario) {
    case Scenario::NoIvLinear:
    case Scenario::ConfounderExample:
      return base;
    case Scenario::NoIvLinearHeavyTail:
      base.erase("sd_y");
      base["t_df"] = 5;
      base["t_scale"] = 0.5;
      return base;
    case Scenario::InvalidIv:
      base.insert({{"z_prob", 0.5},
                   {"z1_exposure", 2.0},
                   {"z2_exposure", 2.0},
                   {"z3_exposure", 2.0},
                   {"z1_direct", 0.0},
                   {"z2_direct", 2.0},
                   {"z3_direct", 2.0}});
      return base;
    case Scenario::MixtureIllustration:
      return {{"f0_slope", 0.5}, {"eta_x_sd", 3.0}, {"eps_shift", 3.0}, {"eps_halfwidth", 3.0}};
    case Scenario::SelectionExample:
      return {{"theta0", 0.4}, {"sd_eps", 0.5}, {"selection_floor", 0.1}};
    case Scenario::MeasurementErrorExample:
      return {{"theta0", 0.4}, {"u_sd", 0.5}, {"v_sd", 1.0}};
  }
  return {};
}

void DgpConfig::validate() const {
  if (n < 1) throw Error(ErrorCode::InvalidConfig, "n must be >= 1");
  if (d_U < 1) throw Error(ErrorCode::InvalidConfig, "d_U must be >= 1");
  const auto known = scenario_parameters(scenario, d_U);
  for (const auto& [key, value] : overrides) {
    if (!known.count(key))
      throw Error(ErrorCode::UnknownOverride, "'" + key + "' is not a parameter of " + std::string(to_string(scenario)));
    if (!std::isfinite(value)) throw Error(ErrorCode::InvalidConfig, "override '" + key + "' is not finite");
  }
  if (scenario == Scenario::SelectionExample) {
    const double c = param("selection_floor");
    if (!(c > 0.0 && c <= 0.5)) throw Error(ErrorCode::InvalidConfig, "selection_floor must lie in (0, 0.5]");
  }
  if (scenario == Scenario::NoIvLinearHeavyTail && param("t_df") < 1)
    throw Error(ErrorCode::InvalidConfig, "t_df must be >= 1");
}

double DgpConfig::param(const std::string& key) const {
  if (auto it = overrides.find(key); it != overrides.end()) return it->second;
  const auto defaults = scenario_parameters(scenario, d_U);
  if (auto it = defaults.find(key); it != defaults.end()) return it->second;
  throw Error(ErrorCode::UnknownOverride, "'" + key + "' is not a parameter of " + std::string(to_string(scenario)));
}

GeneratedData generate(const DgpConfig& c) {
  c.validate();
  Sampler s(Philox::stream(c.seed, {stream_tag::kGenerate, static_cast<std::uint64_t>(c.scenario)}));
  const auto n = static_cast<Eigen::Index>(c.n);
  GeneratedData out;
  Dataset& data = out.data;
  data.y.resize(n);
  out.truth.structural.resize(n);
  if (linear_confounded(c.scenario) || c.scenario == Scenario::MixtureIllustration) out.truth.confounder.resize(n);

  if (linear_confounded(c.scenario)) {
    const double theta = c.param("theta0"), g = c.param("gamma_u"), p = c.param("u_prob");
    const int trials = static_cast<int>(c.param("u_trials"));
    const double ax = c.param("x_confound"), ay = c.param("y_confound"), sd_x = c.param("sd_x");
    const bool heavy = c.scenario == Scenario::NoIvLinearHeavyTail;
    const bool iv = c.scenario == Scenario::InvalidIv;
    const double sd_y = heavy ? 0.0 : c.param("sd_y");
    const int df = heavy ? static_cast<int>(c.param("t_df")) : 0;
    const double t_scale = heavy ? c.param("t_scale") : 0.0;
    double zx[3] = {0, 0, 0}, zy[3] = {0, 0, 0}, zp = 0.0;
    if (iv) {
      zp = c.param("z_prob");
      for (int j = 0; j < 3; ++j) {
        zx[j] = c.param("z" + std::to_string(j + 1) + "_exposure");
        zy[j] = c.param("z" + std::to_string(j + 1) + "_direct");
      }
      data.Z = Matrix(n, 3);
      data.z_names = {"z1", "z2", "z3"};
    }
    data.X.resize(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u = confounder(s, c, trials, p, g);
      double x = ax * u, direct = 0.0;
      if (iv) {
        for (int j = 0; j < 3; ++j) {
          const double z = s.bernoulli(zp) ? 1.0 : 0.0;
          (*data.Z)(i, j) = z;
          x += zx[j] * z;
          direct += zy[j] * z;
        }
      }
      x += sd_x * s.normal();
      const double eps = heavy ? t_scale * s.student_t(df) : sd_y * s.normal();
      data.X(i, 0) = x;
      out.truth.structural[i] = theta * x;
      out.truth.confounder[i] = u;
      data.y[i] = theta * x + direct + ay * u + eps;
    }
    out.truth.theta0 = theta;
    data.x_names = {"x"};
    return out;
  }

  switch (c.scenario) {
    case Scenario::MixtureIllustration: {
      const double slope = c.param("f0_slope"), sd = c.param("eta_x_sd"), shift = c.param("eps_shift"),
                   half = c.param("eps_halfwidth");
      data.X.resize(n, 1);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double u = s.bernoulli(0.5) ? 1.0 : -1.0;
        const double x = u + sd * s.normal();
        const double eps = shift * u + half * (2.0 * s.uniform() - 1.0);
        data.X(i, 0) = x;
        out.truth.structural[i] = slope * x;
        out.truth.confounder[i] = u;
        data.y[i] = slope * x + eps;
      }
      out.truth.theta0 = slope;
      data.x_names = {"x"};
      return out;
    }
    case Scenario::SelectionExample: {
      const double theta = c.param("theta0"), sd = c.param("sd_eps"), floor = c.param("selection_floor");
      data.X.resize(n, 1);
      for (Eigen::Index i = 0; i < n;) {
        const double x = s.normal();
        const double y = theta * x + sd * s.normal();
        if (s.uniform() >= selection_probability(x, y, floor)) continue;
        data.X(i, 0) = x;
        data.y[i] = y;
        out.truth.structural[i] = theta * x;
        ++i;
      }
      out.truth.theta0 = theta;
      data.x_names = {"x"};
      return out;
    }
    case Scenario::MeasurementErrorExample: {
      const double theta = c.param("theta0"), u_sd = c.param("u_sd"), v_sd = c.param("v_sd");
      data.X.resize(n, c.d_U);
      for (Eigen::Index i = 0; i < n; ++i) {
        double signal = 0.0, observed = 0.0;
        for (int j = 0; j < c.d_U; ++j) {
          const double w = s.uniform();
          const double x = w + u_sd * s.normal();
          data.X(i, j) = x;
          signal += theta * w;
          observed += theta * x;
        }
        out.truth.structural[i] = observed;
        data.y[i] = signal + v_sd * s.normal();
      }
      out.truth.theta0 = theta;
      for (int j = 0; j < c.d_U; ++j) data.x_names.push_back("x" + std::to_string(j + 1));
      return out;
    }
    default:
      break;
  }
  throw Error(ErrorCode::InvalidConfig, "unhandled scenario");
}

double selection_probability(double x, double y, double floor) {
  return std::clamp(floor + (1.0 - 2.0 * floor) * logistic(x + y), floor, 1.0);
}

double analytic_ols_bias(int d_U) {
  const double var_u = 2 * 0.3 * 0.7;
  const double var_s = static_cast<double>(d_U) * d_U * var_u;  // gamma entries sqrt(d_U)
  return 0.2 * 4.0 * var_s / (0.04 * var_s + 1.0);
}

const MethodRow& ExperimentReport::row(Method method) const {
  for (const auto& r : rows)
    if (r.method == method) return r;
  throw Error(ErrorCode::InvalidArgument, std::string("no row for method ") + to_string(method));
}

namespace {

struct Outcome {
  double estimate = std::numeric_limits<double>::quiet_NaN();
  std::optional<ConfidenceSet> set;
  std::optional<ConfidenceSet> excel_only;  // IV repair: the EXCEL interval at level 1 - alpha
  std::map<std::string, double> extra;
};

TailSide choose_tail(const ExperimentOptions& options, const Matrix& X, const Vector& y, double tau) {
  if (options.tail == TailChoice::Upper) return TailSide::upper();
  if (options.tail == TailChoice::Lower) return TailSide::lower();
  Dataset d;
  d.X = X;
  d.y = y;
  const std::vector<double> x0(static_cast<std::size_t>(X.cols()), 0.0);
  return select_tail(d, tau, BasisSpec::identity(static_cast<int>(X.cols())), x0);
}

Outcome run_method(Method method, const Dataset& data, const ExperimentOptions& options, double alpha,
                   std::uint64_t seed, bool iv, double tau, const TailSide& side) {
  Outcome out;
  const auto n = data.n();
  switch (method) {
    case Method::OLS: {
      Matrix D(n, 2 + (iv ? data.Z->cols() : 0));
      D.col(0).setOnes();
      D.col(1) = data.X.col(0);
      if (iv) D.rightCols(data.Z->cols()) = *data.Z;
      out.estimate = fit_ols(DesignMatrix(D), data.y)[1];
      break;
    }
    case Method::TSLS_all:
    case Method::TSLS_oracle: {
      TslsFit fit = method == Method::TSLS_all ? fit_tsls(data.y, Vector(data.X.col(0)), *data.Z, Matrix(n, 0))
                                               : per_iv_tsls(data, 0);
      out.estimate = fit.theta;
      out.set = wald_interval(fit, alpha);
      break;
    }
    case Method::EXCEL: {
      std::optional<ResidualizeSpec> pre;
      if (iv) pre = ResidualizeSpec{};
      out.estimate = linear_estimate(data, tau, side, pre).theta[0];
      break;
    }
    case Method::EXCEL_bootstrapCI: {
      std::optional<ResidualizeSpec> pre;
      if (iv) pre = ResidualizeSpec{};
      const auto boot = bootstrap_excel(data, tau, side, alpha, options.B, seed, pre);
      out.estimate = boot.center[0];
      out.set = to_confidence_interval(boot, 0);
      break;
    }
    case Method::IV_repair: {
      IvRepairConfig config;
      config.alpha = alpha;
      if (!options.lambda_grid.empty()) config.lambda_grid = options.lambda_grid;
      config.tau_n = tau;
      config.B = options.B;
      config.seed = seed;
      config.side = side;
      const auto result = union_confidence_set(data, config);
      if (result.fallback) {
        out.estimate = result.excel_theta;
      } else {
        double total = 0.0;
        for (int j : result.selected) total += result.tsls[static_cast<std::size_t>(j)].theta;
        out.estimate = total / static_cast<double>(result.selected.size());
      }
      out.set = result.final_set;
      out.extra["first_iv_selected"] =
          std::find(result.selected.begin(), result.selected.end(), 0) != result.selected.end() ? 1.0 : 0.0;
      out.extra["fallback"] = result.fallback ? 1.0 : 0.0;
      out.extra["chosen_lambda"] = result.fallback ? 0.0 : result.chosen_lambda;
      out.excel_only = result.excel_only_interval;
      break;
    }
    case Method::EXCEL_adaptive_tau: {
      const double scale = 0.01 / std::pow(static_cast<double>(n), 0.25);
      std::vector<double> candidates;
      for (int k = 1; k <= options.tau_candidates; ++k) candidates.push_back(scale * k);
      TauSelectionOptions tso;
      tso.allow_degenerate = options.allow_degenerate_tau;
      if (iv) throw Error(ErrorCode::IncompatibleMethodScenario, "adaptive tau is implemented for the no-IV designs");
      const std::vector<double> x{1.0}, x0{0.0};
      const auto sel =
          select_tau(data, candidates, options.tau_B, x, x0, BasisSpec::identity(1), side, seed, tso);
      ExcelOptions eo;
      eo.fit.allow_degenerate_quantile = options.allow_degenerate_tau;
      out.estimate = excel_linear(data, sel.chosen, side, eo).theta[0];
      out.extra["chosen_tau"] = sel.chosen;
      break;
    }
  }
  return out;
}

}  // namespace

ExperimentReport run_experiment(const DgpConfig& dgp, const std::vector<Method>& methods, std::size_t replications,
                                double alpha, std::uint64_t seed, const ExperimentOptions& options) {
  dgp.validate();
  if (replications < 1) throw Error(ErrorCode::InvalidArgument, "replications must be >= 1");
  if (!(alpha > 0.0 && alpha <= 0.5)) throw Error(ErrorCode::OutOfRange, "alpha must lie in (0, 0.5]");
  if (methods.empty()) throw Error(ErrorCode::InvalidArgument, "no methods requested");
  const bool iv = dgp.scenario == Scenario::InvalidIv;
  for (Method m : methods) {
    const bool needs_iv = m == Method::TSLS_all || m == Method::TSLS_oracle || m == Method::IV_repair;
    if (needs_iv && !iv)
      throw Error(ErrorCode::IncompatibleMethodScenario,
                  std::string(to_string(m)) + " requires the InvalidIv scenario");
    if (m == Method::EXCEL_adaptive_tau && iv)
      throw Error(ErrorCode::IncompatibleMethodScenario, "EXCEL_adaptive_tau is not available for InvalidIv");
  }
  if (dgp.scenario == Scenario::MeasurementErrorExample && dgp.d_U != 1)
    throw Error(ErrorCode::IncompatibleMethodScenario, "experiments use a scalar exposure");

  const auto start = std::chrono::steady_clock::now();
  std::vector<std::vector<std::optional<Outcome>>> results(replications, std::vector<std::optional<Outcome>>(methods.size()));
  std::vector<double> truths(replications);

  parallel_for(replications, options.threads, [&](std::size_t r) {
    DgpConfig config = dgp;
    config.seed = mix64(seed ^ mix64(stream_tag::kReplication + r));
    const auto generated = generate(config);
    truths[r] = generated.truth.theta0;
    const Dataset& data = generated.data;
    const double tau = options.tau > 0.0 ? options.tau : default_tau(dgp.n);
    TailSide side;
    try {
      if (iv) {
        const auto view = residualize_on_instruments(data);
        side = choose_tail(options, view.X, view.y, tau);
      } else {
        side = choose_tail(options, data.X, data.y, tau);
      }
    } catch (const Error& e) {
      if (category_of(e.code()) != ErrorCategory::Numerical) throw;
      return;  // every method counts this replicate as failed
    }
    for (std::size_t k = 0; k < methods.size(); ++k) {
      try {
        results[r][k] = run_method(methods[k], data, options, alpha, mix64(config.seed + k + 1), iv, tau, side);
      } catch (const Error& e) {
        if (category_of(e.code()) != ErrorCategory::Numerical) throw;
      }
    }
  });

  ExperimentReport report;
  report.dgp = dgp;
  report.methods = methods;
  report.replications = replications;
  report.alpha = alpha;
  report.seed = seed;
  report.options = options;
  for (std::size_t k = 0; k < methods.size(); ++k) {
    MethodRow row;
    row.method = methods[k];
    double sum = 0.0, sq = 0.0, covered = 0.0, length = 0.0;
    std::map<std::string, double> extra;
    for (std::size_t r = 0; r < replications; ++r) {
      const auto& o = results[r][k];
      if (!o) {
        ++row.failures;
        row.estimates.push_back(std::numeric_limits<double>::quiet_NaN());
        continue;
      }
      ++row.replications;
      row.estimates.push_back(o->estimate);
      const double err = o->estimate - truths[r];
      sum += err;
      sq += err * err;
      if (o->set) {
        covered += o->set->contains(truths[r]) ? 1.0 : 0.0;
        length += o->set->total_length();
      }
      if (o->excel_only) {
        extra["excel_only_coverage"] += o->excel_only->contains(truths[r]) ? 1.0 : 0.0;
        extra["excel_only_length"] += o->excel_only->total_length();
      }
      for (const auto& [key, value] : o->extra) extra[key] += value;
    }
    if (row.replications == 0)
      throw Error(ErrorCode::SolverFailure, std::string("every replicate failed for ") + to_string(methods[k]));
    const auto m = static_cast<double>(row.replications);
    row.bias = sum / m;
    row.mse = sq / m;
    if (produces_interval(methods[k])) {
      row.coverage = covered / m;
      row.mean_length = length / m;
    }
    for (const auto& [key, value] : extra) row.extra[key] = value / m;
    report.rows.push_back(std::move(row));
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace excel
