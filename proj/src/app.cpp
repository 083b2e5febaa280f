#include "excel/app.hpp"

#include "excel/excel.hpp"
#include "excel/io.hpp"
#include "excel/iv_repair.hpp"
#include "excel/resample.hpp"
#include "excel/scenarios.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

namespace excel::app {

using nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); }

template <class T>
T take(const json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    config_error("config key '" + key + "' has the wrong type");
  }
}

std::size_t take_count(const json& v, const std::string& key) {
  if (!v.is_number_unsigned()) config_error("config key '" + key + "' must be a non-negative integer");
  return v.get<std::size_t>();
}

int take_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) config_error("config key '" + key + "' must be an integer");
  return v.get<int>();
}

double take_real(const json& v, const std::string& key) {
  if (!v.is_number()) config_error("config key '" + key + "' must be a number");
  return v.get<double>();
}

std::vector<double> take_reals(const json& v, const std::string& key) {
  if (!v.is_array()) config_error("config key '" + key + "' must be an array of numbers");
  std::vector<double> out;
  for (const auto& e : v) out.push_back(take_real(e, key));
  return out;
}

std::vector<std::string> take_names(const json& v, const std::string& key) {
  if (v.is_string()) return {v.get<std::string>()};
  if (!v.is_array()) config_error("config key '" + key + "' must be a string or an array of strings");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) config_error("config key '" + key + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

using Handler = std::function<void(const json&, RunConfig&)>;

void dispatch(const json& j, const std::map<std::string, Handler>& handlers, RunConfig& c, const std::string& where) {
  if (!j.is_object()) config_error(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = handlers.find(key);
    if (it == handlers.end()) config_error("unknown config key '" + key + "' in " + where);
    it->second(value, c);
  }
}

void check_tail(const std::string& t) {
  if (t != "auto" && t != "upper" && t != "lower") config_error("tail must be auto, upper or lower");
}

void check_centering(const std::string& t) {
  if (t != "grand_mean" && t != "per_stratum") config_error("centering must be grand_mean or per_stratum");
}

void validate(const RunConfig& c) {
  if (c.schema_version != kSchemaVersion) config_error("unsupported schema_version " + std::to_string(c.schema_version));
  if (c.tau && !(*c.tau > 0.0 && *c.tau < 1.0)) config_error("tau must lie in (0, 1)");
  if (!(c.alpha > 0.0 && c.alpha <= 0.5)) config_error("alpha must lie in (0, 0.5]");
  if (c.bootstrap < 2) config_error("bootstrap must be at least 2");
  if (c.tau_bootstrap < 2) config_error("tau_bootstrap must be at least 2");
  if (c.threads < 1) config_error("threads must be at least 1");
  if (c.tau_count < 1) config_error("tau_count must be at least 1");
  if (c.num_grid < 1) config_error("num_grid must be at least 1");
  for (double t : c.tau_candidates)
    if (!(t > 0.0 && t < 1.0)) config_error("tau candidates must lie in (0, 1)");
  check_tail(c.tail);
  check_centering(c.centering);
  parse_basis(c.basis, 1);
  if (c.simulate.replications < 1) config_error("simulate.replications must be at least 1");
  if (c.simulate.n.empty() || c.simulate.d_U.empty()) config_error("simulate grids must be nonempty");
  for (int d : c.simulate.d_U)
    if (d < 1) config_error("simulate.d_U values must be at least 1");
  scenario_from_string(c.simulate.scenario);
  for (const auto& m : c.simulate.methods) method_from_string(m);
}

}  // namespace

std::string basis_text(const json& j) {
  if (j.is_string()) return j.get<std::string>();
  if (!j.is_object()) config_error("basis must be a string or an object");
  std::string kind = "linear";
  std::optional<int> degree, knots;
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") kind = take<std::string>(value, "basis.kind");
    else if (key == "degree") degree = take_int(value, "basis.degree");
    else if (key == "knots_per_dim") knots = take_int(value, "basis.knots_per_dim");
    else config_error("unknown config key '" + key + "' in basis");
  }
  if (kind == "linear") {
    if (degree || knots) config_error("linear basis takes no degree or knots");
    return "linear";
  }
  if (kind == "poly") {
    if (knots) config_error("polynomial basis takes no knots");
    return "poly:" + std::to_string(degree.value_or(2));
  }
  if (kind == "spline")
    return "spline:" + std::to_string(degree.value_or(3)) + (knots ? "," + std::to_string(*knots) : "");
  config_error("basis kind must be linear, poly or spline");
}

BasisSpec parse_basis(const std::string& text, int input_dim) {
  auto number = [&](std::string_view s) {
    int v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || ec != std::errc() || end != s.data() + s.size() || v < 0)
      config_error("malformed basis '" + text + "'");
    return v;
  };
  if (text == "linear") return BasisSpec::identity(input_dim);
  if (text.starts_with("poly:")) {
    const int k = number(std::string_view(text).substr(5));
    if (k < 1) config_error("polynomial degree must be at least 1");
    return BasisSpec::polynomial(input_dim, k);
  }
  if (text.starts_with("spline:")) {
    const std::string_view rest = std::string_view(text).substr(7);
    const auto comma = rest.find(',');
    const int degree = number(rest.substr(0, comma));
    const int knots = comma == std::string_view::npos ? 0 : number(rest.substr(comma + 1));
    if (degree < 1) config_error("spline degree must be at least 1");
    if (comma != std::string_view::npos && knots < 1) config_error("spline knot count must be at least 1");
    return BasisSpec::tensor_spline(input_dim, degree, knots);
  }
  config_error("basis must be linear, poly:K or spline:D,K, got '" + text + "'");
}

RunConfig parse_config(const json& j) {
  RunConfig c;
  const std::map<std::string, Handler> sim{
      {"scenario", [](const json& v, RunConfig& c) { c.simulate.scenario = take<std::string>(v, "simulate.scenario"); }},
      {"n",
       [](const json& v, RunConfig& c) {
         if (!v.is_array()) config_error("simulate.n must be an array");
         c.simulate.n.clear();
         for (const auto& e : v) c.simulate.n.push_back(take_count(e, "simulate.n"));
       }},
      {"d_U",
       [](const json& v, RunConfig& c) {
         if (!v.is_array()) config_error("simulate.d_U must be an array");
         c.simulate.d_U.clear();
         for (const auto& e : v) c.simulate.d_U.push_back(take_int(e, "simulate.d_U"));
       }},
      {"replications", [](const json& v, RunConfig& c) { c.simulate.replications = take_count(v, "simulate.replications"); }},
      {"methods", [](const json& v, RunConfig& c) { c.simulate.methods = take_names(v, "simulate.methods"); }},
      {"overrides",
       [](const json& v, RunConfig& c) {
         if (!v.is_object()) config_error("simulate.overrides must be an object");
         for (const auto& [k, x] : v.items()) c.simulate.overrides[k] = take_real(x, "simulate.overrides." + k);
       }},
  };
  const std::map<std::string, Handler> top{
      {"schema_version", [](const json& v, RunConfig& c) { c.schema_version = take_int(v, "schema_version"); }},
      {"data", [](const json& v, RunConfig& c) { c.data = take<std::string>(v, "data"); }},
      {"y", [](const json& v, RunConfig& c) { c.y = take<std::string>(v, "y"); }},
      {"x", [](const json& v, RunConfig& c) { c.x = take_names(v, "x"); }},
      {"z", [](const json& v, RunConfig& c) { c.z = take_names(v, "z"); }},
      {"cluster", [](const json& v, RunConfig& c) { c.cluster = take<std::string>(v, "cluster"); }},
      {"strata", [](const json& v, RunConfig& c) { c.strata = take<std::string>(v, "strata"); }},
      {"tau",
       [](const json& v, RunConfig& c) {
         if (v.is_null()) c.tau.reset();
         else c.tau = take_real(v, "tau");
       }},
      {"alpha", [](const json& v, RunConfig& c) { c.alpha = take_real(v, "alpha"); }},
      {"bootstrap", [](const json& v, RunConfig& c) { c.bootstrap = take_count(v, "bootstrap"); }},
      {"seed", [](const json& v, RunConfig& c) { c.seed = take_count(v, "seed"); }},
      {"tail", [](const json& v, RunConfig& c) { c.tail = take<std::string>(v, "tail"); }},
      {"basis", [](const json& v, RunConfig& c) { c.basis = basis_text(v); }},
      {"lambda_grid", [](const json& v, RunConfig& c) { c.lambda_grid = take_reals(v, "lambda_grid"); }},
      {"threads", [](const json& v, RunConfig& c) { c.threads = take_int(v, "threads"); }},
      {"x_point", [](const json& v, RunConfig& c) { c.x_point = take_reals(v, "x_point"); }},
      {"x0_point", [](const json& v, RunConfig& c) { c.x0_point = take_reals(v, "x0_point"); }},
      {"tau_candidates", [](const json& v, RunConfig& c) { c.tau_candidates = take_reals(v, "tau_candidates"); }},
      {"tau_count", [](const json& v, RunConfig& c) { c.tau_count = take_int(v, "tau_count"); }},
      {"tau_bootstrap", [](const json& v, RunConfig& c) { c.tau_bootstrap = take_count(v, "tau_bootstrap"); }},
      {"allow_degenerate", [](const json& v, RunConfig& c) { c.allow_degenerate = take<bool>(v, "allow_degenerate"); }},
      {"num_grid", [](const json& v, RunConfig& c) { c.num_grid = take_int(v, "num_grid"); }},
      {"residualize_on_z", [](const json& v, RunConfig& c) { c.residualize_on_z = take<bool>(v, "residualize_on_z"); }},
      {"centering", [](const json& v, RunConfig& c) { c.centering = take<std::string>(v, "centering"); }},
      {"output", [](const json& v, RunConfig& c) { c.output = take<std::string>(v, "output"); }},
      {"plot", [](const json& v, RunConfig& c) { c.plot = take<std::string>(v, "plot"); }},
      {"aggregate_output", [](const json& v, RunConfig& c) { c.aggregate_output = take<std::string>(v, "aggregate_output"); }},
      {"simulate", [&sim](const json& v, RunConfig& c) { dispatch(v, sim, c, "simulate"); }},
  };
  dispatch(j, top, c, "config");
  validate(c);
  return c;
}

ojson config_to_json(const RunConfig& c) {
  ojson j;
  j["schema_version"] = c.schema_version;
  j["data"] = c.data;
  j["y"] = c.y;
  j["x"] = c.x;
  j["z"] = c.z;
  j["cluster"] = c.cluster;
  j["strata"] = c.strata;
  j["tau"] = c.tau ? ojson(*c.tau) : ojson(nullptr);
  j["alpha"] = c.alpha;
  j["bootstrap"] = c.bootstrap;
  j["seed"] = c.seed;
  j["tail"] = c.tail;
  j["basis"] = c.basis;
  j["lambda_grid"] = c.lambda_grid;
  j["threads"] = c.threads;
  j["x_point"] = c.x_point;
  j["x0_point"] = c.x0_point;
  j["tau_candidates"] = c.tau_candidates;
  j["tau_count"] = c.tau_count;
  j["tau_bootstrap"] = c.tau_bootstrap;
  j["allow_degenerate"] = c.allow_degenerate;
  j["num_grid"] = c.num_grid;
  j["residualize_on_z"] = c.residualize_on_z;
  j["centering"] = c.centering;
  j["output"] = c.output;
  j["plot"] = c.plot;
  j["aggregate_output"] = c.aggregate_output;
  ojson s;
  s["scenario"] = c.simulate.scenario;
  s["n"] = c.simulate.n;
  s["d_U"] = c.simulate.d_U;
  s["replications"] = c.simulate.replications;
  s["methods"] = c.simulate.methods;
  s["overrides"] = ojson::object();
  for (const auto& [k, v] : c.simulate.overrides) s["overrides"][k] = v;
  j["simulate"] = s;
  return j;
}

int exit_code(ErrorCategory category) {
  switch (category) {
    case ErrorCategory::Config: return 2;
    case ErrorCategory::Data: return 3;
    case ErrorCategory::Numerical: return 4;
  }
  return 1;
}

namespace {

const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::Config: return "config";
    case ErrorCategory::Data: return "data";
    case ErrorCategory::Numerical: return "numerical";
  }
  return "internal";
}

ojson vec(const Vector& v) { return ojson(std::vector<double>(v.data(), v.data() + v.size())); }

ojson tail_json(const TailSide& t, bool selected) {
  return {{"side", to_string(t.side)},
          {"selected", selected},
          {"range_upper", t.range_upper},
          {"range_lower", t.range_lower}};
}

ojson basis_json(const BasisSpec& b) {
  ojson j;
  j["description"] = b.describe();
  j["output_dim"] = b.output_dim();
  j["knots"] = b.knots;
  return j;
}

ojson interval_json(const Interval& i) { return {{"lo", i.lo}, {"hi", i.hi}}; }

ojson set_json(const ConfidenceSet& s) {
  ojson j;
  j["method"] = to_string(s.method);
  j["alpha"] = s.alpha;
  j["intervals"] = ojson::array();
  for (const auto& i : s.intervals) j["intervals"].push_back(interval_json(i));
  j["total_length"] = s.total_length();
  j["flagged"] = s.flagged;
  return j;
}

struct Context {
  std::string command;
  RunConfig config;
  std::ostream& err;
  std::optional<LoadedData> loaded;
};

ColumnMapping mapping_of(const RunConfig& c) {
  ColumnMapping m;
  m.y = c.y;
  m.x = c.x;
  m.z = c.z;
  if (!c.cluster.empty()) m.cluster = c.cluster;
  if (!c.strata.empty()) m.strata = c.strata;
  return m;
}

const Dataset& load(Context& ctx) {
  if (ctx.config.data.empty()) config_error("no data file given (--data or config key 'data')");
  ctx.loaded = ingest_csv(ctx.config.data, mapping_of(ctx.config));
  ctx.err << "loaded " << ctx.loaded->data.n() << " rows from " << ctx.config.data << " (dropped "
          << ctx.loaded->report.dropped << ")\n";
  return ctx.loaded->data;
}

ojson data_json(const Context& ctx) {
  if (!ctx.loaded) return nullptr;
  const auto& d = ctx.loaded->data;
  return {{"path", ctx.config.data},
          {"n", d.n()},
          {"d", d.d()},
          {"d_z", d.d_z()},
          {"rows_read", ctx.loaded->report.rows_read},
          {"dropped", ctx.loaded->report.dropped}};
}

double tau_for(const RunConfig& c, Eigen::Index n) {
  return c.tau ? *c.tau : default_tau(static_cast<std::size_t>(n));
}

std::vector<double> point_or(const std::vector<double>& p, Eigen::Index d, double fill, const char* key) {
  if (p.empty()) return std::vector<double>(static_cast<std::size_t>(d), fill);
  if (static_cast<Eigen::Index>(p.size()) != d)
    config_error(std::string(key) + " has " + std::to_string(p.size()) + " entries, data has " + std::to_string(d) +
                 " exposures");
  return p;
}

// Manual sides carry NaN ranges; auto runs the neighbourhood-range rule.
std::pair<TailSide, bool> resolve_tail(const RunConfig& c, const Dataset& data, double tau, const BasisSpec& spec,
                                       std::span<const double> x0) {
  if (c.tail == "upper") return {TailSide::upper(), false};
  if (c.tail == "lower") return {TailSide::lower(), false};
  TailSelectionOptions o;
  o.num_grid = c.num_grid;
  return {select_tail(data, tau, spec, x0, o), true};
}

ojson cmd_fit(Context& ctx) {
  const auto& data = load(ctx);
  const auto& c = ctx.config;
  const double tau = tau_for(c, data.n());
  const auto spec = parse_basis(c.basis, static_cast<int>(data.d()));
  const auto x0 = point_or(c.x0_point, data.d(), 0.0, "x0_point");
  const auto [side, selected] = resolve_tail(c, data, tau, spec, x0);
  const auto fit = fit_basis(data.X, data.y, tau, spec, side.side);
  ojson r;
  r["tau"] = tau;
  r["level"] = fit.fit.level;
  r["tail"] = tail_json(side, selected);
  r["basis"] = basis_json(fit.basis);
  r["beta"] = vec(fit.beta);
  r["objective"] = fit.fit.objective;
  r["n_below"] = fit.fit.n_below;
  r["n_zero"] = fit.fit.n_zero;
  return r;
}

ojson cmd_effect(Context& ctx) {
  const auto& data = load(ctx);
  const auto& c = ctx.config;
  if (c.x_point.empty()) config_error("effect needs x_point (--x-point)");
  const auto x = point_or(c.x_point, data.d(), 0.0, "x_point");
  const auto x0 = point_or(c.x0_point, data.d(), 0.0, "x0_point");
  const double tau = tau_for(c, data.n());
  const auto spec = parse_basis(c.basis, static_cast<int>(data.d()));
  const auto [side, selected] = resolve_tail(c, data, tau, spec, x0);
  const auto est = excel_effect(data, x, x0, tau, spec, side);
  if (est.support_warning) ctx.err << "warning: x or x0 lies outside the observed exposure range\n";
  ojson r;
  r["theta"] = est.theta[0];
  r["x"] = x;
  r["x0"] = x0;
  r["tau"] = tau;
  r["tail"] = tail_json(side, selected);
  r["basis"] = basis_json(est.basis);
  r["support_warning"] = est.support_warning;
  return r;
}

ojson cmd_select_tau(Context& ctx) {
  const auto& data = load(ctx);
  const auto& c = ctx.config;
  const auto x0 = point_or(c.x0_point, data.d(), 0.0, "x0_point");
  const auto x = point_or(c.x_point, data.d(), 1.0, "x_point");
  std::vector<double> candidates = c.tau_candidates;
  if (candidates.empty())
    for (int k = 1; k <= c.tau_count; ++k)
      candidates.push_back(0.01 * k / std::pow(static_cast<double>(data.n()), 0.25));
  const auto spec = parse_basis(c.basis, static_cast<int>(data.d()));
  const auto [side, selected] = resolve_tail(c, data, tau_for(c, data.n()), spec, x0);
  TauSelectionOptions o;
  o.threads = c.threads;
  o.allow_degenerate = c.allow_degenerate;
  const auto sel = select_tau(data, candidates, c.tau_bootstrap, x, x0, spec, side, c.seed, o);
  ojson r;
  r["candidates"] = sel.candidates;
  r["chosen"] = sel.chosen;
  r["B"] = c.tau_bootstrap;
  r["x"] = x;
  r["x0"] = x0;
  r["tail"] = tail_json(side, selected);
  r["per_tau"] = ojson::array();
  for (const auto& row : sel.per_tau)
    r["per_tau"].push_back({{"tau", row.tau},
                            {"bias_hat", row.bias_hat},
                            {"var_hat", row.var_hat},
                            {"mse_hat", row.mse_hat},
                            {"failed", row.failed}});
  return r;
}

ojson cmd_select_tail(Context& ctx) {
  const auto& data = load(ctx);
  const auto& c = ctx.config;
  const double tau = tau_for(c, data.n());
  const auto spec = parse_basis(c.basis, static_cast<int>(data.d()));
  const auto x0 = point_or(c.x0_point, data.d(), 0.0, "x0_point");
  TailSelectionOptions o;
  o.num_grid = c.num_grid;
  const auto side = select_tail(data, tau, spec, x0, o);
  ojson r;
  r["tau"] = tau;
  r["num_grid"] = c.num_grid;
  r["tail"] = tail_json(side, true);
  return r;
}

ojson cmd_bootstrap_ci(Context& ctx) {
  const auto& data = load(ctx);
  const auto& c = ctx.config;
  if (c.basis != "linear") config_error("bootstrap-ci fits the linear model; basis must be linear");
  const double tau = tau_for(c, data.n());
  std::optional<ResidualizeSpec> pre;
  std::optional<Dataset> view;
  if (c.residualize_on_z) {
    if (!data.Z) throw Error(ErrorCode::MissingInstruments, "residualize_on_z needs instrument columns (--z)");
    pre = ResidualizeSpec{};
    view = residualize_on_instruments(data);
  }
  const Dataset& tail_data = view ? *view : data;
  const auto spec = BasisSpec::identity(static_cast<int>(data.d()));
  const std::vector<double> x0(static_cast<std::size_t>(data.d()), 0.0);
  const auto [side, selected] = resolve_tail(c, tail_data, tau, spec, x0);
  BootstrapOptions o;
  o.threads = c.threads;
  const auto boot = bootstrap_excel(data, tau, side, c.alpha, c.bootstrap, c.seed, pre, o);
  for (const auto& w : boot.warnings) ctx.err << "warning: " << w << "\n";
  ojson r;
  r["tau"] = tau;
  r["tail"] = tail_json(side, selected);
  r["residualize_on_z"] = c.residualize_on_z;
  r["theta"] = vec(boot.center);
  r["alpha"] = boot.alpha;
  r["B"] = boot.B;
  r["seed"] = boot.seed;
  r["failed"] = boot.failed;
  r["redrawn"] = boot.redrawn;
  r["components"] = ojson::array();
  for (Eigen::Index j = 0; j < data.d(); ++j) {
    const auto set = to_confidence_interval(boot, static_cast<std::size_t>(j));
    r["components"].push_back({{"name", data.x_names[static_cast<std::size_t>(j)]},
                               {"theta", boot.center[j]},
                               {"radius", boot.component_radii[j]},
                               {"interval", interval_json(set.intervals[0])}});
  }
  r["joint_radius"] = boot.joint_radius;
  r["warnings"] = boot.warnings;
  return r;
}

ojson cmd_iv_repair(Context& ctx) {
  const auto& data = load(ctx);
  const auto& c = ctx.config;
  if (!data.Z) throw Error(ErrorCode::MissingInstruments, "iv-repair needs candidate instrument columns (--z)");
  if (data.d() != 1) config_error("iv-repair needs a single exposure column");
  IvRepairConfig ivc;
  ivc.alpha = c.alpha;
  if (!c.lambda_grid.empty()) ivc.lambda_grid = c.lambda_grid;
  ivc.tau_n = tau_for(c, data.n());
  ivc.B = c.bootstrap;
  ivc.seed = c.seed;
  ivc.threads = c.threads;
  const std::vector<double> x0{0.0};
  const auto view = residualize_on_instruments(data);
  const auto [side, selected] = resolve_tail(c, view, ivc.tau_n, BasisSpec::identity(1), x0);
  ivc.side = side;
  const auto res = union_confidence_set(data, ivc);
  if (res.fallback) ctx.err << "warning: no candidate instrument was selected; reporting the EXCEL interval\n";

  auto name = [&](int j) { return data.z_names[static_cast<std::size_t>(j)]; };
  ojson r;
  r["tau"] = res.tau_n;
  r["tail"] = tail_json(side, selected);
  r["alpha"] = c.alpha;
  r["B"] = c.bootstrap;
  r["seed"] = c.seed;
  r["excel_theta"] = res.excel_theta;
  r["fallback"] = res.fallback;
  r["chosen_lambda"] = res.chosen_lambda;
  r["selected"] = ojson::array();
  for (int j : res.selected) r["selected"].push_back({{"index", j}, {"name", name(j)}});
  r["union_set"] = set_json(res.final_set);
  r["excel_interval"] = set_json(res.excel_interval);
  r["excel_only_interval"] = set_json(res.excel_only_interval);
  r["per_iv"] = ojson::array();
  for (std::size_t j = 0; j < res.tsls.size(); ++j) {
    const auto& f = res.tsls[j];
    ojson e{{"index", j},
            {"name", name(static_cast<int>(j))},
            {"theta", f.theta},
            {"se", f.se},
            {"first_stage_t", f.first_stage_t},
            {"weak_instrument", f.weak_instrument}};
    for (const auto& [k, set] : res.per_iv_intervals)
      if (k == static_cast<int>(j)) e["interval"] = interval_json(set.intervals[0]);
    r["per_iv"].push_back(e);
  }
  r["per_lambda"] = ojson::array();
  for (const auto& row : res.per_lambda)
    r["per_lambda"].push_back({{"lambda", row.lambda}, {"selected", row.selected}, {"total_length", row.total_length}});
  return r;
}

std::vector<Method> default_methods(Scenario s) {
  if (s == Scenario::InvalidIv)
    return {Method::OLS, Method::TSLS_all, Method::TSLS_oracle, Method::EXCEL, Method::IV_repair};
  return {Method::OLS, Method::EXCEL};
}

ojson cmd_simulate(Context& ctx) {
  const auto& c = ctx.config;
  const Scenario scenario = scenario_from_string(c.simulate.scenario);
  std::vector<Method> methods;
  for (const auto& m : c.simulate.methods) methods.push_back(method_from_string(m));
  if (methods.empty()) methods = default_methods(scenario);

  ExperimentOptions o;
  o.tail = c.tail == "upper" ? TailChoice::Upper : c.tail == "lower" ? TailChoice::Lower : TailChoice::Auto;
  o.tau = c.tau.value_or(0.0);
  o.B = c.bootstrap;
  o.tau_B = c.tau_bootstrap;
  o.tau_candidates = c.tau_count;
  o.lambda_grid = c.lambda_grid;
  o.threads = c.threads;

  // x axis is d_U when several are requested, else n.
  const bool by_d = c.simulate.d_U.size() > 1;
  std::string plot = "series,x_name,x_value,y_name,y_value\n";
  ojson r;
  r["scenario"] = to_string(scenario);
  r["replications"] = c.simulate.replications;
  r["alpha"] = c.alpha;
  r["seed"] = c.seed;
  r["methods"] = ojson::array();
  for (auto m : methods) r["methods"].push_back(to_string(m));
  r["cells"] = ojson::array();
  for (int d_U : c.simulate.d_U)
    for (std::size_t n : c.simulate.n) {
      DgpConfig dgp;
      dgp.scenario = scenario;
      dgp.n = n;
      dgp.d_U = d_U;
      dgp.overrides = c.simulate.overrides;
      const auto rep = run_experiment(dgp, methods, c.simulate.replications, c.alpha, c.seed, o);
      ctx.err << to_string(scenario) << " n=" << n << " d_U=" << d_U << " done in " << rep.wall_seconds << "s\n";
      ojson cell{{"n", n}, {"d_U", d_U}};
      if (scenario == Scenario::NoIvLinear && dgp.overrides.empty()) cell["analytic_ols_bias"] = analytic_ols_bias(d_U);
      cell["rows"] = ojson::array();
      for (const auto& row : rep.rows) {
        ojson e{{"method", to_string(row.method)},
                {"bias", row.bias},
                {"mse", row.mse},
                {"coverage", row.coverage ? ojson(*row.coverage) : ojson(nullptr)},
                {"mean_length", row.mean_length ? ojson(*row.mean_length) : ojson(nullptr)},
                {"replications", row.replications},
                {"failures", row.failures}};
        e["extra"] = ojson::object();
        for (const auto& [k, v] : row.extra) e["extra"][k] = v;
        cell["rows"].push_back(e);

        const std::string series = by_d ? std::string(to_string(row.method)) + " n=" + std::to_string(n)
                                        : std::string(to_string(row.method));
        const std::string x = by_d ? "d_U," + std::to_string(d_U) : "n," + std::to_string(n);
        auto emit = [&](const char* metric, double v) {
          plot += quote_csv_field(series) + "," + x + "," + metric + "," + format_double(v) + "\n";
        };
        emit("bias", row.bias);
        emit("mse", row.mse);
        if (row.coverage) emit("coverage", *row.coverage);
        if (row.mean_length) emit("mean_length", *row.mean_length);
      }
      r["cells"].push_back(cell);
    }
  if (!c.plot.empty()) {
    write_file_atomic(c.plot, plot);
    r["plot"] = c.plot;
  } else {
    r["plot"] = nullptr;
  }
  return r;
}

ojson cmd_aggregate(Context& ctx) {
  auto& c = ctx.config;
  if (c.cluster.empty()) throw Error(ErrorCode::MissingClusterIds, "aggregate needs a cluster column (--cluster)");
  if (c.centering == "per_stratum" && c.strata.empty()) config_error("per_stratum centering needs --strata");
  const auto& data = load(ctx);
  const auto agg = aggregate_clusters(data, c.centering == "per_stratum" ? Centering::PerStratum : Centering::GrandMean);
  const std::string out = c.aggregate_output.empty() ? "aggregated.csv" : c.aggregate_output;
  write_file_atomic(out, dataset_to_csv(agg));
  ojson r;
  r["records"] = data.n();
  r["clusters"] = agg.n();
  r["centering"] = c.centering;
  r["output"] = out;
  return r;
}

void add_flags(CLI::App* sub, RunConfig& f, std::string& config_path) {
  sub->add_option("--config", config_path, "JSON config file");
  sub->add_option("data,--data", f.data, "CSV data file");
  sub->add_option("--y", f.y, "outcome column");
  sub->add_option("--x", f.x, "exposure columns")->delimiter(',');
  sub->add_option("--z", f.z, "candidate instrument columns")->delimiter(',');
  sub->add_option("--cluster", f.cluster, "cluster id column");
  sub->add_option("--strata", f.strata, "stratum column for per-stratum centering");
  sub->add_option("--tau", f.tau, "tail level tau_n");
  sub->add_option("--alpha", f.alpha, "confidence level alpha");
  sub->add_option("--bootstrap,-B", f.bootstrap, "bootstrap replicates");
  sub->add_option("--seed", f.seed, "master seed");
  sub->add_option("--tail", f.tail, "auto|upper|lower");
  sub->add_option("--basis", f.basis, "linear|poly:K|spline:D,K");
  sub->add_option("--lambda-grid", f.lambda_grid, "comma-separated lambda grid")->delimiter(',');
  sub->add_option("--threads", f.threads, "worker threads (results do not depend on it)");
  sub->add_option("--x-point", f.x_point, "evaluation point x")->delimiter(',');
  sub->add_option("--x0-point", f.x0_point, "reference point x0")->delimiter(',');
  sub->add_option("--tau-candidates", f.tau_candidates, "candidate tau values")->delimiter(',');
  sub->add_option("--tau-count", f.tau_count, "number of default tau candidates");
  sub->add_option("--tau-bootstrap", f.tau_bootstrap, "bootstrap replicates for tau selection");
  sub->add_flag("--allow-degenerate", f.allow_degenerate, "allow tau/2 fits below one tail observation");
  sub->add_option("--num-grid", f.num_grid, "grid points for tail selection");
  sub->add_flag("--residualize-on-z", f.residualize_on_z, "residualize on the instruments before the tail fit");
  sub->add_option("--centering", f.centering, "grand_mean|per_stratum");
  sub->add_option("--output,-o", f.output, "report JSON path");
  sub->add_option("--plot", f.plot, "plot-data CSV path (simulate)");
  sub->add_option("--aggregate-output", f.aggregate_output, "aggregated CSV path (aggregate)");
  sub->add_option("--scenario", f.simulate.scenario, "simulation scenario");
  sub->add_option("--n", f.simulate.n, "sample sizes")->delimiter(',');
  sub->add_option("--d-u", f.simulate.d_U, "confounder dimensions")->delimiter(',');
  sub->add_option("--reps", f.simulate.replications, "Monte Carlo replications");
  sub->add_option("--methods", f.simulate.methods, "methods to compare")->delimiter(',');
  sub->add_option("--override", "scenario parameter override key=value (repeatable)");
}

// Flag values that were given on the command line replace the config file.
void merge_flags(CLI::App* sub, const RunConfig& f, RunConfig& c) {
  auto given = [&](const char* name) { return sub->get_option(name)->count() > 0; };
  if (given("data")) c.data = f.data;
  if (given("--y")) c.y = f.y;
  if (given("--x")) c.x = f.x;
  if (given("--z")) c.z = f.z;
  if (given("--cluster")) c.cluster = f.cluster;
  if (given("--strata")) c.strata = f.strata;
  if (given("--tau")) c.tau = f.tau;
  if (given("--alpha")) c.alpha = f.alpha;
  if (given("--bootstrap")) c.bootstrap = f.bootstrap;
  if (given("--seed")) c.seed = f.seed;
  if (given("--tail")) c.tail = f.tail;
  if (given("--basis")) c.basis = f.basis;
  if (given("--lambda-grid")) c.lambda_grid = f.lambda_grid;
  if (given("--threads")) c.threads = f.threads;
  if (given("--x-point")) c.x_point = f.x_point;
  if (given("--x0-point")) c.x0_point = f.x0_point;
  if (given("--tau-candidates")) c.tau_candidates = f.tau_candidates;
  if (given("--tau-count")) c.tau_count = f.tau_count;
  if (given("--tau-bootstrap")) c.tau_bootstrap = f.tau_bootstrap;
  if (given("--allow-degenerate")) c.allow_degenerate = f.allow_degenerate;
  if (given("--num-grid")) c.num_grid = f.num_grid;
  if (given("--residualize-on-z")) c.residualize_on_z = f.residualize_on_z;
  if (given("--centering")) c.centering = f.centering;
  if (given("--output")) c.output = f.output;
  if (given("--plot")) c.plot = f.plot;
  if (given("--aggregate-output")) c.aggregate_output = f.aggregate_output;
  if (given("--scenario")) c.simulate.scenario = f.simulate.scenario;
  if (given("--n")) c.simulate.n = f.simulate.n;
  if (given("--d-u")) c.simulate.d_U = f.simulate.d_U;
  if (given("--reps")) c.simulate.replications = f.simulate.replications;
  if (given("--methods")) c.simulate.methods = f.simulate.methods;
  const auto* overrides = sub->get_option("--override");
  if (overrides->count() == 0) return;
  for (const auto& kv : overrides->as<std::vector<std::string>>()) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) config_error("override must be key=value, got '" + kv + "'");
    double v = 0.0;
    const auto* s = kv.data() + eq + 1;
    const auto [end, ec] = std::from_chars(s, kv.data() + kv.size(), v);
    if (ec != std::errc() || end != kv.data() + kv.size()) config_error("override value is not a number: '" + kv + "'");
    c.simulate.overrides[kv.substr(0, eq)] = v;
  }
}

RunConfig read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) config_error("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    config_error("config file " + path + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

ojson envelope(const std::string& command) {
  ojson j;
  j["schema_version"] = kSchemaVersion;
  j["command"] = command;
  return j;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App cli{"Extreme-based causal effect learning"};
  cli.name("excel");
  cli.require_subcommand(1);
  RunConfig flags;
  std::string config_path;
  const std::map<std::string, std::string> about{
      {"fit", "tail quantile regression on the basis expansion"},
      {"effect", "causal contrast theta(x, x0)"},
      {"select-tau", "bootstrap MSE choice among tau candidates"},
      {"select-tail", "upper or lower tail by neighbourhood residual ranges"},
      {"bootstrap-ci", "bootstrap confidence intervals for the linear model"},
      {"iv-repair", "union confidence set over screened candidate instruments"},
      {"simulate", "Monte Carlo comparison on a built-in design"},
      {"aggregate", "cluster-level aggregation of a record-level CSV"},
  };
  for (const auto& name : commands()) add_flags(cli.add_subcommand(name, about.at(name)), flags, config_path);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    cli.parse(reversed);
  } catch (const CLI::ParseError& e) {
    std::ostringstream help_out, help_err;
    const int code = cli.exit(e, help_out, help_err);
    err << help_out.str() << help_err.str();
    return code == 0 ? 0 : 2;
  }
  CLI::App* sub = cli.get_subcommands().front();
  const std::string command = sub->get_name();

  RunConfig config;
  // The flag wins even when the config file fails to load.
  std::string report_path = flags.output.empty() ? command + "_report.json" : flags.output;
  auto fail = [&](ErrorCategory category, const std::string& code, const std::string& message) {
    ojson j = envelope(command);
    j["status"] = "error";
    j["error"] = {{"code", code}, {"category", category_name(category)}, {"message", message}};
    err << "error [" << code << "]: " << message << "\n";
    try {
      write_file_atomic(report_path, j.dump(2) + "\n");
      out << report_path << "\n";
    } catch (const Error& e) {
      err << "could not write error report: " << e.what() << "\n";
    }
    return exit_code(category);
  };

  try {
    if (!config_path.empty()) config = read_config_file(config_path);
    merge_flags(sub, flags, config);
    validate(config);
    if (!config.output.empty()) report_path = config.output;

    Context ctx{command, config, err, std::nullopt};
    ojson result;
    if (command == "fit") result = cmd_fit(ctx);
    else if (command == "effect") result = cmd_effect(ctx);
    else if (command == "select-tau") result = cmd_select_tau(ctx);
    else if (command == "select-tail") result = cmd_select_tail(ctx);
    else if (command == "bootstrap-ci") result = cmd_bootstrap_ci(ctx);
    else if (command == "iv-repair") result = cmd_iv_repair(ctx);
    else if (command == "simulate") result = cmd_simulate(ctx);
    else result = cmd_aggregate(ctx);

    ojson j = envelope(command);
    j["status"] = "ok";
    j["config"] = config_to_json(config);
    j["data"] = data_json(ctx);
    j["result"] = std::move(result);
    write_file_atomic(report_path, j.dump(2) + "\n");
    out << report_path << "\n";
    return 0;
  } catch (const Error& e) {
    return fail(category_of(e.code()), std::string(to_string(e.code())), e.what());
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace excel::app
