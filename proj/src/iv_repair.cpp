#include "excel/iv_repair.hpp"

#include "excel/error.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

namespace excel {

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 19; ++k) grid.push_back(k / 20.0);
  return grid;
}

void IvRepairConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::InvalidConfig, "alpha must lie in (0, 1)");
  if (lambda_grid.empty()) throw Error(ErrorCode::InvalidConfig, "lambda grid is empty");
  for (std::size_t k = 0; k < lambda_grid.size(); ++k) {
    if (!(lambda_grid[k] > 0.0 && lambda_grid[k] < 1.0))
      throw Error(ErrorCode::InvalidConfig, "lambda grid values must lie in (0, 1)");
    if (k > 0 && !(lambda_grid[k] > lambda_grid[k - 1]))
      throw Error(ErrorCode::InvalidConfig, "lambda grid must be sorted and distinct");
  }
  if (tau_n < 0.0 || tau_n >= 1.0) throw Error(ErrorCode::InvalidConfig, "tau_n must lie in (0, 1)");
  if (B < 2) throw Error(ErrorCode::InvalidConfig, "B must be at least 2");
}

double normal_critical(double level_alpha) {
  if (!(level_alpha > 0.0 && level_alpha <= 1.0)) throw Error(ErrorCode::OutOfRange, "level alpha must lie in (0, 1]");
  if (level_alpha == 1.0) return 0.0;
  return boost::math::quantile(boost::math::normal_distribution<double>(), 1.0 - level_alpha / 2.0);
}

TslsFit per_iv_tsls(const Dataset& data, int j) {
  data.validate();
  if (!data.Z || data.Z->cols() < 1) throw Error(ErrorCode::MissingInstruments, "candidate instruments are required");
  if (data.d() != 1) throw Error(ErrorCode::InvalidArgument, "instrument repair needs a scalar exposure");
  const auto dz = data.Z->cols();
  if (j < 0 || j >= dz) throw Error(ErrorCode::IndexOutOfRange, "instrument index " + std::to_string(j) + " out of range");
  Matrix controls(data.n(), dz - 1);
  for (Eigen::Index k = 0, c = 0; k < dz; ++k)
    if (k != j) controls.col(c++) = data.Z->col(k);
  return fit_tsls(data.y, Vector(data.X.col(0)), Vector(data.Z->col(j)), controls);
}

ConfidenceSet wald_interval(const TslsFit& fit, double level_alpha) {
  const double half = normal_critical(level_alpha) * fit.se;
  auto out = ConfidenceSet::from_intervals({{fit.theta - half, fit.theta + half}}, level_alpha, SetMethod::PerIvTsls);
  out.flagged = fit.weak_instrument;
  return out;
}

ConfidenceSet per_iv_interval(const Dataset& data, int j, double level_alpha) {
  return wald_interval(per_iv_tsls(data, j), level_alpha);
}

Dataset residualize_on_instruments(const Dataset& data) {
  if (!data.Z) throw Error(ErrorCode::MissingInstruments, "candidate instruments are required");
  Matrix C(data.n(), data.Z->cols() + 1);
  C.col(0).setOnes();
  C.rightCols(data.Z->cols()) = *data.Z;
  Matrix targets(data.n(), 1 + data.d());
  targets.col(0) = data.y;
  targets.rightCols(data.d()) = data.X;
  const Matrix resid = targets - C * C.colPivHouseholderQr().solve(targets);
  Dataset out;
  out.y = resid.col(0);
  out.X = resid.rightCols(data.d());
  out.y_name = data.y_name;
  out.x_names = data.x_names;
  return out;
}

std::vector<int> select_valid(const std::vector<ConfidenceSet>& per_iv, const ConfidenceSet& excel) {
  if (excel.is_ball() || excel.intervals.size() != 1)
    throw Error(ErrorCode::InvalidArgument, "EXCEL set must be a single interval");
  std::vector<int> out;
  for (std::size_t j = 0; j < per_iv.size(); ++j) {
    if (per_iv[j].is_ball() || per_iv[j].intervals.size() != 1)
      throw Error(ErrorCode::InvalidArgument, "per-instrument sets must be single intervals");
    if (per_iv[j].intervals[0].intersects(excel.intervals[0])) out.push_back(static_cast<int>(j));
  }
  return out;
}

IvRepairResult union_confidence_set(const Dataset& data, const IvRepairConfig& config) {
  config.validate();
  data.validate();
  if (!data.Z) throw Error(ErrorCode::MissingInstruments, "candidate instruments are required");
  const auto dz = static_cast<int>(data.Z->cols());

  IvRepairResult out;
  out.tau_n = config.tau_n > 0.0 ? config.tau_n : default_tau(static_cast<std::size_t>(data.n()));
  for (int j = 0; j < dz; ++j) out.tsls.push_back(per_iv_tsls(data, j));

  // One bootstrap run; every lambda reads its quantile from the same sample.
  BootstrapOptions boot_options;
  boot_options.threads = config.threads;
  const auto boot = bootstrap_excel(data, out.tau_n, config.side, std::min(config.alpha, 0.5), config.B, config.seed,
                                    ResidualizeSpec{}, boot_options);
  out.excel_theta = boot.center[0];
  out.excel_only_interval = to_confidence_interval(boot, 0, config.alpha);

  std::size_t best = config.lambda_grid.size();
  for (std::size_t k = 0; k < config.lambda_grid.size(); ++k) {
    const double lambda = config.lambda_grid[k];
    const double screen = lambda * config.alpha / 2.0;
    const auto excel_set = to_confidence_interval(boot, 0, screen);
    std::vector<ConfidenceSet> screens;
    for (const auto& fit : out.tsls) screens.push_back(wald_interval(fit, screen));
    LambdaRow row;
    row.lambda = lambda;
    row.selected = select_valid(screens, excel_set);
    if (row.selected.empty()) {
      row.total_length = std::numeric_limits<double>::infinity();
    } else {
      std::vector<Interval> pieces;
      for (int j : row.selected)
        pieces.push_back(wald_interval(out.tsls[static_cast<std::size_t>(j)], config.alpha - lambda * config.alpha).intervals[0]);
      row.total_length = ConfidenceSet::from_intervals(pieces, config.alpha, SetMethod::UnionIvRepair).total_length();
      // Strict comparison keeps the smallest lambda among minimizers.
      if (best == config.lambda_grid.size() || row.total_length < out.per_lambda[best].total_length) best = k;
    }
    out.per_lambda.push_back(std::move(row));
  }

  if (best == config.lambda_grid.size()) {
    out.fallback = true;
    out.chosen_lambda = std::numeric_limits<double>::quiet_NaN();
    out.excel_interval = out.excel_only_interval;
    out.final_set = out.excel_interval;
    out.final_set.method = SetMethod::UnionIvRepair;
    out.final_set.flagged = true;
    return out;
  }

  const double lambda = config.lambda_grid[best];
  out.chosen_lambda = lambda;
  out.selected = out.per_lambda[best].selected;
  out.excel_interval = to_confidence_interval(boot, 0, lambda * config.alpha / 2.0);
  std::vector<Interval> pieces;
  for (int j : out.selected) {
    auto set = wald_interval(out.tsls[static_cast<std::size_t>(j)], config.alpha - lambda * config.alpha);
    pieces.push_back(set.intervals[0]);
    out.per_iv_intervals.emplace_back(j, std::move(set));
  }
  out.final_set = ConfidenceSet::from_intervals(pieces, config.alpha, SetMethod::UnionIvRepair);
  return out;
}

}  // namespace excel
