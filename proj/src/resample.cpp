#include "excel/resample.hpp"

#include "excel/error.hpp"
#include "excel/random.hpp"
#include "excel/replicate.hpp"

#include <algorithm>
#include <cmath>

namespace excel {

std::vector<Interval> normalize_intervals(std::vector<Interval> intervals) {
  for (const auto& iv : intervals) {
    if (!(iv.lo <= iv.hi)) throw Error(ErrorCode::InvalidArgument, "interval with lo > hi or NaN endpoint");
  }
  std::sort(intervals.begin(), intervals.end(), [](const Interval& a, const Interval& b) {
    return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi);
  });
  std::vector<Interval> out;
  for (const auto& iv : intervals) {
    if (!out.empty() && iv.lo <= out.back().hi) {
      out.back().hi = std::max(out.back().hi, iv.hi);
    } else {
      out.push_back(iv);
    }
  }
  return out;
}

const char* to_string(SetMethod method) {
  switch (method) {
    case SetMethod::ExcelBootstrap: return "excel_bootstrap";
    case SetMethod::PerIvTsls: return "per_iv_tsls";
    case SetMethod::UnionIvRepair: return "union_iv_repair";
  }
  return "unknown";
}

ConfidenceSet ConfidenceSet::from_intervals(std::vector<Interval> intervals, double alpha, SetMethod method) {
  if (intervals.empty()) throw Error(ErrorCode::InvalidArgument, "a confidence set needs at least one interval");
  ConfidenceSet out;
  out.intervals = normalize_intervals(std::move(intervals));
  out.alpha = alpha;
  out.method = method;
  return out;
}

ConfidenceSet ConfidenceSet::ball(Vector center, double radius, double alpha, SetMethod method) {
  if (!(radius >= 0.0)) throw Error(ErrorCode::InvalidArgument, "ball radius must be >= 0");
  ConfidenceSet out;
  out.center = std::move(center);
  out.radius = radius;
  out.alpha = alpha;
  out.method = method;
  return out;
}

double ConfidenceSet::total_length() const {
  if (is_ball()) return 2.0 * radius;
  double total = 0.0;
  for (const auto& iv : intervals) total += iv.length();
  return total;
}

bool ConfidenceSet::contains(double value) const {
  if (is_ball()) return center->size() == 1 && std::abs(value - (*center)[0]) <= radius;
  return std::any_of(intervals.begin(), intervals.end(), [&](const Interval& iv) { return iv.contains(value); });
}

bool ConfidenceSet::contains(const Vector& value) const {
  if (!is_ball()) return value.size() == 1 && contains(value[0]);
  return value.size() == center->size() && (value - *center).norm() <= radius;
}

double upper_order_statistic(std::vector<double> values, double alpha) {
  if (values.empty()) throw Error(ErrorCode::InvalidArgument, "order statistic of an empty sample");
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorCode::OutOfRange, "alpha must lie in (0, 1)");
  const auto m = static_cast<double>(values.size());
  // The small slack keeps ceil((1 - 0.05) * 500) at 475 despite rounding.
  auto k = static_cast<std::size_t>(std::ceil((1.0 - alpha) * m - 1e-9));
  k = std::clamp<std::size_t>(k, 1, values.size());
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k - 1), values.end());
  return values[k - 1];
}

double BootstrapResult::joint_radius_at(double alpha_level) const {
  std::vector<double> dist(static_cast<std::size_t>(estimates.rows()));
  for (Eigen::Index b = 0; b < estimates.rows(); ++b)
    dist[static_cast<std::size_t>(b)] = (estimates.row(b).transpose() - center).norm();
  return upper_order_statistic(std::move(dist), alpha_level);
}

Vector BootstrapResult::component_radii_at(double alpha_level) const {
  Vector radii(center.size());
  std::vector<double> dist(static_cast<std::size_t>(estimates.rows()));
  for (Eigen::Index j = 0; j < center.size(); ++j) {
    for (Eigen::Index b = 0; b < estimates.rows(); ++b)
      dist[static_cast<std::size_t>(b)] = std::abs(estimates(b, j) - center[j]);
    radii[j] = upper_order_statistic(dist, alpha_level);
  }
  return radii;
}

BootstrapResult summarize_replicates(const Vector& center, const Matrix& estimates, double alpha) {
  if (estimates.cols() != center.size())
    throw Error(ErrorCode::DimensionMismatch, "replicate estimates do not match the center dimension");
  if (estimates.rows() == 0) throw Error(ErrorCode::ResampleInstability, "no successful bootstrap replicates");
  BootstrapResult out;
  out.B = static_cast<std::size_t>(estimates.rows());
  out.estimates = estimates;
  out.center = center;
  out.alpha = alpha;
  out.joint_radius = out.joint_radius_at(alpha);
  out.component_radii = out.component_radii_at(alpha);
  return out;
}

EffectEstimate linear_estimate(const Dataset& data, double tau_n, const TailSide& side,
                               const std::optional<ResidualizeSpec>& pre_transform, const ExcelOptions& options) {
  if (!pre_transform) return excel_linear(data, tau_n, side, options);
  if (pre_transform->source == ResidualizeSpec::Source::ExposureComplement)
    return excel_covariate_residualized(data, pre_transform->exposure_idx, tau_n, side, options);
  if (!data.Z) throw Error(ErrorCode::MissingInstruments, "residualizing on instruments requires Z");
  Matrix exposure = data.X;
  if (!pre_transform->exposure_idx.empty()) {
    exposure.resize(data.n(), static_cast<Eigen::Index>(pre_transform->exposure_idx.size()));
    for (std::size_t k = 0; k < pre_transform->exposure_idx.size(); ++k) {
      const int j = pre_transform->exposure_idx[k];
      if (j < 0 || j >= data.d()) throw Error(ErrorCode::IndexOutOfRange, "exposure index out of range");
      exposure.col(static_cast<Eigen::Index>(k)) = data.X.col(j);
    }
  }
  return excel_residualized(data.y, exposure, *data.Z, tau_n, side, options);
}

BootstrapResult bootstrap_excel(const Dataset& data, double tau_n, const TailSide& side, double alpha, std::size_t B,
                                std::uint64_t seed, const std::optional<ResidualizeSpec>& pre_transform,
                                const BootstrapOptions& options) {
  data.validate();
  if (!(alpha > 0.0 && alpha <= 0.5)) throw Error(ErrorCode::OutOfRange, "alpha must lie in (0, 0.5]");
  if (B < 2) throw Error(ErrorCode::InvalidArgument, "bootstrap needs B >= 2");

  const auto full = linear_estimate(data, tau_n, side, pre_transform, options.excel);
  ExcelOptions warm = options.excel;
  warm.fit.warm_start = full.beta;

  const auto run = run_replicates(
      static_cast<std::size_t>(data.n()), B, seed, {stream_tag::kBootstrap},
      static_cast<std::size_t>(full.theta.size()),
      [&](const std::vector<std::size_t>& rows) {
        return linear_estimate(data.gather(rows), tau_n, side, pre_transform, warm).theta;
      },
      {options.threads});

  auto out = summarize_replicates(full.theta, run.estimates, alpha);
  out.B = B;
  out.seed = seed;
  out.failed = run.failed;
  out.redrawn = run.redrawn;
  if (B < 50) out.warnings.push_back("B < 50: bootstrap quantiles are unstable for inference");
  if (run.failed > 0) out.warnings.push_back(std::to_string(run.failed) + " replicates failed after a redraw");
  return out;
}

ConfidenceSet to_confidence_interval(const BootstrapResult& result, std::size_t component) {
  if (component >= static_cast<std::size_t>(result.center.size()))
    throw Error(ErrorCode::IndexOutOfRange, "component " + std::to_string(component) + " out of range");
  const auto j = static_cast<Eigen::Index>(component);
  const double c = result.component_radii[j];
  return ConfidenceSet::from_intervals({{result.center[j] - c, result.center[j] + c}}, result.alpha,
                                       SetMethod::ExcelBootstrap);
}

ConfidenceSet to_confidence_interval(const BootstrapResult& result, std::size_t component, double alpha) {
  if (component >= static_cast<std::size_t>(result.center.size()))
    throw Error(ErrorCode::IndexOutOfRange, "component " + std::to_string(component) + " out of range");
  const auto j = static_cast<Eigen::Index>(component);
  const double c = result.component_radii_at(alpha)[j];
  return ConfidenceSet::from_intervals({{result.center[j] - c, result.center[j] + c}}, alpha,
                                       SetMethod::ExcelBootstrap);
}

ConfidenceSet to_confidence_ball(const BootstrapResult& result) {
  return ConfidenceSet::ball(result.center, result.joint_radius, result.alpha, SetMethod::ExcelBootstrap);
}

}  // namespace excel
