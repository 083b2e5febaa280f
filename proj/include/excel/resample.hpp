#pragma once

#include "excel/dataset.hpp"
#include "excel/excel.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace excel {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double length() const { return hi - lo; }
  bool contains(double v) const { return lo <= v && v <= hi; }
  bool intersects(const Interval& o) const { return lo <= o.hi && o.lo <= hi; }
  bool operator==(const Interval&) const = default;
};

// Sorted, with overlapping or touching intervals merged.
std::vector<Interval> normalize_intervals(std::vector<Interval> intervals);

enum class SetMethod { ExcelBootstrap, PerIvTsls, UnionIvRepair };
const char* to_string(SetMethod method);

// A union of disjoint closed intervals (scalar parameter) or a Euclidean ball.
struct ConfidenceSet {
  std::vector<Interval> intervals;
  std::optional<Vector> center;  // set for a ball
  double radius = 0.0;
  double alpha = 0.05;
  SetMethod method = SetMethod::ExcelBootstrap;
  bool flagged = false;  // fallback or weak-instrument result

  static ConfidenceSet from_intervals(std::vector<Interval> intervals, double alpha, SetMethod method);
  static ConfidenceSet ball(Vector center, double radius, double alpha, SetMethod method);

  bool is_ball() const { return center.has_value(); }
  double total_length() const;
  bool contains(double value) const;
  bool contains(const Vector& value) const;
};

// Pre-transform for the bootstrap: residualize the outcome and exposures on
// [1, covariates] inside every replicate before the tail regression.
struct ResidualizeSpec {
  enum class Source { Instruments, ExposureComplement };
  Source source = Source::Instruments;
  // Exposure columns of X. Empty means all of X (Instruments source only).
  std::vector<int> exposure_idx;
};

// Point estimate with the optional pre-transform applied.
EffectEstimate linear_estimate(const Dataset& data, double tau_n, const TailSide& side,
                               const std::optional<ResidualizeSpec>& pre_transform, const ExcelOptions& options = {});

struct BootstrapResult {
  std::size_t B = 0;           // replicates requested
  Matrix estimates;            // successful replicates x d
  Vector center;               // theta_hat on the full data
  double joint_radius = 0.0;
  Vector component_radii;
  double alpha = 0.05;
  std::uint64_t seed = 0;
  std::size_t failed = 0;
  std::size_t redrawn = 0;
  std::vector<std::string> warnings;

  // Radii at another level from the same replicate distribution.
  double joint_radius_at(double alpha_level) const;
  Vector component_radii_at(double alpha_level) const;
};

// Upper order statistic ceil((1 - alpha) m) of the values, 1-based.
double upper_order_statistic(std::vector<double> values, double alpha);

// Fills radii from replicate estimates around a center.
BootstrapResult summarize_replicates(const Vector& center, const Matrix& estimates, double alpha);

struct BootstrapOptions {
  int threads = 1;
  ExcelOptions excel;
};

BootstrapResult bootstrap_excel(const Dataset& data, double tau_n, const TailSide& side, double alpha, std::size_t B,
                                std::uint64_t seed, const std::optional<ResidualizeSpec>& pre_transform = std::nullopt,
                                const BootstrapOptions& options = {});

// [theta_j - c_j, theta_j + c_j]
ConfidenceSet to_confidence_interval(const BootstrapResult& result, std::size_t component);
ConfidenceSet to_confidence_interval(const BootstrapResult& result, std::size_t component, double alpha);

// Ball {theta : |theta - center| <= c}
ConfidenceSet to_confidence_ball(const BootstrapResult& result);

}  // namespace excel
