#pragma once

#include "excel/basis.hpp"
#include "excel/dataset.hpp"
#include "excel/qr_core.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace excel {

enum class Side { Upper, Lower };

struct TailSide {
  Side side = Side::Upper;
  // Ranges of the neighbourhood extremes of the upper and lower residuals.
  // NaN when the side was set by hand rather than selected.
  double range_upper = std::numeric_limits<double>::quiet_NaN();
  double range_lower = std::numeric_limits<double>::quiet_NaN();

  static TailSide upper() { return {}; }
  static TailSide lower() { return {Side::Lower}; }
};

const char* to_string(Side side);

// Upper tail fits the 1 - tau quantile, lower tail the tau quantile.
double quantile_level(Side side, double tau);

// 0.01 / n^{1/4}
double default_tau(std::size_t n);

struct EffectEstimate {
  Vector theta;               // length 1 for a pointwise contrast, d for the linear model
  std::optional<double> mu;   // intercept, linear model only
  double tau = 0.0;
  TailSide tail;
  BasisSpec basis;            // knots placed
  Vector beta;                // full length output_dim; a dropped spline column holds 0
  bool support_warning = false;  // x or x0 outside the observed exposure range
  QuantileFit fit;
};

struct ExcelOptions {
  FitOptions fit;
};

// Quantile fit of y on the basis expansion of X at the tail level. Places
// spline knots from X when needed; the spline column collinear with the
// intercept is dropped for the solve and reported as a zero coefficient.
struct BasisFit {
  BasisSpec basis;
  Vector beta;
  QuantileFit fit;
};
BasisFit fit_basis(const Matrix& X, const Vector& y, double tau, const BasisSpec& spec, Side side,
                   const ExcelOptions& options = {});

// theta = (v(x) - v(x0))' beta
EffectEstimate excel_effect(const Dataset& data, std::span<const double> x, std::span<const double> x0, double tau,
                            const BasisSpec& spec, const TailSide& side, const ExcelOptions& options = {});

// Contrast of an already fitted basis model.
double contrast(const BasisSpec& spec, const Vector& beta, std::span<const double> x, std::span<const double> x0);

// (mu, theta) from the tail quantile regression of y on [1, X].
EffectEstimate excel_linear(const Dataset& data, double tau_n, const TailSide& side, const ExcelOptions& options = {});

struct TailSelectionOptions {
  int num_grid = 10;
  ExcelOptions excel;
};

TailSide select_tail(const Dataset& data, double tau, const BasisSpec& spec, std::span<const double> x0,
                     const TailSelectionOptions& options = {});

struct TauRow {
  double tau = 0.0;
  double bias_hat = 0.0;
  double var_hat = 0.0;
  double mse_hat = 0.0;
  std::size_t failed = 0;
};

struct TauSelection {
  std::vector<double> candidates;
  double chosen = 0.0;
  std::vector<TauRow> per_tau;
};

struct TauSelectionOptions {
  int threads = 1;
  // Let the tau/2 fits run below one expected tail observation instead of
  // raising DegenerateCandidate.
  bool allow_degenerate = false;
  ExcelOptions excel;
};

TauSelection select_tau(const Dataset& data, const std::vector<double>& candidates, std::size_t B,
                        std::span<const double> x, std::span<const double> x0, const BasisSpec& spec,
                        const TailSide& side, std::uint64_t seed, const TauSelectionOptions& options = {});

// Average over the empirical covariate distribution of the contrast in the
// exposure block A, holding the remaining columns at their observed values.
EffectEstimate excel_covariate_avg(const Dataset& data, const std::vector<int>& exposure_idx,
                                   std::span<const double> xA, std::span<const double> xA0, double tau,
                                   const BasisSpec& spec, const TailSide& side, const ExcelOptions& options = {});

// Residualize y and the exposure block on [1, covariates] by OLS, then fit
// the tail quantile regression of the outcome residual on [1, exposure
// residuals]. Returns theta for the exposure block and the intercept as mu.
EffectEstimate excel_residualized(const Vector& y, const Matrix& exposure, const Matrix& covariates, double tau_n,
                                  const TailSide& side, const ExcelOptions& options = {});

// Covariates are the columns of X outside A.
EffectEstimate excel_covariate_residualized(const Dataset& data, const std::vector<int>& exposure_idx, double tau_n,
                                            const TailSide& side, const ExcelOptions& options = {});

}  // namespace excel
