#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <vector>

namespace excel {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Dense design matrix, one row per observation. Construction validates the
// shape and contents: n >= p >= 1, every entry finite, no all-zero column.
class DesignMatrix {
 public:
  explicit DesignMatrix(Matrix values);

  Eigen::Index rows() const { return values_.rows(); }
  Eigen::Index cols() const { return values_.cols(); }
  const Matrix& values() const { return values_; }
  auto row(Eigen::Index i) const { return values_.row(i); }

  // Rows gathered by index (bootstrap resamples). Not revalidated beyond the
  // zero-column check, which a resample can trip.
  DesignMatrix gather(const std::vector<std::size_t>& rows) const;

 private:
  Matrix values_;
};

// rho_q(z) = z * (q - 1{z < 0}).
inline double check_loss(double z, double level) { return z * (level - (z < 0.0 ? 1.0 : 0.0)); }

double mean_check_loss(const DesignMatrix& design, const Vector& y, const Vector& beta, double level);

struct QuantileFit {
  double level = 0.5;
  Vector beta;
  double objective = 0.0;        // mean check loss at beta
  std::size_t n_below = 0;       // residuals < -tol
  std::size_t n_zero = 0;        // |residual| <= 1e-8 (1 + |y_i|)
  std::vector<Eigen::Index> basis;  // observations interpolated by the fit
  int ipm_iterations = 0;
  int pivots = 0;
};

struct FitOptions {
  // Levels with level*n < 1 or (1-level)*n < 1 are rejected unless set.
  bool allow_degenerate_quantile = false;
  // Crossover to an interpolating vertex is run when n <= polish_limit.
  Eigen::Index polish_limit = 10000;
  // Start the vertex search from this coefficient vector instead of running
  // the interior-point phase. The optimum reached is the same vertex.
  std::optional<Vector> warm_start;
  double ipm_tolerance = 1e-10;
  int ipm_max_iterations = 200;
};

// Minimizes mean rho_level(y_i - x_i' beta). Primal-dual interior point on the
// bounded dual LP, followed by simplex pivots from an interpolating basis.
QuantileFit fit_check_loss(const DesignMatrix& design, const Vector& y, double quantile_level,
                           const FitOptions& options = {});

// Throws RankDeficient when column-pivoted QR finds rank < cols at relative
// threshold 1e-10.
void require_full_rank(const Matrix& design);

Vector fit_ols(const DesignMatrix& design, const Vector& y);

struct TslsFit {
  double theta = 0.0;
  double se = 0.0;  // HC0 sandwich
  std::size_t residual_df = 0;
  double first_stage_t = 0.0;  // largest |t| among excluded instruments
  bool weak_instrument = false;
};

struct TslsOptions {
  double weak_t_floor = 2.0;
};

// Single excluded instrument; controls enter both stages with an intercept.
// `controls` may have zero columns.
TslsFit fit_tsls(const Vector& y, const Vector& exposure, const Vector& instrument,
                 const Matrix& controls, const TslsOptions& options = {});

// Several excluded instruments used jointly.
TslsFit fit_tsls(const Vector& y, const Vector& exposure, const Matrix& instruments,
                 const Matrix& controls, const TslsOptions& options = {});

}  // namespace excel
