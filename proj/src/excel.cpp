#include "excel/excel.hpp"

#include "excel/error.hpp"
#include "excel/random.hpp"
#include "excel/replicate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace excel {

namespace {

Matrix drop_column(const Matrix& m, Eigen::Index c) {
  Matrix out(m.rows(), m.cols() - 1);
  out.leftCols(c) = m.leftCols(c);
  out.rightCols(m.cols() - c - 1) = m.rightCols(m.cols() - c - 1);
  return out;
}

Vector drop_entry(const Vector& v, Eigen::Index c) {
  Vector out(v.size() - 1);
  out.head(c) = v.head(c);
  out.tail(v.size() - c - 1) = v.tail(v.size() - c - 1);
  return out;
}

Vector insert_zero(const Vector& v, Eigen::Index c) {
  Vector out(v.size() + 1);
  out.head(c) = v.head(c);
  out[c] = 0.0;
  out.tail(v.size() - c) = v.tail(v.size() - c);
  return out;
}

void check_tau(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw Error(ErrorCode::OutOfRange, "tau must lie in (0, 1)");
}

bool outside_range(const Matrix& X, std::span<const double> x) {
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double v = x[static_cast<std::size_t>(j)];
    if (v < X.col(j).minCoeff() || v > X.col(j).maxCoeff()) return true;
  }
  return false;
}

Matrix with_intercept(const Matrix& m) {
  Matrix out(m.rows(), m.cols() + 1);
  out.col(0).setOnes();
  out.rightCols(m.cols()) = m;
  return out;
}

// Exposures standardized column-wise; constant columns are only centered.
Matrix standardize(const Matrix& X) {
  Matrix out = X.rowwise() - X.colwise().mean();
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double sd = std::sqrt(out.col(j).squaredNorm() / static_cast<double>(out.rows()));
    if (sd > 0.0) out.col(j) /= sd;
  }
  return out;
}

// Ordering score for grid placement: the column itself when d = 1, else the
// first principal component of the standardized exposures.
Vector grid_score(const Matrix& S) {
  if (S.cols() == 1) return S.col(0);
  const Matrix cov = S.transpose() * S / static_cast<double>(S.rows());
  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  Vector dir = eig.eigenvectors().col(S.cols() - 1);
  Eigen::Index lead = 0;
  dir.cwiseAbs().maxCoeff(&lead);
  if (dir[lead] < 0) dir = -dir;
  return S * dir;
}

}  // namespace

const char* to_string(Side side) { return side == Side::Upper ? "upper" : "lower"; }

double quantile_level(Side side, double tau) { return side == Side::Upper ? 1.0 - tau : tau; }

double default_tau(std::size_t n) { return 0.01 / std::pow(static_cast<double>(n), 0.25); }

BasisFit fit_basis(const Matrix& X, const Vector& y, double tau, const BasisSpec& spec, Side side,
                   const ExcelOptions& options) {
  check_tau(tau);
  if (X.cols() != spec.input_dim)
    throw Error(ErrorCode::DimensionMismatch, "basis expects " + std::to_string(spec.input_dim) +
                                                  " exposure columns, data has " + std::to_string(X.cols()));
  if (X.rows() != y.size()) throw Error(ErrorCode::DimensionMismatch, "X and y have different row counts");
  BasisFit out;
  out.basis = spec.ready() ? spec : place_knots(spec, X);
  Matrix D = expand_design(out.basis, X);
  FitOptions fit_options = options.fit;
  const auto dropped = out.basis.redundant_column();
  if (dropped) {
    D = drop_column(D, *dropped);
    if (fit_options.warm_start && fit_options.warm_start->size() == D.cols() + 1)
      fit_options.warm_start = drop_entry(*fit_options.warm_start, *dropped);
  }
  out.fit = fit_check_loss(DesignMatrix(std::move(D)), y, quantile_level(side, tau), fit_options);
  out.beta = dropped ? insert_zero(out.fit.beta, *dropped) : out.fit.beta;
  return out;
}

double contrast(const BasisSpec& spec, const Vector& beta, std::span<const double> x, std::span<const double> x0) {
  const Vector diff = evaluate_basis(spec, x) - evaluate_basis(spec, x0);
  if (diff.size() != beta.size()) throw Error(ErrorCode::DimensionMismatch, "coefficient length does not match basis");
  return diff.dot(beta);
}

EffectEstimate excel_effect(const Dataset& data, std::span<const double> x, std::span<const double> x0, double tau,
                            const BasisSpec& spec, const TailSide& side, const ExcelOptions& options) {
  data.validate();
  if (static_cast<Eigen::Index>(x.size()) != data.d() || static_cast<Eigen::Index>(x0.size()) != data.d())
    throw Error(ErrorCode::DimensionMismatch, "evaluation points must have one entry per exposure column");
  auto fitted = fit_basis(data.X, data.y, tau, spec, side.side, options);
  EffectEstimate out;
  out.tau = tau;
  out.tail = side;
  out.basis = std::move(fitted.basis);
  out.beta = std::move(fitted.beta);
  out.fit = std::move(fitted.fit);
  BasisWarnings warnings;
  const Vector diff = evaluate_basis(out.basis, x, &warnings) - evaluate_basis(out.basis, x0, &warnings);
  out.theta = Vector::Constant(1, diff.dot(out.beta));
  out.support_warning = warnings.clamped || outside_range(data.X, x) || outside_range(data.X, x0);
  return out;
}

EffectEstimate excel_linear(const Dataset& data, double tau_n, const TailSide& side, const ExcelOptions& options) {
  data.validate();
  auto fitted = fit_basis(data.X, data.y, tau_n, BasisSpec::identity(static_cast<int>(data.d())), side.side, options);
  EffectEstimate out;
  out.tau = tau_n;
  out.tail = side;
  out.basis = std::move(fitted.basis);
  out.beta = std::move(fitted.beta);
  out.fit = std::move(fitted.fit);
  out.mu = out.beta[0];
  out.theta = out.beta.tail(data.d());
  return out;
}

TailSide select_tail(const Dataset& data, double tau, const BasisSpec& spec, std::span<const double> x0,
                     const TailSelectionOptions& options) {
  data.validate();
  const auto n = data.n();
  if (n < 20) throw Error(ErrorCode::TooFewObservations, "tail selection needs at least 20 observations");
  if (options.num_grid < 2) throw Error(ErrorCode::InvalidArgument, "tail selection needs at least two grid points");
  if (static_cast<Eigen::Index>(x0.size()) != data.d())
    throw Error(ErrorCode::DimensionMismatch, "x0 must have one entry per exposure column");

  const auto upper = fit_basis(data.X, data.y, tau, spec, Side::Upper, options.excel);
  const auto lower = fit_basis(data.X, data.y, tau, upper.basis, Side::Lower, options.excel);
  const Matrix V = expand_design(upper.basis, data.X);
  const Vector v0 = evaluate_basis(upper.basis, x0);
  const Matrix contrasts = V.rowwise() - v0.transpose();
  const Vector res_upper = data.y - contrasts * upper.beta;
  const Vector res_lower = data.y - contrasts * lower.beta;

  const Matrix S = standardize(data.X);
  const Vector score = grid_score(S);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return score[a] < score[b]; });

  const auto neighbours = std::min<Eigen::Index>(
      n, std::max<Eigen::Index>(5, static_cast<Eigen::Index>(std::floor(n / std::log(static_cast<double>(n))))));
  const int K = options.num_grid;
  Vector q_upper(K), q_lower(K);
  std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n));
  for (int k = 1; k <= K; ++k) {
    const auto pos = static_cast<std::size_t>(std::lround(k * static_cast<double>(n - 1) / (K + 1.0)));
    const Eigen::Index g = order[pos];
    for (Eigen::Index i = 0; i < n; ++i) dist[static_cast<std::size_t>(i)] = {(S.row(i) - S.row(g)).squaredNorm(), i};
    std::nth_element(dist.begin(), dist.begin() + (neighbours - 1), dist.end());
    double hi = -std::numeric_limits<double>::infinity();
    double lo = std::numeric_limits<double>::infinity();
    for (Eigen::Index m = 0; m < neighbours; ++m) {
      const auto i = dist[static_cast<std::size_t>(m)].second;
      hi = std::max(hi, res_upper[i]);
      lo = std::min(lo, res_lower[i]);
    }
    q_upper[k - 1] = hi;
    q_lower[k - 1] = lo;
  }

  TailSide out;
  out.range_upper = q_upper.maxCoeff() - q_upper.minCoeff();
  out.range_lower = q_lower.maxCoeff() - q_lower.minCoeff();
  out.side = out.range_upper <= out.range_lower ? Side::Upper : Side::Lower;
  return out;
}

TauSelection select_tau(const Dataset& data, const std::vector<double>& candidates, std::size_t B,
                        std::span<const double> x, std::span<const double> x0, const BasisSpec& spec,
                        const TailSide& side, std::uint64_t seed, const TauSelectionOptions& options) {
  data.validate();
  if (candidates.empty()) throw Error(ErrorCode::InvalidArgument, "select_tau needs at least one candidate");
  if (B < 2) throw Error(ErrorCode::InvalidArgument, "select_tau needs B >= 2");
  const auto n = static_cast<double>(data.n());
  for (double tau : candidates) {
    check_tau(tau);
    if (!options.allow_degenerate && tau / 2.0 * n < 1.0)
      throw Error(ErrorCode::DegenerateCandidate, "candidate tau " + std::to_string(tau) +
                                                      " leaves fewer than one expected observation beyond tau/2");
  }

  ExcelOptions excel = options.excel;
  excel.fit.allow_degenerate_quantile = excel.fit.allow_degenerate_quantile || options.allow_degenerate;
  const BasisSpec basis = spec.ready() ? spec : place_knots(spec, data.X);

  TauSelection out;
  out.candidates = candidates;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    const double tau = candidates[c];
    const auto full = fit_basis(data.X, data.y, tau, basis, side.side, excel);
    const auto half = fit_basis(data.X, data.y, tau / 2.0, basis, side.side, excel);
    ExcelOptions warm_full = excel, warm_half = excel;
    warm_full.fit.warm_start = full.beta;
    warm_half.fit.warm_start = half.beta;

    const auto run = run_replicates(
        static_cast<std::size_t>(data.n()), B, seed, {stream_tag::kSelectTau, c}, 2,
        [&](const std::vector<std::size_t>& rows) {
          const Dataset sample = data.gather(rows);
          const auto a = fit_basis(sample.X, sample.y, tau, basis, side.side, warm_full);
          const auto b = fit_basis(sample.X, sample.y, tau / 2.0, basis, side.side, warm_half);
          Vector v(2);
          v << contrast(basis, a.beta, x, x0), contrast(basis, b.beta, x, x0);
          return v;
        },
        {options.threads});

    const Vector m = run.estimates.colwise().mean();
    TauRow row;
    row.tau = tau;
    row.bias_hat = m[0] - m[1];
    row.var_hat = (run.estimates.col(0).array() - m[0]).square().mean();
    row.mse_hat = row.bias_hat * row.bias_hat + row.var_hat;
    row.failed = run.failed;
    out.per_tau.push_back(row);
  }
  const auto best = std::min_element(out.per_tau.begin(), out.per_tau.end(),
                                     [](const TauRow& a, const TauRow& b) { return a.mse_hat < b.mse_hat; });
  out.chosen = best->tau;
  return out;
}

EffectEstimate excel_covariate_avg(const Dataset& data, const std::vector<int>& exposure_idx,
                                   std::span<const double> xA, std::span<const double> xA0, double tau,
                                   const BasisSpec& spec, const TailSide& side, const ExcelOptions& options) {
  data.validate();
  const auto d = data.d();
  if (exposure_idx.empty()) throw Error(ErrorCode::InvalidArgument, "exposure set A is empty");
  if (xA.size() != exposure_idx.size() || xA0.size() != exposure_idx.size())
    throw Error(ErrorCode::DimensionMismatch, "xA and xA0 must have one entry per exposure index");
  std::vector<bool> in_A(static_cast<std::size_t>(d), false);
  for (int j : exposure_idx) {
    if (j < 0 || j >= d) throw Error(ErrorCode::IndexOutOfRange, "exposure index " + std::to_string(j) + " out of range");
    if (in_A[static_cast<std::size_t>(j)]) throw Error(ErrorCode::InvalidArgument, "duplicate exposure index");
    in_A[static_cast<std::size_t>(j)] = true;
  }

  auto fitted = fit_basis(data.X, data.y, tau, spec, side.side, options);
  EffectEstimate out;
  out.tau = tau;
  out.tail = side;
  out.basis = std::move(fitted.basis);
  out.beta = std::move(fitted.beta);
  out.fit = std::move(fitted.fit);

  std::vector<double> a(static_cast<std::size_t>(d)), b(static_cast<std::size_t>(d));
  auto place = [&](Eigen::Index i) {
    for (Eigen::Index j = 0; j < d; ++j) a[static_cast<std::size_t>(j)] = b[static_cast<std::size_t>(j)] = i < 0 ? 0.0 : data.X(i, j);
    for (std::size_t k = 0; k < exposure_idx.size(); ++k) {
      a[static_cast<std::size_t>(exposure_idx[k])] = xA[k];
      b[static_cast<std::size_t>(exposure_idx[k])] = xA0[k];
    }
  };
  const bool complement_empty = static_cast<Eigen::Index>(exposure_idx.size()) == d;
  BasisWarnings warnings;
  double theta = 0.0;
  if (complement_empty) {
    place(-1);
    theta = (evaluate_basis(out.basis, a, &warnings) - evaluate_basis(out.basis, b, &warnings)).dot(out.beta);
  } else {
    for (Eigen::Index i = 0; i < data.n(); ++i) {
      place(i);
      theta += (evaluate_basis(out.basis, a, &warnings) - evaluate_basis(out.basis, b, &warnings)).dot(out.beta);
    }
    theta /= static_cast<double>(data.n());
  }
  out.theta = Vector::Constant(1, theta);
  out.support_warning = warnings.clamped;
  for (std::size_t k = 0; k < exposure_idx.size(); ++k) {
    const auto col = data.X.col(exposure_idx[k]);
    for (double v : {xA[k], xA0[k]})
      if (v < col.minCoeff() || v > col.maxCoeff()) out.support_warning = true;
  }
  return out;
}

EffectEstimate excel_residualized(const Vector& y, const Matrix& exposure, const Matrix& covariates, double tau_n,
                                  const TailSide& side, const ExcelOptions& options) {
  if (exposure.rows() != y.size() || covariates.rows() != y.size())
    throw Error(ErrorCode::DimensionMismatch, "residualization inputs have different row counts");
  if (exposure.cols() < 1) throw Error(ErrorCode::InvalidArgument, "exposure block is empty");
  const DesignMatrix C(with_intercept(covariates));
  require_full_rank(C.values());
  // One least-squares solve for the outcome and every exposure column.
  Matrix targets(y.size(), exposure.cols() + 1);
  targets.col(0) = y;
  targets.rightCols(exposure.cols()) = exposure;
  const Matrix coef = C.values().colPivHouseholderQr().solve(targets);
  const Matrix resid = targets - C.values() * coef;
  const Vector xi_y = resid.col(0);
  const Matrix xi_a = resid.rightCols(exposure.cols());

  auto fitted = fit_basis(xi_a, xi_y, tau_n, BasisSpec::identity(static_cast<int>(exposure.cols())), side.side, options);
  EffectEstimate out;
  out.tau = tau_n;
  out.tail = side;
  out.basis = std::move(fitted.basis);
  out.beta = std::move(fitted.beta);
  out.fit = std::move(fitted.fit);
  out.mu = out.beta[0];
  out.theta = out.beta.tail(exposure.cols());
  return out;
}

EffectEstimate excel_covariate_residualized(const Dataset& data, const std::vector<int>& exposure_idx, double tau_n,
                                            const TailSide& side, const ExcelOptions& options) {
  data.validate();
  const auto d = data.d();
  std::vector<bool> in_A(static_cast<std::size_t>(d), false);
  for (int j : exposure_idx) {
    if (j < 0 || j >= d) throw Error(ErrorCode::IndexOutOfRange, "exposure index " + std::to_string(j) + " out of range");
    in_A[static_cast<std::size_t>(j)] = true;
  }
  if (exposure_idx.empty()) throw Error(ErrorCode::InvalidArgument, "exposure set A is empty");
  Matrix A(data.n(), static_cast<Eigen::Index>(exposure_idx.size()));
  for (std::size_t k = 0; k < exposure_idx.size(); ++k) A.col(static_cast<Eigen::Index>(k)) = data.X.col(exposure_idx[k]);
  const auto n_cov = d - std::count(in_A.begin(), in_A.end(), true);
  Matrix C(data.n(), n_cov);
  for (Eigen::Index j = 0, c = 0; j < d; ++j)
    if (!in_A[static_cast<std::size_t>(j)]) C.col(c++) = data.X.col(j);
  return excel_residualized(data.y, A, C, tau_n, side, options);
}

}  // namespace excel
