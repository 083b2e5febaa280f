#include "excel/qr_core.hpp"

#include "excel/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace excel {

using Eigen::Index;

DesignMatrix::DesignMatrix(Matrix values) : values_(std::move(values)) {
  if (values_.cols() < 1 || values_.rows() < values_.cols()) {
    throw Error(ErrorCode::DimensionMismatch,
                "design must satisfy n >= p >= 1, got n=" + std::to_string(values_.rows()) +
                    " p=" + std::to_string(values_.cols()));
  }
  if (!values_.allFinite()) throw Error(ErrorCode::NonFinite, "design contains non-finite entries");
  for (Index j = 0; j < values_.cols(); ++j) {
    if ((values_.col(j).array() == 0.0).all()) {
      throw Error(ErrorCode::RankDeficient, "design column " + std::to_string(j) + " is identically zero");
    }
  }
}

DesignMatrix DesignMatrix::gather(const std::vector<std::size_t>& rows) const {
  Matrix out(static_cast<Index>(rows.size()), values_.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = values_.row(static_cast<Index>(rows[i]));
  return DesignMatrix(std::move(out));
}

double mean_check_loss(const DesignMatrix& design, const Vector& y, const Vector& beta, double level) {
  const Vector r = y - design.values() * beta;
  double total = 0.0;
  for (Index i = 0; i < r.size(); ++i) total += check_loss(r[i], level);
  return total / static_cast<double>(r.size());
}

void require_full_rank(const Matrix& design) {
  Eigen::ColPivHouseholderQR<Matrix> qr(design);
  qr.setThreshold(1e-10);
  if (qr.rank() < design.cols()) {
    throw Error(ErrorCode::RankDeficient, "design has numerical rank " + std::to_string(qr.rank()) +
                                              " < " + std::to_string(design.cols()));
  }
}

namespace {

struct IpmResult {
  Vector beta;
  int iterations = 0;
  bool converged = false;
};

double max_step(const Vector& value, const Vector& delta) {
  double step = 1.0;
  for (Index i = 0; i < value.size(); ++i) {
    if (delta[i] < 0.0) step = std::min(step, -value[i] / delta[i]);
  }
  return step;
}

// Mehrotra predictor-corrector on the dual of the check-loss LP:
//   max y'a  s.t.  X'a = (1 - q) X'1,  0 <= a <= 1,
// written as min c'a with c = -y. The multiplier w of the equality
// constraint gives beta = -w.
IpmResult interior_point(const Matrix& X, const Vector& y, double q, double tol, int max_iter) {
  const Index n = X.rows();
  const double step_scale = 0.99995;

  const Vector c = -y;
  const Vector b = (1.0 - q) * X.colwise().sum().transpose();
  Vector a = Vector::Constant(n, 1.0 - q);
  Vector s = Vector::Constant(n, q);
  Vector w = X.colPivHouseholderQr().solve(c);
  Vector r = c - X * w;
  const double floor = std::max(1e-2 * r.cwiseAbs().mean(), 1e-8);
  Vector zl = r.cwiseMax(0.0).array() + floor;
  Vector zu = (-r).cwiseMax(0.0).array() + floor;

  const double c_scale = 1.0 + c.cwiseAbs().maxCoeff();
  const double b_scale = 1.0 + b.cwiseAbs().maxCoeff();

  Vector theta(n), rho(n), da(n), dzl(n), dzu(n), dw;
  IpmResult result;
  for (int it = 0; it < max_iter; ++it) {
    const Vector rp = b - X.transpose() * a;
    const Vector rd = c - X * w - zl + zu;
    const double gap = a.dot(zl) + s.dot(zu);
    const double objective = c.dot(a);
    result.iterations = it;
    if (gap <= tol * (1.0 + std::abs(objective)) && rp.cwiseAbs().maxCoeff() <= tol * b_scale * n &&
        rd.cwiseAbs().maxCoeff() <= tol * c_scale) {
      result.converged = true;
      break;
    }

    theta = (zl.cwiseQuotient(a) + zu.cwiseQuotient(s)).cwiseInverse();
    const Matrix normal = X.transpose() * theta.asDiagonal() * X;
    const Eigen::LLT<Matrix> chol(normal);
    if (chol.info() != Eigen::Success) break;

    auto direction = [&](const Vector& rl, const Vector& ru) {
      rho = rd - rl.cwiseQuotient(a) + ru.cwiseQuotient(s);
      dw = chol.solve(rp + X.transpose() * theta.cwiseProduct(rho));
      da = theta.cwiseProduct(X * dw - rho);
      dzl = (rl - zl.cwiseProduct(da)).cwiseQuotient(a);
      dzu = (ru + zu.cwiseProduct(da)).cwiseQuotient(s);
    };

    // Predictor.
    direction(-a.cwiseProduct(zl), -s.cwiseProduct(zu));
    double alpha_p = std::min(max_step(a, da), max_step(s, -da));
    double alpha_d = std::min(max_step(zl, dzl), max_step(zu, dzu));
    const double mu = gap / (2.0 * n);
    const double mu_aff = ((a + alpha_p * da).dot(zl + alpha_d * dzl) +
                           (s - alpha_p * da).dot(zu + alpha_d * dzu)) /
                          (2.0 * n);
    const double sigma = std::pow(mu_aff / mu, 3);

    // Corrector.
    const Vector rl = (sigma * mu - a.cwiseProduct(zl).array() - da.cwiseProduct(dzl).array()).matrix();
    const Vector ru = (sigma * mu - s.cwiseProduct(zu).array() + da.cwiseProduct(dzu).array()).matrix();
    direction(rl, ru);
    alpha_p = std::min(1.0, step_scale * std::min(max_step(a, da), max_step(s, -da)));
    alpha_d = std::min(1.0, step_scale * std::min(max_step(zl, dzl), max_step(zu, dzu)));

    a += alpha_p * da;
    s -= alpha_p * da;
    w += alpha_d * dw;
    zl += alpha_d * dzl;
    zu += alpha_d * dzu;
    result.iterations = it + 1;
  }
  result.beta = -w;
  return result;
}

// Simplex pivots over interpolating vertices. A vertex is p observations the
// fit passes through (the basis); every other observation carries a sign
// saying which side of the fit it is accounted on.
class VertexSearch {
 public:
  VertexSearch(const Matrix& X, const Vector& y, double q) : X_(X), y_(y), q_(q), n_(X.rows()), p_(X.cols()) {}

  void start_from(const Vector& beta0) {
    const Vector r0 = y_ - X_ * beta0;
    std::vector<Index> order(static_cast<std::size_t>(n_));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Index i, Index j) { return std::abs(r0[i]) < std::abs(r0[j]); });

    // Greedy: take the closest rows that keep the chosen set independent.
    basis_.clear();
    Matrix ortho(p_, p_);
    for (Index i : order) {
      if (static_cast<Index>(basis_.size()) == p_) break;
      Vector v = X_.row(i).transpose();
      const double norm0 = v.norm();
      for (Index k = 0; k < static_cast<Index>(basis_.size()); ++k) v -= ortho.col(k).dot(v) * ortho.col(k);
      if (v.norm() > 1e-9 * norm0) {
        ortho.col(static_cast<Index>(basis_.size())) = v / v.norm();
        basis_.push_back(i);
      }
    }
    if (static_cast<Index>(basis_.size()) < p_) {
      throw Error(ErrorCode::RankDeficient, "no nonsingular interpolating basis exists");
    }

    solve_vertex();
    sign_.assign(static_cast<std::size_t>(n_), 1);
    for (Index i = 0; i < n_; ++i) sign_[i] = residual_[i] < 0.0 ? -1 : 1;
    for (Index k : basis_) sign_[k] = 0;
  }

  int run(int max_pivots) {
    int pivots = 0;
    bool degenerate = false;
    Vector gradient(p_), delta(p_), d(n_);
    std::vector<Crossing> crossings;
    crossings.reserve(static_cast<std::size_t>(n_));

    while (true) {
      gradient.setZero();
      for (Index i = 0; i < n_; ++i) {
        if (sign_[i] != 0) gradient += (sign_[i] > 0 ? q_ : q_ - 1.0) * X_.row(i).transpose();
      }
      const Vector lambda = lu_.transpose().solve(gradient);

      // Entering edge: most negative directional derivative, or Bland's rule
      // (lowest observation index) right after a degenerate pivot.
      Index leave = -1;
      int direction = 0;
      double best = 0.0;
      Index best_obs = n_;
      for (Index k = 0; k < p_; ++k) {
        const double tol = 1e-10 * (1.0 + std::abs(lambda[k]));
        const double up = (1.0 - q_) - lambda[k];
        const double down = q_ + lambda[k];
        for (int dir : {1, -1}) {
          const double deriv = dir > 0 ? up : down;
          if (deriv >= -tol) continue;
          const bool better = degenerate ? basis_[k] < best_obs : deriv < best;
          if (leave < 0 || better) {
            leave = k;
            direction = dir;
            best = deriv;
            best_obs = basis_[k];
          }
        }
      }
      if (leave < 0) return pivots;
      if (pivots >= max_pivots) throw Error(ErrorCode::SolverFailure, "vertex search exceeded pivot limit");

      delta = lu_.solve(Vector::Unit(p_, leave)) * static_cast<double>(direction);
      d.noalias() = X_ * delta;

      crossings.clear();
      for (Index i = 0; i < n_; ++i) {
        const int sg = sign_[i];
        if (sg > 0 && d[i] > 0.0) {
          crossings.push_back({std::max(residual_[i], 0.0) / d[i], i});
        } else if (sg < 0 && d[i] < 0.0) {
          crossings.push_back({std::min(residual_[i], 0.0) / d[i], i});
        }
      }

      const Index enter = walk_crossings(crossings, d, best);
      if (enter < 0) throw Error(ErrorCode::SolverFailure, "check-loss objective unbounded along edge");

      const Index left = basis_[leave];
      basis_[leave] = enter;
      sign_[left] = direction > 0 ? -1 : 1;
      sign_[enter] = 0;
      const double step = step_;
      solve_vertex();
      degenerate = step <= 1e-14 * (1.0 + std::abs(beta_.cwiseAbs().maxCoeff()));
      ++pivots;
    }
  }

  const Vector& beta() const { return beta_; }
  const std::vector<Index>& basis() const { return basis_; }

 private:
  struct Crossing {
    double t;
    Index obs;
  };

  // Long step through breakpoints while the directional derivative stays
  // negative; crossed observations switch sides.
  Index walk_crossings(std::vector<Crossing>& crossings, const Vector& d, double slope) {
    auto less = [](const Crossing& u, const Crossing& v) { return u.t < v.t || (u.t == v.t && u.obs < v.obs); };
    std::size_t sorted = 0;
    std::size_t chunk = 32;
    for (std::size_t idx = 0; idx < crossings.size(); ++idx) {
      if (idx == sorted) {
        const std::size_t end = std::min(crossings.size(), sorted + chunk);
        if (end < crossings.size()) {
          std::nth_element(crossings.begin() + static_cast<std::ptrdiff_t>(sorted),
                           crossings.begin() + static_cast<std::ptrdiff_t>(end - 1), crossings.end(), less);
        }
        std::sort(crossings.begin() + static_cast<std::ptrdiff_t>(sorted),
                  crossings.begin() + static_cast<std::ptrdiff_t>(end), less);
        sorted = end;
        chunk *= 4;
      }
      const Crossing& cr = crossings[idx];
      slope += std::abs(d[cr.obs]);
      if (slope >= 0.0) {
        for (std::size_t k = 0; k < idx; ++k) sign_[crossings[k].obs] = -sign_[crossings[k].obs];
        step_ = cr.t;
        return cr.obs;
      }
    }
    return -1;
  }

  void solve_vertex() {
    Matrix xh(p_, p_);
    Vector yh(p_);
    for (Index k = 0; k < p_; ++k) {
      xh.row(k) = X_.row(basis_[k]);
      yh[k] = y_[basis_[k]];
    }
    lu_.compute(xh);
    beta_ = lu_.solve(yh);
    residual_ = y_ - X_ * beta_;
  }

  const Matrix& X_;
  const Vector& y_;
  double q_;
  Index n_, p_;
  std::vector<Index> basis_;
  std::vector<signed char> sign_;
  Eigen::PartialPivLU<Matrix> lu_;
  Vector beta_, residual_;
  double step_ = 0.0;
};

}  // namespace

QuantileFit fit_check_loss(const DesignMatrix& design, const Vector& y, double quantile_level,
                           const FitOptions& options) {
  const Matrix& X = design.values();
  const Index n = X.rows();
  const Index p = X.cols();
  if (y.size() != n) throw Error(ErrorCode::DimensionMismatch, "response length differs from design rows");
  if (!y.allFinite()) throw Error(ErrorCode::NonFinite, "response contains non-finite values");
  if (!(quantile_level > 0.0 && quantile_level < 1.0) || !std::isfinite(quantile_level)) {
    throw Error(ErrorCode::InvalidArgument, "quantile level must lie in (0, 1)");
  }
  const double dn = static_cast<double>(n);
  if (!options.allow_degenerate_quantile && (quantile_level * dn < 1.0 || (1.0 - quantile_level) * dn < 1.0)) {
    throw Error(ErrorCode::DegenerateQuantile,
                "quantile level " + std::to_string(quantile_level) + " is too extreme for n=" + std::to_string(n));
  }
  require_full_rank(X);

  QuantileFit fit;
  fit.level = quantile_level;
  Vector start;
  if (options.warm_start) {
    if (options.warm_start->size() != p) throw Error(ErrorCode::DimensionMismatch, "warm start has wrong length");
    start = *options.warm_start;
  } else {
    IpmResult ipm = interior_point(X, y, quantile_level, options.ipm_tolerance, options.ipm_max_iterations);
    fit.ipm_iterations = ipm.iterations;
    start = std::move(ipm.beta);
    if (!start.allFinite()) throw Error(ErrorCode::SolverFailure, "interior point iterate diverged");
  }

  if (n <= options.polish_limit || options.warm_start) {
    VertexSearch search(X, y, quantile_level);
    search.start_from(start);
    fit.pivots = search.run(static_cast<int>(20 * n + 100));
    fit.beta = search.beta();
    fit.basis = search.basis();
  } else {
    fit.beta = std::move(start);
  }

  const Vector r = y - X * fit.beta;
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    total += check_loss(r[i], quantile_level);
    if (std::abs(r[i]) <= 1e-8 * (1.0 + std::abs(y[i]))) {
      ++fit.n_zero;
    } else if (r[i] < 0.0) {
      ++fit.n_below;
    }
  }
  fit.objective = total / dn;
  return fit;
}

Vector fit_ols(const DesignMatrix& design, const Vector& y) {
  if (y.size() != design.rows()) throw Error(ErrorCode::DimensionMismatch, "response length differs from design rows");
  if (!y.allFinite()) throw Error(ErrorCode::NonFinite, "response contains non-finite values");
  Eigen::ColPivHouseholderQR<Matrix> qr(design.values());
  qr.setThreshold(1e-10);
  if (qr.rank() < design.cols()) throw Error(ErrorCode::RankDeficient, "OLS design is rank deficient");
  return qr.solve(y);
}

namespace {

Matrix with_intercept(const Matrix& block, const Matrix& controls) {
  const Index n = block.rows();
  Matrix out(n, 1 + block.cols() + controls.cols());
  out.col(0).setOnes();
  out.middleCols(1, block.cols()) = block;
  if (controls.cols() > 0) out.rightCols(controls.cols()) = controls;
  return out;
}

// (A'A)^{-1} A' diag(u^2) A (A'A)^{-1}
Matrix hc0(const Matrix& A, const Vector& u) {
  const Eigen::LDLT<Matrix> bread(A.transpose() * A);
  const Matrix meat = A.transpose() * u.cwiseAbs2().asDiagonal() * A;
  const Matrix half = bread.solve(meat);
  return bread.solve(half.transpose());
}

}  // namespace

TslsFit fit_tsls(const Vector& y, const Vector& exposure, const Matrix& instruments, const Matrix& controls,
                 const TslsOptions& options) {
  const Index n = y.size();
  if (exposure.size() != n || instruments.rows() != n || (controls.cols() > 0 && controls.rows() != n)) {
    throw Error(ErrorCode::DimensionMismatch, "TSLS inputs have inconsistent lengths");
  }
  if (instruments.cols() < 1) throw Error(ErrorCode::MissingInstruments, "TSLS needs at least one instrument");
  if (!y.allFinite() || !exposure.allFinite() || !instruments.allFinite() || !controls.allFinite()) {
    throw Error(ErrorCode::NonFinite, "TSLS inputs contain non-finite values");
  }

  const Matrix first = with_intercept(instruments, controls);
  const Index k = first.cols();
  if (n <= k) throw Error(ErrorCode::TooFewObservations, "TSLS needs more observations than instruments");
  Eigen::ColPivHouseholderQR<Matrix> first_qr(first);
  first_qr.setThreshold(1e-10);
  if (first_qr.rank() < k) throw Error(ErrorCode::RankDeficient, "instrument matrix is rank deficient");

  const Vector pi = first_qr.solve(exposure);
  const Vector fitted = first * pi;
  const Matrix first_cov = hc0(first, exposure - fitted);
  TslsFit out;
  for (Index j = 0; j < instruments.cols(); ++j) {
    const double se = std::sqrt(first_cov(1 + j, 1 + j));
    const double t = se > 0.0 ? std::abs(pi[1 + j]) / se : std::numeric_limits<double>::infinity();
    out.first_stage_t = std::max(out.first_stage_t, t);
  }
  out.weak_instrument = out.first_stage_t < options.weak_t_floor;

  const Matrix second = with_intercept(fitted, controls);
  Eigen::ColPivHouseholderQR<Matrix> second_qr(second);
  second_qr.setThreshold(1e-10);
  if (second_qr.rank() < second.cols()) {
    throw Error(ErrorCode::RankDeficient, "projected exposure is collinear with the controls");
  }
  const Vector coef = second_qr.solve(y);
  const Matrix structural = with_intercept(exposure, controls);
  const Vector u = y - structural * coef;
  const Matrix cov = hc0(second, u);

  out.theta = coef[1];
  out.se = std::sqrt(std::max(cov(1, 1), 0.0));
  out.residual_df = static_cast<std::size_t>(n - second.cols());
  return out;
}

TslsFit fit_tsls(const Vector& y, const Vector& exposure, const Vector& instrument, const Matrix& controls,
                 const TslsOptions& options) {
  return fit_tsls(y, exposure, Matrix(instrument), controls, options);
}

}  // namespace excel
