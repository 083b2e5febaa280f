#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "excel/error.hpp"
#include "excel/qr_core.hpp"
#include "excel/random.hpp"
#include "oracles.hpp"

#include <cmath>
#include <limits>

using namespace excel;

namespace {

DesignMatrix line_design(const Vector& x) {
  Matrix X(x.size(), 2);
  X.col(0).setOnes();
  X.col(1) = x;
  return DesignMatrix(X);
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an excel::Error");
  return ErrorCode::InvalidArgument;
}

}  // namespace

TEST_CASE("intercept-only median") {
  const DesignMatrix X(Matrix::Ones(3, 1));
  const Vector y{{1.0, 2.0, 3.0}};
  const auto fit = fit_check_loss(X, y, 0.5);
  CHECK(fit.beta[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("constant response gives zero-loss fit") {
  Sampler s(Philox::stream(11, {}));
  Vector x(20);
  for (auto& v : x) v = s.normal();
  const Vector y = Vector::Constant(20, 3.25);
  for (double level : {0.1, 0.5, 0.95}) {
    const auto fit = fit_check_loss(line_design(x), y, level);
    CHECK(fit.beta[0] == doctest::Approx(3.25).epsilon(1e-12));
    CHECK(std::abs(fit.beta[1]) < 1e-12);
    CHECK(fit.objective < 1e-12);
  }
}

TEST_CASE("n=7 line at level 0.9 matches exhaustive vertex enumeration") {
  Sampler s(Philox::stream(2024, {7}));
  Vector x(7), y(7);
  for (int i = 0; i < 7; ++i) {
    x[i] = s.normal();
    y[i] = 1.0 + 0.5 * x[i] + s.normal();
  }
  const auto oracle = oracle::enumerate_vertices(x, y, 0.9);
  // 0.1 * 7 < 1, so the degenerate-level guard has to be overridden.
  FitOptions opts;
  opts.allow_degenerate_quantile = true;
  const auto fit = fit_check_loss(line_design(x), y, 0.9, opts);
  CHECK(std::abs(fit.beta[0] - oracle.intercept) < 1e-8);
  CHECK(std::abs(fit.beta[1] - oracle.slope) < 1e-8);
  CHECK(std::abs(fit.objective - oracle.objective) < 1e-8);
}

TEST_CASE("brute-force oracle equivalence on small instances") {
  for (int inst = 0; inst < 300; ++inst) {
    Sampler s(Philox::stream(99, {static_cast<std::uint64_t>(inst)}));
    const int n = 2 + static_cast<int>(s.index(7));
    const bool with_slope = inst % 3 != 0;
    const double level = 0.05 + 0.9 * s.uniform();
    Vector x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = inst % 5 == 0 ? static_cast<double>(s.index(3)) : s.normal();  // ties on some instances
      y[i] = inst % 7 == 0 ? std::round(2 * s.normal()) : x[i] + s.normal();
    }
    FitOptions opts;
    opts.allow_degenerate_quantile = true;
    if (with_slope) {
      bool distinct = false;
      for (int i = 1; i < n; ++i) distinct |= x[i] != x[0];
      if (!distinct) continue;
      const auto fit = fit_check_loss(line_design(x), y, level, opts);
      const auto oracle = oracle::enumerate_vertices(x, y, level);
      CHECK(std::abs(fit.objective - oracle.objective) < 1e-8);
    } else {
      const auto fit = fit_check_loss(DesignMatrix(Matrix::Ones(n, 1)), y, level, opts);
      CHECK(std::abs(fit.objective - oracle::enumerate_constant(y, level)) < 1e-8);
    }
  }
}

TEST_CASE("fit diagnostics satisfy subgradient optimality") {
  Sampler s(Philox::stream(5, {}));
  const int n = 400;
  Vector x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = s.normal();
    y[i] = 2.0 - x[i] + s.normal();
  }
  const auto X = line_design(x);
  for (double level : {0.01, 0.3, 0.5, 0.99}) {
    const auto fit = fit_check_loss(X, y, level);
    const double mass = n * level;
    CHECK(static_cast<double>(fit.n_below) <= mass + 1e-9);
    CHECK(mass <= static_cast<double>(fit.n_below + fit.n_zero) + 1e-9);
    CHECK(fit.objective == doctest::Approx(mean_check_loss(X, y, fit.beta, level)).epsilon(1e-9));
    CHECK(fit.basis.size() == 2);
  }
}

TEST_CASE("error paths") {
  Matrix dup(5, 2);
  dup << 1, 1, 1, 1, 1, 1, 1, 1, 1, 1;
  const Vector y5{{1.0, 2.0, 3.0, 4.0, 5.0}};
  CHECK(code_of([&] { fit_check_loss(DesignMatrix(dup), y5, 0.5); }) == ErrorCode::RankDeficient);

  Vector bad = y5;
  bad[2] = std::numeric_limits<double>::quiet_NaN();
  const DesignMatrix ones(Matrix::Ones(5, 1));
  CHECK(code_of([&] { fit_check_loss(ones, bad, 0.5); }) == ErrorCode::NonFinite);
  Matrix inf_design = Matrix::Ones(5, 1);
  inf_design(0, 0) = std::numeric_limits<double>::infinity();
  CHECK(code_of([&] { DesignMatrix{inf_design}; }) == ErrorCode::NonFinite);

  CHECK(code_of([&] { fit_check_loss(ones, y5, 0.9); }) == ErrorCode::DegenerateQuantile);
  CHECK(code_of([&] { fit_check_loss(ones, y5, 0.1); }) == ErrorCode::DegenerateQuantile);
  FitOptions allow;
  allow.allow_degenerate_quantile = true;
  CHECK(fit_check_loss(ones, y5, 0.9, allow).beta[0] == doctest::Approx(5.0));

  CHECK(code_of([&] { fit_check_loss(ones, Vector::Ones(4), 0.5); }) == ErrorCode::DimensionMismatch);
  CHECK(code_of([&] { DesignMatrix{Matrix::Zero(4, 1)}; }) == ErrorCode::RankDeficient);
}

TEST_CASE("check loss is convex along segments") {
  Sampler s(Philox::stream(8, {}));
  const int n = 50;
  Vector x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = s.normal();
    y[i] = s.normal();
  }
  const auto X = line_design(x);
  for (int trial = 0; trial < 100; ++trial) {
    const Vector b1{{s.normal(), s.normal()}};
    const Vector b2{{s.normal(), s.normal()}};
    const double t = s.uniform();
    const double level = s.uniform();
    const double mid = mean_check_loss(X, y, t * b1 + (1 - t) * b2, level);
    CHECK(mid <= t * mean_check_loss(X, y, b1, level) + (1 - t) * mean_check_loss(X, y, b2, level) + 1e-12);
  }
}

TEST_CASE("intercept-only fit is nondecreasing in the level") {
  Sampler s(Philox::stream(9, {}));
  Vector y(101);
  for (auto& v : y) v = s.normal();
  const DesignMatrix ones(Matrix::Ones(101, 1));
  double previous = -std::numeric_limits<double>::infinity();
  for (double level = 0.02; level < 0.99; level += 0.02) {
    const double b = fit_check_loss(ones, y, level).beta[0];
    CHECK(b >= previous);
    previous = b;
  }
}

TEST_CASE("shifting the response by a linear function shifts beta") {
  Sampler s(Philox::stream(10, {}));
  const int n = 300;
  Vector x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = s.normal();
    y[i] = x[i] + s.exponential();
  }
  const auto X = line_design(x);
  const Vector shift{{0.7, -1.3}};
  for (double level : {0.05, 0.5, 0.97}) {
    const auto base = fit_check_loss(X, y, level);
    const auto moved = fit_check_loss(X, y + X.values() * shift, level);
    CHECK((moved.beta - base.beta - shift).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("repeated calls are bit-identical and warm start reaches the same vertex") {
  Sampler s(Philox::stream(12, {}));
  const int n = 2000;
  Vector x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = s.normal();
    y[i] = 0.3 * x[i] + s.normal();
  }
  const auto X = line_design(x);
  const auto a = fit_check_loss(X, y, 0.995);
  const auto b = fit_check_loss(X, y, 0.995);
  CHECK(a.beta == b.beta);
  FitOptions warm;
  warm.warm_start = Vector{{0.0, 0.0}};
  const auto c = fit_check_loss(X, y, 0.995, warm);
  CHECK(c.beta == a.beta);
}

TEST_CASE("polish is skipped above the limit but the optimum agrees") {
  Sampler s(Philox::stream(13, {}));
  const int n = 3000;
  Vector x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = s.normal();
    y[i] = 0.3 * x[i] + s.normal();
  }
  const auto X = line_design(x);
  FitOptions no_polish;
  no_polish.polish_limit = 100;
  const auto raw = fit_check_loss(X, y, 0.9, no_polish);
  const auto polished = fit_check_loss(X, y, 0.9);
  CHECK(raw.basis.empty());
  CHECK(raw.objective == doctest::Approx(polished.objective).epsilon(1e-8));
}

TEST_CASE("ols") {
  const DesignMatrix ones(Matrix::Ones(3, 1));
  CHECK(fit_ols(ones, Vector{{1.0, 2.0, 3.0}})[0] == doctest::Approx(2.0));

  const Vector x{{0.0, 1.0, 2.0, 5.0}};
  const auto X = line_design(x);
  const Vector exact = X.values() * Vector{{1.5, -2.0}};
  const Vector coef = fit_ols(X, exact);
  CHECK((exact - X.values() * coef).cwiseAbs().maxCoeff() < 1e-12);

  Sampler s(Philox::stream(14, {}));
  Vector xr(200), yr(200);
  for (int i = 0; i < 200; ++i) {
    xr[i] = 10 * s.normal();
    yr[i] = 3 + xr[i] + 5 * s.normal();
  }
  const auto XR = line_design(xr);
  const Vector resid = yr - XR.values() * fit_ols(XR, yr);
  const double scale = XR.values().cwiseAbs().maxCoeff() * yr.cwiseAbs().maxCoeff();
  CHECK((XR.values().transpose() * resid).cwiseAbs().maxCoeff() < 1e-8 * 200 * scale);

  Matrix dup = Matrix::Ones(4, 2);
  CHECK(code_of([&] { fit_ols(DesignMatrix(dup), Vector::Ones(4)); }) == ErrorCode::RankDeficient);
}

TEST_CASE("tsls with the exposure as its own instrument is ols") {
  Sampler s(Philox::stream(15, {}));
  const int n = 300;
  Vector x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = s.normal();
    y[i] = 1 + 2 * x[i] + s.normal();
  }
  const auto iv = fit_tsls(y, x, x, Matrix(n, 0));
  const Vector ols = fit_ols(line_design(x), y);
  CHECK(iv.theta == doctest::Approx(ols[1]).epsilon(1e-10));
  CHECK(iv.se > 0.0);
  CHECK(iv.residual_df == static_cast<std::size_t>(n - 2));
  CHECK_FALSE(iv.weak_instrument);
}

TEST_CASE("tsls flags an irrelevant instrument") {
  Sampler s(Philox::stream(16, {}));
  const int n = 500;
  Vector x(n), y(n), z(n);
  for (int i = 0; i < n; ++i) {
    z[i] = s.normal();
    x[i] = s.normal();
    y[i] = x[i] + s.normal();
  }
  // The sample correlation is not exactly zero, so the fit succeeds but the
  // first stage t statistic is small with high probability for this seed.
  const auto fit = fit_tsls(y, x, z, Matrix(n, 0));
  CHECK(fit.weak_instrument);
  CHECK(std::isfinite(fit.theta));
}
