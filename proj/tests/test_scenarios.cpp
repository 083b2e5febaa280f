#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "excel/error.hpp"
#include "excel/scenarios.hpp"

#include <cmath>

using namespace excel;

namespace {

DgpConfig config(Scenario s, std::size_t n, std::uint64_t seed, int d_U = 1) {
  DgpConfig c;
  c.scenario = s;
  c.n = n;
  c.seed = seed;
  c.d_U = d_U;
  return c;
}

double mean(const Vector& v) { return v.mean(); }

double variance(const Vector& v) { return (v.array() - v.mean()).square().sum() / static_cast<double>(v.size() - 1); }

double correlation(const Vector& a, const Vector& b) {
  const Vector ca = a.array() - a.mean(), cb = b.array() - b.mean();
  return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

// Standard normal CDF via erfc.
double Phi(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

TEST_CASE("no-IV design: exposure mean") {
  const auto g = generate(config(Scenario::NoIvLinear, 100000, 1));
  // E X = 0.2 * sqrt(d_U) * d_U * 2 * 0.3; Var X = 1 + 0.04 * 0.42 d_U^2
  const double se = std::sqrt(1.0168 / 1e5);
  CHECK(std::abs(mean(g.data.X.col(0)) - 0.12) < 4 * se);
}

TEST_CASE("no-IV design with d_U = 2 follows the printed gamma") {
  const auto g = generate(config(Scenario::NoIvLinear, 100000, 2, 2));
  // U'gamma has mean sqrt(2) * 2 * 0.6 and variance 2 * 2 * 0.42.
  const double m = std::sqrt(2.0) * 1.2, v = 4 * 0.42;
  CHECK(std::abs(mean(g.truth.confounder) - m) < 4 * std::sqrt(v / 1e5));
  CHECK(std::abs(variance(g.truth.confounder) - v) < 0.05);
}

TEST_CASE("outcome noise moments: normal and scaled t(5)") {
  for (auto s : {Scenario::NoIvLinear, Scenario::NoIvLinearHeavyTail}) {
    const auto g = generate(config(s, 100000, 3));
    const Vector eps = g.data.y - g.truth.structural - 4.0 * g.truth.confounder;
    const bool heavy = s == Scenario::NoIvLinearHeavyTail;
    const double target = heavy ? 0.25 * 5.0 / 3.0 : 0.25;
    // Var of the sample variance is sigma^4 (kurtosis - 1) / n; t(5) kurtosis is 9.
    const double se = target * std::sqrt((heavy ? 8.0 : 2.0) / 1e5);
    CHECK(std::abs(mean(eps)) < 4 * std::sqrt(target / 1e5));
    CHECK(std::abs(variance(eps) - target) < 4 * se);
  }
}

TEST_CASE("invalid-IV design: instruments independent of the confounder") {
  const auto g = generate(config(Scenario::InvalidIv, 100000, 4));
  REQUIRE(g.data.Z.has_value());
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(correlation(g.data.Z->col(j), g.truth.confounder)) < 4.0 / std::sqrt(1e5));
    CHECK(std::abs(mean(g.data.Z->col(j)) - 0.5) < 4 * 0.5 / std::sqrt(1e5));
  }
  // First stage: X = 2 Z1 + 2 Z2 + 2 Z3 + ...
  Matrix D(100000, 4);
  D.col(0).setOnes();
  D.rightCols(3) = *g.data.Z;
  const Vector coef = D.colPivHouseholderQr().solve(g.data.X.col(0));
  for (int j = 1; j < 4; ++j) CHECK(std::abs(coef[j] - 2.0) < 0.05);
}

TEST_CASE("mixture illustration: tail balance ratio") {
  const auto g = generate(config(Scenario::MixtureIllustration, 100000, 5));
  const Vector eps = g.data.y - g.truth.structural;
  double tail = 0, pos = 0, tail_pos = 0;
  for (Eigen::Index i = 0; i < eps.size(); ++i) {
    const bool t = eps[i] > 5.9, p = g.data.X(i, 0) > 0;
    tail += t;
    pos += p;
    tail_pos += t && p;
  }
  const double ratio = (tail_pos / pos) / (tail / 1e5);
  // P(eps > 5.9 | X > 0) / P(eps > 5.9) = 2 P(U = 1 | X > 0) = 2 Phi(1/3).
  const double oracle = 2.0 * Phi(1.0 / 3.0);
  MESSAGE("ratio " << ratio << " oracle " << oracle);
  CHECK(ratio > 0.0);
  CHECK(ratio < 2.0);
  CHECK(std::abs(ratio - oracle) < 0.2);
  CHECK(std::abs(eps.maxCoeff()) <= 6.0);
}

TEST_CASE("structural component regresses exactly onto the slope") {
  for (auto s : {Scenario::NoIvLinear, Scenario::InvalidIv, Scenario::ConfounderExample, Scenario::SelectionExample,
                 Scenario::MeasurementErrorExample, Scenario::MixtureIllustration, Scenario::NoIvLinearHeavyTail}) {
    const auto g = generate(config(s, 500, 6));
    Matrix D(500, 2);
    D.col(0).setOnes();
    D.col(1) = g.data.X.col(0);
    const Vector coef = D.colPivHouseholderQr().solve(g.truth.structural);
    CHECK(coef[1] == doctest::Approx(g.truth.theta0).epsilon(1e-12));
    CHECK(std::abs(coef[0]) < 1e-12);
  }
}

TEST_CASE("seed determinism of generated data") {
  for (auto s : {Scenario::NoIvLinear, Scenario::InvalidIv, Scenario::SelectionExample}) {
    const auto a = generate(config(s, 300, 7));
    const auto b = generate(config(s, 300, 7));
    const auto c = generate(config(s, 300, 8));
    CHECK(a.data.X == b.data.X);
    CHECK(a.data.y == b.data.y);
    CHECK(a.data.y != c.data.y);
  }
}

TEST_CASE("selection probability stays above its floor") {
  for (double x : {-50.0, -1.0, 0.0, 3.0, 50.0})
    for (double y : {-50.0, 0.0, 50.0}) {
      const double p = selection_probability(x, y, 0.1);
      CHECK(p >= 0.1);
      CHECK(p <= 1.0);
    }
  // Selection on x + y tilts the observed slope away from theta0 under OLS.
  const auto g = generate(config(Scenario::SelectionExample, 20000, 9));
  Matrix D(20000, 2);
  D.col(0).setOnes();
  D.col(1) = g.data.X.col(0);
  const Vector coef = D.colPivHouseholderQr().solve(g.data.y);
  CHECK(coef[1] < 0.4 - 0.01);
}

TEST_CASE("overrides are validated") {
  auto c = config(Scenario::NoIvLinear, 10, 1);
  c.overrides["not_a_parameter"] = 1.0;
  try {
    generate(c);
    FAIL("expected UnknownOverride");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownOverride);
  }
  c.overrides = {{"gamma_u", 1.0}};
  CHECK_NOTHROW(generate(c));
  c.scenario = Scenario::SelectionExample;
  c.overrides = {{"selection_floor", 0.0}};
  CHECK_THROWS_AS(generate(c), Error);
  CHECK(scenario_from_string("InvalidIv") == Scenario::InvalidIv);
  CHECK_THROWS_AS(scenario_from_string("nope"), Error);
}

TEST_CASE("analytic OLS bias") {
  CHECK(analytic_ols_bias(1) == doctest::Approx(0.336 / 1.0168).epsilon(1e-12));
  CHECK(analytic_ols_bias(2) == doctest::Approx(0.8 * 0.42 * 4 / (1 + 0.04 * 0.42 * 4)).epsilon(1e-12));
}

TEST_CASE("experiment harness: methods, scenarios and determinism") {
  const auto dgp = config(Scenario::NoIvLinear, 500, 0);
  CHECK_THROWS_AS(run_experiment(dgp, {Method::TSLS_all}, 2, 0.05, 1), Error);
  ExperimentOptions one, three;
  one.B = three.B = 30;
  three.threads = 3;
  const std::vector<Method> methods{Method::OLS, Method::EXCEL, Method::EXCEL_bootstrapCI};
  const auto a = run_experiment(dgp, methods, 6, 0.05, 42, one);
  const auto b = run_experiment(dgp, methods, 6, 0.05, 42, three);
  REQUIRE(a.rows.size() == 3);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(a.rows[k].estimates == b.rows[k].estimates);
    CHECK(a.rows[k].mse >= 0.0);
    CHECK(a.rows[k].replications == 6);
  }
  CHECK_FALSE(a.row(Method::EXCEL).coverage.has_value());
  REQUIRE(a.row(Method::EXCEL_bootstrapCI).coverage.has_value());
  CHECK(*a.row(Method::EXCEL_bootstrapCI).coverage >= 0.0);
  CHECK(*a.row(Method::EXCEL_bootstrapCI).coverage <= 1.0);
  CHECK(a.row(Method::EXCEL_bootstrapCI).mean_length.value() > 0.0);
}

TEST_CASE("experiment harness on the instrument design") {
  auto dgp = config(Scenario::InvalidIv, 1000, 0);
  ExperimentOptions o;
  o.B = 30;
  const auto r = run_experiment(dgp, {Method::OLS, Method::TSLS_all, Method::TSLS_oracle, Method::IV_repair}, 4, 0.05, 3, o);
  CHECK(r.row(Method::TSLS_oracle).coverage.has_value());
  CHECK(r.row(Method::IV_repair).extra.count("first_iv_selected") == 1);
  CHECK(r.row(Method::IV_repair).extra.count("excel_only_length") == 1);
  // TSLS with all three instruments absorbs the direct effects.
  CHECK(r.row(Method::TSLS_all).bias > 0.3);
  CHECK_THROWS_AS(run_experiment(dgp, {Method::EXCEL_adaptive_tau}, 1, 0.05, 1), Error);
}
