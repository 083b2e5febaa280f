#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "excel/basis.hpp"
#include "excel/error.hpp"
#include "excel/random.hpp"

#include <vector>

using namespace excel;

namespace {

// Textbook recursive definition, half-open spans except at the right end.
double naive_bspline(const std::vector<double>& t, int i, int k, double x) {
  if (k == 0) {
    const bool last = t[static_cast<std::size_t>(i + 1)] == t.back() && t[static_cast<std::size_t>(i)] < t.back();
    if (x >= t[static_cast<std::size_t>(i)] && (x < t[static_cast<std::size_t>(i + 1)] || (last && x == t.back())))
      return 1.0;
    return 0.0;
  }
  double out = 0.0;
  const double a = t[static_cast<std::size_t>(i + k)] - t[static_cast<std::size_t>(i)];
  if (a > 0) out += (x - t[static_cast<std::size_t>(i)]) / a * naive_bspline(t, i, k - 1, x);
  const double b = t[static_cast<std::size_t>(i + k + 1)] - t[static_cast<std::size_t>(i + 1)];
  if (b > 0) out += (t[static_cast<std::size_t>(i + k + 1)] - x) / b * naive_bspline(t, i + 1, k - 1, x);
  return out;
}

Matrix uniform_draws(int n, int d, std::uint64_t seed) {
  Sampler s(Philox::stream(seed, {1}));
  Matrix X(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = s.uniform();
  return X;
}

}  // namespace

TEST_CASE("identity basis prepends the intercept") {
  const auto spec = BasisSpec::identity(2);
  const std::vector<double> x{3.0, -1.0};
  const Vector v = evaluate_basis(spec, x);
  REQUIRE(v.size() == 3);
  CHECK(v[0] == 1.0);
  CHECK(v[1] == 3.0);
  CHECK(v[2] == -1.0);
  CHECK(spec.output_dim() == 3);
}

TEST_CASE("polynomial monomials") {
  const std::vector<double> x{2.0};
  const Vector v = evaluate_basis(BasisSpec::polynomial(1, 2), x);
  REQUIRE(v.size() == 3);
  CHECK(v[0] == 1.0);
  CHECK(v[1] == 2.0);
  CHECK(v[2] == 4.0);

  // d=2, degree 2: 1, x1, x2, x1^2, x1 x2, x2^2
  const std::vector<double> z{2.0, 3.0};
  const Vector w = evaluate_basis(BasisSpec::polynomial(2, 2), z);
  REQUIRE(w.size() == 6);
  CHECK(w[1] == 2.0);
  CHECK(w[2] == 3.0);
  CHECK(w[3] == 4.0);
  CHECK(w[4] == 6.0);
  CHECK(w[5] == 9.0);
}

TEST_CASE("expand_design examples") {
  Matrix X(3, 1);
  X << 1, 2, 3;
  const Matrix D = expand_design(BasisSpec::identity(1), X);
  Matrix expected(3, 2);
  expected << 1, 1, 1, 2, 1, 3;
  CHECK(D == expected);

  const Matrix zero = expand_design(BasisSpec::polynomial(1, 2), Matrix::Zero(1, 1));
  CHECK(zero.rows() == 1);
  CHECK(zero.cols() == 3);
  CHECK(zero(0, 0) == 1.0);
  CHECK(zero(0, 1) == 0.0);
  CHECK(zero(0, 2) == 0.0);
}

TEST_CASE("spline partition of unity at interior points") {
  const auto spec = place_knots(BasisSpec::tensor_spline(1, 3, 5), uniform_draws(500, 1, 3));
  CHECK(spec.output_dim() == 1 + 5 + 3 + 1);
  Sampler s(Philox::stream(9, {2}));
  const double lo = spec.knots[0].front();
  const double hi = spec.knots[0].back();
  for (int k = 0; k < 50; ++k) {
    const std::vector<double> x{lo + (hi - lo) * s.uniform()};
    const Vector v = evaluate_basis(spec, x);
    CHECK(v[0] == 1.0);
    CHECK(std::abs(v.tail(v.size() - 1).sum() - 1.0) <= 1e-10);
  }
}

TEST_CASE("spline rows sum to two") {
  const Matrix X = uniform_draws(200, 1, 5);
  const auto spec = place_knots(BasisSpec::tensor_spline(1, 3, 5), X);
  const Matrix D = expand_design(spec, X);
  for (Eigen::Index i = 0; i < D.rows(); ++i) CHECK(std::abs(D.row(i).sum() - 2.0) <= 1e-10);
}

TEST_CASE("spline values match the recursive definition") {
  const auto spec = place_knots(BasisSpec::tensor_spline(1, 3, 4), uniform_draws(300, 1, 11));
  const auto& t = spec.knots[0];
  const int m = static_cast<int>(t.size()) - 3 - 1;
  Sampler s(Philox::stream(12, {3}));
  std::vector<double> probes{t.front(), t.back(), t[4], t[5]};
  for (int k = 0; k < 40; ++k) probes.push_back(t.front() + (t.back() - t.front()) * s.uniform());
  for (double x : probes) {
    const std::vector<double> arg{x};
    const Vector v = evaluate_basis(spec, arg);
    for (int i = 0; i < m; ++i) CHECK(v[i + 1] == doctest::Approx(naive_bspline(t, i, 3, x)).epsilon(1e-12));
  }
}

TEST_CASE("tensor spline in two dimensions") {
  const Matrix X = uniform_draws(400, 2, 21);
  const auto spec = place_knots(BasisSpec::tensor_spline(2, 2, 3), X);
  CHECK(spec.output_dim() == 1 + 6 * 6);
  const Matrix D = expand_design(spec, X);
  for (Eigen::Index i = 0; i < D.rows(); ++i) CHECK(std::abs(D.row(i).sum() - 2.0) <= 1e-10);
  CHECK(spec.redundant_column() == 1);
}

TEST_CASE("spline clamps outside the knot span") {
  const auto spec = place_knots(BasisSpec::tensor_spline(1, 3, 3), uniform_draws(100, 1, 4));
  BasisWarnings w;
  const std::vector<double> inside{spec.knots[0].back()};
  const Vector edge = evaluate_basis(spec, inside, &w);
  CHECK_FALSE(w.clamped);
  const std::vector<double> outside{spec.knots[0].back() + 10.0};
  const Vector beyond = evaluate_basis(spec, outside, &w);
  CHECK(w.clamped);
  CHECK((edge - beyond).norm() == 0.0);
}

TEST_CASE("discrete columns keep distinct knots") {
  Matrix X(100, 1);
  for (int i = 0; i < 100; ++i) X(i, 0) = i < 80 ? 0.0 : (i < 95 ? 1.0 : 2.0);
  const auto spec = place_knots(BasisSpec::tensor_spline(1, 3, 5), X);
  const auto& t = spec.knots[0];
  for (std::size_t i = 4; i + 4 < t.size(); ++i) CHECK(t[i] > t[i - 1]);
  const std::vector<double> x{1.0};
  CHECK(std::abs(evaluate_basis(spec, x).sum() - 2.0) <= 1e-10);
}

TEST_CASE("intercept first and row consistency for every kind") {
  const Matrix X = uniform_draws(60, 2, 8);
  const std::vector<BasisSpec> specs{BasisSpec::identity(2), BasisSpec::polynomial(2, 3),
                                     place_knots(BasisSpec::tensor_spline(2, 3, 2), X)};
  for (const auto& spec : specs) {
    const Matrix D = expand_design(spec, X);
    CHECK(D.cols() == spec.output_dim());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const std::vector<double> row{X(i, 0), X(i, 1)};
      CHECK(D(i, 0) == 1.0);
      CHECK((D.row(i).transpose() - evaluate_basis(spec, row)).norm() == 0.0);
    }
  }
}

TEST_CASE("identity round trip") {
  const Matrix X = uniform_draws(25, 3, 17);
  const Matrix D = expand_design(BasisSpec::identity(3), X);
  CHECK(D.rightCols(3) == X);
}

TEST_CASE("basis errors") {
  const std::vector<double> x{1.0, 2.0};
  CHECK_THROWS_AS(evaluate_basis(BasisSpec::identity(1), x), Error);
  CHECK_THROWS_AS(evaluate_basis(BasisSpec::tensor_spline(2, 3, 2), x), Error);
  CHECK_THROWS_AS(BasisSpec::polynomial(1, 0), Error);
  CHECK_THROWS_AS(place_knots(BasisSpec::tensor_spline(1, 3, 2), Matrix::Ones(10, 1)), Error);
}

TEST_CASE("default knot count") {
  CHECK(default_knot_count(10) == 2);
  CHECK(default_knot_count(1000) == 3);
  CHECK(default_knot_count(100000) == 10);
  const auto spec = place_knots(BasisSpec::tensor_spline(1, 3), uniform_draws(1000, 1, 2));
  CHECK(spec.knots_per_dim == 3);
}
