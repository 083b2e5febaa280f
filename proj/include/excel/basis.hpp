#pragma once

#include "excel/qr_core.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace excel {

enum class BasisKind { IdentityLinear, Polynomial, TensorSpline };

// Recipe for the series basis v(x) with v_1(x) == 1.
//
// IdentityLinear: (1, x_1, ..., x_d).
// Polynomial:     1 followed by all monomials of total degree 1..degree,
//                 graded, lexicographic within a degree.
// TensorSpline:   1 followed by the tensor product of per-dimension clamped
//                 B-spline bases. Interior knots sit at empirical quantiles
//                 and must be placed from data (place_knots) before use.
//                 The spline block sums to one, so it is collinear with the
//                 intercept; redundant_column() names the column the
//                 estimators drop when fitting.
struct BasisSpec {
  BasisKind kind = BasisKind::IdentityLinear;
  int input_dim = 1;
  int degree = 1;
  int knots_per_dim = 0;  // interior knots per dimension; 0 = data-driven default
  std::vector<std::vector<double>> knots;  // full clamped knot vector per dimension

  static BasisSpec identity(int d);
  static BasisSpec polynomial(int d, int degree);
  static BasisSpec tensor_spline(int d, int degree, int knots_per_dim = 0);

  int output_dim() const;
  bool ready() const;
  std::optional<int> redundant_column() const;
  std::string describe() const;

  bool operator==(const BasisSpec&) const = default;
};

// max(2, floor(n^{1/5}))
int default_knot_count(std::size_t n);

// Places interior knots at equally spaced empirical quantiles of each column
// of X and the boundary knots at the column range. No-op for other kinds.
BasisSpec place_knots(BasisSpec spec, const Matrix& X);

struct BasisWarnings {
  bool clamped = false;  // a spline argument fell outside the knot span
};

Vector evaluate_basis(const BasisSpec& spec, std::span<const double> x, BasisWarnings* warnings = nullptr);

// Row i is evaluate_basis(spec, X.row(i)). Returned as a plain matrix: the
// expansion of a handful of points need not be a valid design.
Matrix expand_design(const BasisSpec& spec, const Matrix& X, BasisWarnings* warnings = nullptr);

}  // namespace excel
