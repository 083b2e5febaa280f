#include "excel/basis.hpp"

#include "excel/error.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace excel {

namespace {

// Exponent vectors of all monomials with total degree 1..degree.
std::vector<std::vector<int>> monomials(int d, int degree) {
  std::vector<std::vector<int>> out;
  std::vector<int> current(static_cast<std::size_t>(d), 0);
  for (int total = 1; total <= degree; ++total) {
    // Enumerate compositions of `total` into d parts, first part descending.
    auto recurse = [&](auto&& self, int dim, int remaining) -> void {
      if (dim == d - 1) {
        current[static_cast<std::size_t>(dim)] = remaining;
        out.push_back(current);
        return;
      }
      for (int e = remaining; e >= 0; --e) {
        current[static_cast<std::size_t>(dim)] = e;
        self(self, dim + 1, remaining - e);
      }
    };
    recurse(recurse, 0, total);
  }
  return out;
}

int spline_size(const std::vector<double>& knots, int degree) {
  return static_cast<int>(knots.size()) - degree - 1;
}

// Nonzero B-spline values at x (Cox-de Boor, all degree+1 functions on the
// knot span containing x). Writes into out[0..m).
void bspline_values(const std::vector<double>& t, int degree, double x, std::vector<double>& out) {
  const int m = spline_size(t, degree);
  out.assign(static_cast<std::size_t>(m), 0.0);
  int span = m - 1;
  if (x < t[static_cast<std::size_t>(m)]) {
    span = static_cast<int>(std::upper_bound(t.begin() + degree, t.begin() + m + 1, x) - t.begin()) - 1;
  }
  std::vector<double> left(static_cast<std::size_t>(degree + 1)), right(static_cast<std::size_t>(degree + 1)),
      n(static_cast<std::size_t>(degree + 1));
  n[0] = 1.0;
  for (int j = 1; j <= degree; ++j) {
    left[static_cast<std::size_t>(j)] = x - t[static_cast<std::size_t>(span + 1 - j)];
    right[static_cast<std::size_t>(j)] = t[static_cast<std::size_t>(span + j)] - x;
    double saved = 0.0;
    for (int r = 0; r < j; ++r) {
      const double denom = right[static_cast<std::size_t>(r + 1)] + left[static_cast<std::size_t>(j - r)];
      const double temp = denom > 0.0 ? n[static_cast<std::size_t>(r)] / denom : 0.0;
      n[static_cast<std::size_t>(r)] = saved + right[static_cast<std::size_t>(r + 1)] * temp;
      saved = left[static_cast<std::size_t>(j - r)] * temp;
    }
    n[static_cast<std::size_t>(j)] = saved;
  }
  for (int j = 0; j <= degree; ++j) out[static_cast<std::size_t>(span - degree + j)] = n[static_cast<std::size_t>(j)];
}

}  // namespace

BasisSpec BasisSpec::identity(int d) {
  if (d < 1) throw Error(ErrorCode::InvalidArgument, "basis input dimension must be >= 1");
  return BasisSpec{BasisKind::IdentityLinear, d, 1, 0, {}};
}

BasisSpec BasisSpec::polynomial(int d, int degree) {
  if (d < 1 || degree < 1) throw Error(ErrorCode::InvalidArgument, "polynomial basis needs d >= 1 and degree >= 1");
  return BasisSpec{BasisKind::Polynomial, d, degree, 0, {}};
}

BasisSpec BasisSpec::tensor_spline(int d, int degree, int knots_per_dim) {
  if (d < 1 || degree < 1 || knots_per_dim < 0) {
    throw Error(ErrorCode::InvalidArgument, "spline basis needs d >= 1, degree >= 1, knots >= 0");
  }
  return BasisSpec{BasisKind::TensorSpline, d, degree, knots_per_dim, {}};
}

int BasisSpec::output_dim() const {
  switch (kind) {
    case BasisKind::IdentityLinear:
      return input_dim + 1;
    case BasisKind::Polynomial:
      return 1 + static_cast<int>(monomials(input_dim, degree).size());
    case BasisKind::TensorSpline: {
      if (!ready()) return -1;
      int product = 1;
      for (const auto& t : knots) product *= spline_size(t, degree);
      return 1 + product;
    }
  }
  return -1;
}

bool BasisSpec::ready() const {
  return kind != BasisKind::TensorSpline || static_cast<int>(knots.size()) == input_dim;
}

std::optional<int> BasisSpec::redundant_column() const {
  if (kind == BasisKind::TensorSpline) return 1;
  return std::nullopt;
}

std::string BasisSpec::describe() const {
  std::ostringstream os;
  switch (kind) {
    case BasisKind::IdentityLinear: os << "linear"; break;
    case BasisKind::Polynomial: os << "poly:" << degree; break;
    case BasisKind::TensorSpline: os << "spline:" << degree << "," << knots_per_dim; break;
  }
  return os.str();
}

int default_knot_count(std::size_t n) {
  return std::max(2, static_cast<int>(std::floor(std::pow(static_cast<double>(n), 0.2))));
}

BasisSpec place_knots(BasisSpec spec, const Matrix& X) {
  if (spec.kind != BasisKind::TensorSpline) return spec;
  if (X.cols() != spec.input_dim) throw Error(ErrorCode::DimensionMismatch, "knot placement: column count mismatch");
  if (X.rows() < 2) throw Error(ErrorCode::TooFewObservations, "knot placement needs at least two rows");
  const int interior = spec.knots_per_dim > 0 ? spec.knots_per_dim : default_knot_count(static_cast<std::size_t>(X.rows()));
  spec.knots_per_dim = interior;
  spec.knots.clear();
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    std::vector<double> col(X.col(j).data(), X.col(j).data() + X.rows());
    std::sort(col.begin(), col.end());
    const double lo = col.front();
    const double hi = col.back();
    if (!(hi > lo)) throw Error(ErrorCode::RankDeficient, "spline column " + std::to_string(j) + " is constant");
    std::vector<double> t(static_cast<std::size_t>(spec.degree + 1), lo);
    const double last = static_cast<double>(col.size() - 1);
    for (int k = 1; k <= interior; ++k) {
      // Type-7 empirical quantile at k / (interior + 1).
      const double pos = last * k / (interior + 1.0);
      const auto below = static_cast<std::size_t>(std::floor(pos));
      const double frac = pos - static_cast<double>(below);
      const double q = below + 1 < col.size() ? col[below] + frac * (col[below + 1] - col[below]) : col[below];
      // Ties in discrete data can repeat a quantile; keep knots distinct.
      if (q > t.back() && q < hi) t.push_back(q);
    }
    t.insert(t.end(), static_cast<std::size_t>(spec.degree + 1), hi);
    spec.knots.push_back(std::move(t));
  }
  return spec;
}

Vector evaluate_basis(const BasisSpec& spec, std::span<const double> x, BasisWarnings* warnings) {
  if (static_cast<int>(x.size()) != spec.input_dim) {
    throw Error(ErrorCode::DimensionMismatch, "basis argument has length " + std::to_string(x.size()) +
                                                  ", expected " + std::to_string(spec.input_dim));
  }
  switch (spec.kind) {
    case BasisKind::IdentityLinear: {
      Vector v(spec.input_dim + 1);
      v[0] = 1.0;
      for (int j = 0; j < spec.input_dim; ++j) v[j + 1] = x[static_cast<std::size_t>(j)];
      return v;
    }
    case BasisKind::Polynomial: {
      const auto terms = monomials(spec.input_dim, spec.degree);
      Vector v(1 + static_cast<Eigen::Index>(terms.size()));
      v[0] = 1.0;
      for (std::size_t k = 0; k < terms.size(); ++k) {
        double value = 1.0;
        for (int j = 0; j < spec.input_dim; ++j) {
          for (int e = 0; e < terms[k][static_cast<std::size_t>(j)]; ++e) value *= x[static_cast<std::size_t>(j)];
        }
        v[static_cast<Eigen::Index>(k) + 1] = value;
      }
      return v;
    }
    case BasisKind::TensorSpline: {
      if (!spec.ready()) throw Error(ErrorCode::InvalidArgument, "spline knots have not been placed");
      std::vector<std::vector<double>> blocks(static_cast<std::size_t>(spec.input_dim));
      for (int j = 0; j < spec.input_dim; ++j) {
        const auto& t = spec.knots[static_cast<std::size_t>(j)];
        double xj = x[static_cast<std::size_t>(j)];
        const double lo = t.front();
        const double hi = t.back();
        if (xj < lo || xj > hi) {
          if (warnings) warnings->clamped = true;
          xj = std::clamp(xj, lo, hi);
        }
        bspline_values(t, spec.degree, xj, blocks[static_cast<std::size_t>(j)]);
      }
      // Tensor product, first dimension varying slowest.
      std::vector<double> product{1.0};
      for (const auto& block : blocks) {
        std::vector<double> next;
        next.reserve(product.size() * block.size());
        for (double a : product)
          for (double b : block) next.push_back(a * b);
        product = std::move(next);
      }
      Vector v(1 + static_cast<Eigen::Index>(product.size()));
      v[0] = 1.0;
      for (std::size_t k = 0; k < product.size(); ++k) v[static_cast<Eigen::Index>(k) + 1] = product[k];
      return v;
    }
  }
  throw Error(ErrorCode::InvalidArgument, "unknown basis kind");
}

Matrix expand_design(const BasisSpec& spec, const Matrix& X, BasisWarnings* warnings) {
  if (X.cols() != spec.input_dim) throw Error(ErrorCode::DimensionMismatch, "expand_design: column count mismatch");
  if (!spec.ready()) throw Error(ErrorCode::InvalidArgument, "spline knots have not been placed");
  Matrix out(X.rows(), spec.output_dim());
  std::vector<double> row(static_cast<std::size_t>(X.cols()));
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    for (Eigen::Index j = 0; j < X.cols(); ++j) row[static_cast<std::size_t>(j)] = X(i, j);
    out.row(i) = evaluate_basis(spec, row, warnings).transpose();
  }
  return out;
}

}  // namespace excel
