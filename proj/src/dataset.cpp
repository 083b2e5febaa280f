#include "excel/dataset.hpp"

#include "excel/error.hpp"

namespace excel {

void Dataset::validate() const {
  const auto rows = n();
  if (rows < 1) throw Error(ErrorCode::TooFewObservations, "dataset has no rows");
  if (X.rows() != rows) throw Error(ErrorCode::DimensionMismatch, "X and y have different row counts");
  if (Z && Z->rows() != rows) throw Error(ErrorCode::DimensionMismatch, "Z and y have different row counts");
  if (cluster_id && static_cast<Eigen::Index>(cluster_id->size()) != rows)
    throw Error(ErrorCode::DimensionMismatch, "cluster ids and y have different lengths");
  if (strata && static_cast<Eigen::Index>(strata->size()) != rows)
    throw Error(ErrorCode::DimensionMismatch, "strata and y have different lengths");
  if (!x_names.empty() && static_cast<Eigen::Index>(x_names.size()) != X.cols())
    throw Error(ErrorCode::DimensionMismatch, "x_names does not match the column count");
  if (Z && !z_names.empty() && static_cast<Eigen::Index>(z_names.size()) != Z->cols())
    throw Error(ErrorCode::DimensionMismatch, "z_names does not match the column count");
  if (!y.allFinite() || !X.allFinite() || (Z && !Z->allFinite()))
    throw Error(ErrorCode::NonFinite, "dataset contains non-finite values");
}

Dataset Dataset::gather(const std::vector<std::size_t>& rows) const {
  Dataset out;
  out.y_name = y_name;
  out.x_names = x_names;
  out.z_names = z_names;
  const auto m = static_cast<Eigen::Index>(rows.size());
  out.y.resize(m);
  out.X.resize(m, X.cols());
  if (Z) out.Z = Matrix(m, Z->cols());
  if (cluster_id) out.cluster_id.emplace(rows.size());
  if (strata) out.strata.emplace(rows.size());
  for (Eigen::Index k = 0; k < m; ++k) {
    const auto i = static_cast<Eigen::Index>(rows[static_cast<std::size_t>(k)]);
    if (i < 0 || i >= n()) throw Error(ErrorCode::IndexOutOfRange, "row index out of range");
    out.y[k] = y[i];
    out.X.row(k) = X.row(i);
    if (Z) out.Z->row(k) = Z->row(i);
    if (cluster_id) (*out.cluster_id)[static_cast<std::size_t>(k)] = (*cluster_id)[static_cast<std::size_t>(i)];
    if (strata) (*out.strata)[static_cast<std::size_t>(k)] = (*strata)[static_cast<std::size_t>(i)];
  }
  return out;
}

}  // namespace excel
