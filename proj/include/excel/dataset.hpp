#pragma once

#include "excel/qr_core.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace excel {

// Observations (X_i, Y_i) with optional candidate instruments and cluster
// structure. Rows are aligned across every member.
struct Dataset {
  Vector y;
  Matrix X;
  std::optional<Matrix> Z;
  std::optional<std::vector<std::int64_t>> cluster_id;
  // Optional grouping used only for per-stratum centering in aggregation.
  std::optional<std::vector<std::int64_t>> strata;

  std::string y_name = "y";
  std::vector<std::string> x_names;
  std::vector<std::string> z_names;

  Eigen::Index n() const { return y.size(); }
  Eigen::Index d() const { return X.cols(); }
  Eigen::Index d_z() const { return Z ? Z->cols() : 0; }

  // Throws DimensionMismatch / TooFewObservations / NonFinite.
  void validate() const;

  // Rows gathered by index, in the given order, duplicates allowed.
  Dataset gather(const std::vector<std::size_t>& rows) const;
};

}  // namespace excel
