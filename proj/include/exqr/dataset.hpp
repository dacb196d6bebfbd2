#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "exqr/error.hpp"

namespace exqr {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Response vector and T x d design whose first column is the intercept.
struct Dataset {
  Vector y;
  Matrix X;
  std::vector<std::string> names;

  Index size() const { return y.size(); }
  Index dim() const { return X.cols(); }

  /// Column means of the design (x-bar).
  Vector column_means() const { return X.colwise().mean().transpose(); }

  /// Largest absolute response, or 1 when the response is identically zero.
  double response_scale() const {
    double s = y.size() ? y.cwiseAbs().maxCoeff() : 0.0;
    return s > 0.0 ? s : 1.0;
  }

  /// Rows `idx` as a new dataset. No invariant checks are made; subsamples
  /// may legitimately be rank deficient and the solvers report that.
  Dataset rows(std::span<const Index> idx) const {
    Dataset out;
    out.y.resize(static_cast<Index>(idx.size()));
    out.X.resize(static_cast<Index>(idx.size()), X.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.y(static_cast<Index>(i)) = y(idx[i]);
      out.X.row(static_cast<Index>(i)) = X.row(idx[i]);
    }
    out.names = names;
    return out;
  }
};

/// Numerical rank of the design via column-pivoted QR.
inline Index design_rank(const Matrix& X) {
  Eigen::ColPivHouseholderQR<Matrix> qr(X);
  qr.setThreshold(1e-10);
  return qr.rank();
}

/// Checks T >= d + 1, an exact intercept column, finite cells and full rank.
inline void validate(const Dataset& data) {
  const Index T = data.size();
  const Index d = data.dim();
  if (data.X.rows() != T) {
    throw DataError("design has " + std::to_string(data.X.rows()) +
                    " rows but response has " + std::to_string(T));
  }
  if (d < 1) throw DataError("design has no columns");
  if (T < d + 1) {
    throw DataError("need at least d + 1 = " + std::to_string(d + 1) +
                    " observations, got " + std::to_string(T));
  }
  if (!data.names.empty() && static_cast<Index>(data.names.size()) != d) {
    throw DataError("expected " + std::to_string(d) + " column names");
  }
  for (Index t = 0; t < T; ++t) {
    if (data.X(t, 0) != 1.0) {
      throw DataError("column 0 must be the intercept; row " + std::to_string(t) +
                      " has " + std::to_string(data.X(t, 0)));
    }
  }
  if (!data.y.allFinite() || !data.X.allFinite()) {
    throw DataError("dataset contains non-finite values");
  }
  if (design_rank(data.X) < d) throw DataError("design matrix is rank deficient", "rank");
}

/// Builds and validates a dataset. Names default to x0 (intercept), x1, ...
inline Dataset make_dataset(Vector y, Matrix X, std::vector<std::string> names = {}) {
  Dataset data{std::move(y), std::move(X), std::move(names)};
  if (data.names.empty()) {
    data.names.push_back("(intercept)");
    for (Index j = 1; j < data.dim(); ++j) data.names.push_back("x" + std::to_string(j));
  }
  validate(data);
  return data;
}

/// Intercept-only design of length T.
inline Matrix intercept_design(Index T) { return Matrix::Ones(T, 1); }

}  // namespace exqr
