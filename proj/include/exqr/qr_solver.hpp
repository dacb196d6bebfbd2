#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "exqr/dataset.hpp"
#include "exqr/detail/hinge_lp.hpp"
#include "exqr/error.hpp"

namespace exqr {

/// Asymmetric absolute deviation: tau * u for u >= 0, (tau - 1) * u otherwise.
inline double check_loss(double u, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw DomainError("quantile index must lie in (0,1), got " + std::to_string(tau));
  }
  return u >= 0.0 ? tau * u : (tau - 1.0) * u;
}

/// Sum of check losses of the residuals y - X beta.
inline double check_objective(const Dataset& data, const Vector& beta, double tau) {
  const Vector r = data.y - data.X * beta;
  double total = 0.0;
  for (Index t = 0; t < r.size(); ++t) total += check_loss(r(t), tau);
  return total;
}

struct QuantileFit {
  double tau = 0.0;
  Vector beta;
  double objective = 0.0;
  /// Interpolated observations (zero residual), sorted ascending.
  std::vector<Index> basis;
  /// Another optimal vertex exists (a basic dual weight sits on a bound).
  bool nonunique = false;
};

struct QrOptions {
  detail::HingeOptions lp;
  /// Optional starting vertex (observation indices), e.g. a neighbouring fit.
  std::vector<Index> warm_basis;
};

/// Exact quantile regression by the vertex solver. Refuses tau * T < 1, the
/// regime below the first order statistic.
inline QuantileFit fit_qr(const Dataset& data, double tau, const QrOptions& opt = {}) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw DomainError("quantile index must lie in (0,1), got " + std::to_string(tau));
  }
  const Index T = data.size();
  if (data.X.rows() != T) throw DataError("design and response lengths differ");
  if (tau * static_cast<double>(T) < 1.0 - 1e-9) {
    throw DomainError("tau * T = " + std::to_string(tau * T) +
                      " < 1; request tau = 1/T explicitly for the sample extreme");
  }
  const Vector q = tau * data.X.colwise().sum().transpose();
  detail::HingeSolution sol = detail::solve_hinge(data.X, data.y, q, opt.lp, opt.warm_basis);

  QuantileFit fit;
  fit.tau = tau;
  fit.beta = std::move(sol.beta);
  fit.objective = check_objective(data, fit.beta, tau);
  fit.basis = std::move(sol.basis);
  std::sort(fit.basis.begin(), fit.basis.end());
  fit.nonunique = sol.nonunique;
  return fit;
}

/// Enumerates every d-subset of observations with an invertible design and
/// returns the best interpolating fit. Ties keep the lexicographically
/// smallest subset. Only for T <= 30 and d <= 4.
inline QuantileFit brute_force_qr(const Dataset& data, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw DomainError("quantile index must lie in (0,1), got " + std::to_string(tau));
  }
  const Index T = data.size();
  const Index d = data.dim();
  if (T > 30 || d > 4) {
    throw UsageError("brute_force_qr refuses instances with T > 30 or d > 4 (got T = " +
                         std::to_string(T) + ", d = " + std::to_string(d) + ")",
                     "size_guard");
  }
  if (d > T) throw DataError("more parameters than observations");

  std::vector<Index> idx(static_cast<std::size_t>(d));
  for (Index j = 0; j < d; ++j) idx[static_cast<std::size_t>(j)] = j;

  QuantileFit best;
  best.tau = tau;
  best.objective = std::numeric_limits<double>::infinity();
  const double tie_tol = 1e-12 * data.response_scale() * static_cast<double>(T);
  Matrix B(d, d);
  Vector yb(d);
  while (true) {
    for (Index j = 0; j < d; ++j) {
      B.row(j) = data.X.row(idx[static_cast<std::size_t>(j)]);
      yb(j) = data.y(idx[static_cast<std::size_t>(j)]);
    }
    Eigen::FullPivLU<Matrix> lu(B);
    lu.setThreshold(1e-10);
    if (lu.isInvertible()) {
      Vector beta = lu.solve(yb);
      const double obj = check_objective(data, beta, tau);
      if (obj < best.objective - tie_tol) {
        best.objective = obj;
        best.beta = beta;
        best.basis = idx;
      }
    }
    // Next combination in lexicographic order.
    Index j = d - 1;
    while (j >= 0 && idx[static_cast<std::size_t>(j)] == T - d + j) --j;
    if (j < 0) break;
    ++idx[static_cast<std::size_t>(j)];
    for (Index i = j + 1; i < d; ++i) {
      idx[static_cast<std::size_t>(i)] = idx[static_cast<std::size_t>(i - 1)] + 1;
    }
  }
  if (!std::isfinite(best.objective)) throw SolverError("no invertible d-subset exists");
  return best;
}

}  // namespace exqr
