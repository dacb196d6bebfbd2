#pragma once

// Vertex solver for piecewise-linear convex programs of the form
//
//     minimize  -q'b + sum_t (x_t'b - y_t)_+      over b in R^d.
//
// Quantile regression is the special case q = tau * sum_t x_t (up to an
// additive constant), and the Poisson-process argmin used for the limit laws
// is the case q = k * xbar. The method is a dual simplex on the bounded dual
//
//     maximize -y'a   subject to  X'a = q,  0 <= a_t <= 1,
//
// with a bound-flipping (long-step) ratio test: each pivot walks along an
// edge of the primal polyhedron through all residual sign changes until the
// directional derivative turns nonnegative.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "exqr/error.hpp"

namespace exqr::detail {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

struct HingeOptions {
  /// Residuals below this times max|y| are treated as zero.
  double residual_tol = 1e-9;
  /// Dual feasibility tolerance, relative to 1 + max|q|.
  double dual_tol = 1e-10;
  /// 0 selects 20 * (T + d) + 1000.
  int max_iterations = 0;
};

struct HingeSolution {
  Vector beta;
  std::vector<Index> basis;  // observation indices, in basis-row order
  Vector weights;            // dual values a_h of the basic observations
  bool nonunique = false;    // some basic weight sits on a bound
  int iterations = 0;
};

namespace hinge_impl {

// Greedy rank-revealing pick of d rows, scanning `order`.
inline std::vector<Index> greedy_basis(const Matrix& X, const std::vector<Index>& order) {
  const Index d = X.cols();
  std::vector<Index> basis;
  Matrix Q(d, d);
  Index r = 0;
  for (Index t : order) {
    Vector v = X.row(t).transpose();
    const double norm0 = v.norm();
    if (norm0 == 0.0) continue;
    for (int pass = 0; pass < 2; ++pass) {
      for (Index j = 0; j < r; ++j) v -= Q.col(j).dot(v) * Q.col(j);
    }
    const double nv = v.norm();
    if (nv > 1e-9 * norm0) {
      Q.col(r) = v / nv;
      basis.push_back(t);
      if (++r == d) break;
    }
  }
  return basis;
}

// Rows ordered by distance of their y-rank from the rank the optimum should
// occupy when column 0 is an intercept (q(0) counts the points below the
// fit). Ties favour the lower rank, so in the location model the start is
// already the ceil(q0)-th order statistic.
inline std::vector<Index> start_order(const Matrix& X, const Vector& y, const Vector& q) {
  const Index T = X.rows();
  std::vector<Index> by_y(static_cast<std::size_t>(T));
  std::iota(by_y.begin(), by_y.end(), Index{0});
  std::stable_sort(by_y.begin(), by_y.end(), [&](Index a, Index b) { return y(a) < y(b); });
  const bool intercept = (X.col(0).array() == 1.0).all();
  Index target = 0;
  if (intercept) {
    const double k = std::ceil(q(0) - 1e-9) - 1.0;
    target = static_cast<Index>(std::clamp(k, 0.0, static_cast<double>(T - 1)));
  }
  std::vector<Index> order;
  order.reserve(static_cast<std::size_t>(T));
  order.push_back(by_y[static_cast<std::size_t>(target)]);
  for (Index off = 1; off < T; ++off) {
    if (target - off >= 0) order.push_back(by_y[static_cast<std::size_t>(target - off)]);
    if (target + off < T) order.push_back(by_y[static_cast<std::size_t>(target + off)]);
  }
  return order;
}

struct Breakpoint {
  double ratio;
  Index t;
};

}  // namespace hinge_impl

/// Solves the hinge program. `warm_basis`, if non-empty and nonsingular, is
/// used as the starting vertex; otherwise see start_order().
inline HingeSolution solve_hinge(const Matrix& X, const Vector& y, const Vector& q,
                                 const HingeOptions& opt = {},
                                 std::span<const Index> warm_basis = {}) {
  using hinge_impl::Breakpoint;
  const Index T = X.rows();
  const Index d = X.cols();
  if (y.size() != T || q.size() != d) throw SolverError("hinge program: dimension mismatch");
  if (T < d) throw SolverError("hinge program: fewer observations than parameters");

  const double yscale = std::max(1.0, y.size() ? y.cwiseAbs().maxCoeff() : 0.0);
  const double rtol = opt.residual_tol * yscale;
  const double atol = opt.dual_tol * (1.0 + q.cwiseAbs().maxCoeff());
  const int max_iter = opt.max_iterations > 0 ? opt.max_iterations
                                              : static_cast<int>(20 * (T + d) + 1000);

  std::vector<Index> basis;
  if (static_cast<Index>(warm_basis.size()) == d) {
    basis.assign(warm_basis.begin(), warm_basis.end());
    Matrix B(d, d);
    for (Index j = 0; j < d; ++j) B.row(j) = X.row(basis[j]);
    Eigen::FullPivLU<Matrix> check(B);
    check.setThreshold(1e-10);
    if (!check.isInvertible()) basis.clear();
  }
  if (basis.empty()) {
    basis = hinge_impl::greedy_basis(X, hinge_impl::start_order(X, y, q));
    if (static_cast<Index>(basis.size()) < d) {
      throw SolverError("degenerate design: selected rows have rank " +
                        std::to_string(basis.size()) + " < d = " + std::to_string(d));
    }
  }

  std::vector<char> in_basis(static_cast<std::size_t>(T), 0);
  for (Index h : basis) in_basis[static_cast<std::size_t>(h)] = 1;

  Matrix B(d, d);
  Vector yb(d);
  auto load_basis = [&]() {
    for (Index j = 0; j < d; ++j) {
      B.row(j) = X.row(basis[j]);
      yb(j) = y(basis[j]);
    }
  };
  load_basis();
  Eigen::PartialPivLU<Matrix> lu(B);
  Vector beta = lu.solve(yb);
  Vector r = y - X * beta;
  for (Index h : basis) r(h) = 0.0;

  // status(t) = 1 marks a nonbasic point held at the upper bound a_t = 1
  // (nonpositive residual); 0 marks a_t = 0 (nonnegative residual).
  Vector status = Vector::Zero(T);
  for (Index t = 0; t < T; ++t) {
    if (!in_basis[static_cast<std::size_t>(t)] && r(t) < 0.0) status(t) = 1.0;
  }

  Vector a(d), delta(d), w(T), unit(d);
  std::vector<Breakpoint> cand;
  cand.reserve(static_cast<std::size_t>(T));
  int degenerate_run = 0;
  const int bland_after = static_cast<int>(4 * d + 20);

  HingeSolution sol;
  for (int iter = 0;; ++iter) {
    if (iter >= max_iter) {
      throw SolverError("hinge program did not converge within " + std::to_string(max_iter) +
                        " pivots");
    }
    a = lu.transpose().solve(q - X.transpose() * status);

    // Leaving row: largest bound violation, or smallest index under Bland.
    Index p = -1;
    double worst = atol;
    const bool bland = degenerate_run > bland_after;
    for (Index j = 0; j < d; ++j) {
      const double v = std::max(-a(j), a(j) - 1.0);
      if (v <= atol) continue;
      if (bland) {
        if (p < 0 || basis[j] < basis[p]) p = j;
      } else if (v > worst) {
        worst = v;
        p = j;
      }
    }
    if (p < 0) {
      sol.iterations = iter;
      break;
    }

    const double sigma = a(p) > 1.0 ? 1.0 : -1.0;
    unit.setZero();
    unit(p) = 1.0;
    delta = sigma * lu.solve(unit);
    w.noalias() = X * delta;
    double slope = sigma > 0 ? 1.0 - a(p) : a(p);

    const double wmax = w.cwiseAbs().maxCoeff();
    const double wtol = 1e-13 * wmax;
    cand.clear();
    for (Index t = 0; t < T; ++t) {
      if (in_basis[static_cast<std::size_t>(t)]) continue;
      const double wt = w(t);
      if (status(t) == 0.0 ? wt > wtol : wt < -wtol) {
        cand.push_back({std::max(0.0, r(t) / wt), t});
      }
    }
    // Min-heap on (ratio, index); pop breakpoints until the slope turns.
    auto later = [](const Breakpoint& u, const Breakpoint& v) {
      return u.ratio > v.ratio || (u.ratio == v.ratio && u.t > v.t);
    };
    std::make_heap(cand.begin(), cand.end(), later);

    const double stol = 1e-12 * (std::abs(slope) + wmax);
    Index entering = -1;
    double step = 0.0;
    auto heap_end = cand.end();
    while (heap_end != cand.begin()) {
      std::pop_heap(cand.begin(), heap_end, later);
      --heap_end;
      const Breakpoint& bp = *heap_end;
      slope += std::abs(w(bp.t));
      if (slope >= -stol) {
        entering = bp.t;
        step = bp.ratio;
        break;
      }
      status(bp.t) = 1.0 - status(bp.t);
    }
    if (entering < 0) {
      throw TruncationError("hinge program is unbounded below along a basis edge");
    }

    const Index leaving = basis[p];
    in_basis[static_cast<std::size_t>(leaving)] = 0;
    status(leaving) = sigma > 0 ? 1.0 : 0.0;
    in_basis[static_cast<std::size_t>(entering)] = 1;
    status(entering) = 0.0;
    basis[p] = entering;

    if (step * wmax <= rtol) {
      ++degenerate_run;
    } else {
      degenerate_run = 0;
    }

    B.row(p) = X.row(entering);
    yb(p) = y(entering);
    lu.compute(B);
    beta = lu.solve(yb);
    r.noalias() = y - X * beta;
    for (Index h : basis) r(h) = 0.0;
  }

  sol.beta = beta;
  sol.basis = basis;
  sol.weights = a;
  const double nu_tol = std::max(atol, 1e-9);
  for (Index j = 0; j < d; ++j) {
    if (std::abs(a(j)) <= nu_tol || std::abs(a(j) - 1.0) <= nu_tol) sol.nonunique = true;
  }
  return sol;
}

}  // namespace exqr::detail
