#pragma once

// Simulation of the extreme-value limit laws of the extremal QR statistics.
//
// With unit-rate arrivals G_1 < G_2 < ... and design points x_t drawn from a
// smoothed empirical design distribution, the raw limit argmin at order k is
//
//     W(k) = argmin_w  -k xbar'w + sum_t ( x_t'w - s G_t^-xi x_t'gamma )_+
//
// where s = +1 for a finite lower endpoint (xi < 0) and s = -1 for a heavy
// lower tail (xi > 0). The centered canonical draw, the self-normalized draw
// and the end-point draw are
//
//     Z(k)     = s W(k) - k^-xi gamma
//     SN       = sqrt(k) psi'Z(k) / D,     D = s xbar'(W(mk) - W(k))
//     boundary = sqrt(k) psi's W(k) / D.
//
// In the location model these reduce to G_k^-xi - k^-xi and
// sqrt(k)(G_k^-xi - k^-xi) / (G_mk^-xi - G_k^-xi).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "exqr/dataset.hpp"
#include "exqr/detail/hinge_lp.hpp"
#include "exqr/error.hpp"
#include "exqr/random.hpp"

namespace exqr {

/// Sign that maps the raw argmin onto the lower tail: +1 if xi < 0, -1 otherwise.
inline double tail_sign(double xi) { return xi < 0.0 ? 1.0 : -1.0; }

/// Orders within 1e-9 (relative) of an integer are snapped to it, so that
/// k = tau T or m k computed in floating point hit the intended order
/// statistic rather than the next one.
inline double snap_order(double k) {
  const double r = std::round(k);
  return std::abs(k - r) <= 1e-9 * std::max(1.0, std::abs(k)) ? r : k;
}

struct PoissonPoints {
  Vector gammas;  // strictly increasing arrival times
  Matrix xs;      // one design point per row, first coordinate 1
};

/// Partial sums of M iid standard exponentials.
inline Vector sample_poisson_arrivals(Index M, Rng& rng) {
  if (M < 1) throw DomainError("need at least one arrival");
  std::exponential_distribution<double> expo(1.0);
  Vector g(M);
  double total = 0.0;
  for (Index t = 0; t < M; ++t) {
    double e = 0.0;
    while (!(e > 0.0)) e = expo(rng);
    total += e;
    g(t) = total;
  }
  return g;
}

/// Empirical design distribution convolved with independent Gaussian noise
/// of scale sd(column) / sqrt(T) on every non-constant column.
class SmoothedDesignSampler {
 public:
  explicit SmoothedDesignSampler(Matrix source) : source_(std::move(source)) {
    if (source_.rows() < 1 || source_.cols() < 1) throw DataError("empty design");
    const Index T = source_.rows();
    noise_scales_ = Vector::Zero(source_.cols());
    for (Index j = 0; j < source_.cols(); ++j) {
      const auto col = source_.col(j);
      if ((col.array() == col(0)).all()) continue;
      const double mean = col.mean();
      const double var = (col.array() - mean).square().sum() / static_cast<double>(T - 1);
      noise_scales_(j) = std::sqrt(var / static_cast<double>(T));
    }
  }

  /// Degenerate design x = 1.
  static SmoothedDesignSampler constant_one() { return SmoothedDesignSampler(Matrix::Ones(1, 1)); }

  const Matrix& source() const { return source_; }
  const Vector& noise_scales() const { return noise_scales_; }
  Index dim() const { return source_.cols(); }
  Vector column_means() const { return source_.colwise().mean().transpose(); }

  void draw_into(Rng& rng, Eigen::Ref<Vector> out) const {
    std::uniform_int_distribution<Index> pick(0, source_.rows() - 1);
    out = source_.row(pick(rng)).transpose();
    std::normal_distribution<double> z(0.0, 1.0);
    for (Index j = 0; j < out.size(); ++j) {
      if (noise_scales_(j) > 0.0) out(j) += noise_scales_(j) * z(rng);
    }
  }

 private:
  Matrix source_;
  Vector noise_scales_;
};

inline Vector draw_design_point(const SmoothedDesignSampler& sampler, Rng& rng) {
  Vector x(sampler.dim());
  sampler.draw_into(rng, x);
  return x;
}

inline PoissonPoints draw_poisson_points(const SmoothedDesignSampler& sampler, Index M, Rng& rng) {
  PoissonPoints pts;
  pts.gammas = sample_poisson_arrivals(M, rng);
  pts.xs.resize(M, sampler.dim());
  Vector x(sampler.dim());
  for (Index t = 0; t < M; ++t) {
    sampler.draw_into(rng, x);
    pts.xs.row(t) = x.transpose();
  }
  return pts;
}

struct LimitArgmin {
  Vector w;  // raw argmin W(k)
  std::vector<Index> basis;
  bool nonunique = false;
};

namespace sim_detail {

inline Vector hinge_targets(double xi, const Vector& gamma, const PoissonPoints& pts) {
  const double s = tail_sign(xi);
  const Vector xg = pts.xs * gamma;
  Vector b(pts.gammas.size());
  for (Index t = 0; t < b.size(); ++t) b(t) = s * std::pow(pts.gammas(t), -xi) * xg(t);
  return b;
}

inline void check_inputs(double k, const Vector& gamma, const Vector& xbar, const PoissonPoints& pts) {
  if (!(k > 0.0)) throw DomainError("limit order k must be positive");
  const Index d = xbar.size();
  if (gamma.size() != d || pts.xs.cols() != d) throw DataError("dimension mismatch in limit simulation");
  if (pts.xs.rows() < d) throw TruncationError("fewer Poisson points than parameters; increase M");
}

}  // namespace sim_detail

/// Raw limit argmin W(k) on a fixed point-process realization.
inline LimitArgmin limit_argmin(double k, double xi, const Vector& gamma, const Vector& xbar,
                                const PoissonPoints& pts, const Vector& targets,
                                std::span<const Index> warm = {}) {
  sim_detail::check_inputs(k, gamma, xbar, pts);
  const Vector q = snap_order(k) * xbar;
  detail::HingeSolution sol;
  try {
    sol = detail::solve_hinge(pts.xs, targets, q, {}, warm);
  } catch (const TruncationError&) {
    throw TruncationError("limit objective unbounded at k = " + std::to_string(k) + " with M = " +
                          std::to_string(pts.xs.rows()) + " points; increase M");
  }
  return {std::move(sol.beta), std::move(sol.basis), sol.nonunique};
}

inline LimitArgmin limit_argmin(double k, double xi, const Vector& gamma, const Vector& xbar,
                                const PoissonPoints& pts) {
  return limit_argmin(k, xi, gamma, xbar, pts, sim_detail::hinge_targets(xi, gamma, pts));
}

/// Truncated limit objective in raw coordinates w.
inline double limit_objective(double k, double xi, const Vector& gamma, const Vector& xbar,
                              const PoissonPoints& pts, const Vector& w) {
  const Vector b = sim_detail::hinge_targets(xi, gamma, pts);
  const Vector r = pts.xs * w - b;
  return -snap_order(k) * xbar.dot(w) + r.cwiseMax(0.0).sum();
}

/// Centered canonical limit draw Z(k) = s W(k) - k^-xi gamma.
inline Vector simulate_zhat_star(double k, double xi, const Vector& gamma, const Vector& xbar,
                                 const PoissonPoints& pts) {
  const LimitArgmin a = limit_argmin(k, xi, gamma, xbar, pts);
  return tail_sign(xi) * a.w - std::pow(snap_order(k), -xi) * gamma;
}

struct JointDraw {
  double cn = 0.0;
  double sn = 0.0;        // NaN when k(m - 1) <= d
  double boundary = 0.0;  // NaN when k(m - 1) <= d
  double denominator = 0.0;
  bool nonunique = false;
};

/// One joint draw of the canonical, self-normalized and end-point statistics
/// from a single point-process realization covering both k and m k.
inline JointDraw joint_draw_on(double k, double m, double xi, const Vector& gamma, const Vector& xbar,
                               const Vector& psi, const PoissonPoints& pts, bool with_sn = true) {
  const double kk = snap_order(k);
  const double s = tail_sign(xi);
  const Vector targets = sim_detail::hinge_targets(xi, gamma, pts);
  const LimitArgmin lo = limit_argmin(kk, xi, gamma, xbar, pts, targets);
  JointDraw out;
  out.nonunique = lo.nonunique;
  const Vector z = s * lo.w - std::pow(kk, -xi) * gamma;
  out.cn = psi.dot(z);
  if (!with_sn) {
    out.sn = out.boundary = std::nan("");
    return out;
  }
  const LimitArgmin hi = limit_argmin(snap_order(m * k), xi, gamma, xbar, pts, targets, lo.basis);
  out.nonunique = out.nonunique || hi.nonunique;
  out.denominator = s * xbar.dot(hi.w - lo.w);
  out.sn = std::sqrt(kk) * out.cn / out.denominator;
  out.boundary = std::sqrt(kk) * s * psi.dot(lo.w) / out.denominator;
  return out;
}

/// Smallest truncation used for orders up to `top`: max(M, 200, 10 top).
inline Index effective_truncation(Index M, double top) {
  return std::max<Index>({M, 200, static_cast<Index>(std::ceil(10.0 * top))});
}

inline void check_sn_order(double k, double m, Index d) {
  if (!(m > 1.0)) throw DomainError("spacing parameter m must exceed 1");
  if (!(k * (m - 1.0) > static_cast<double>(d))) {
    throw DomainError("self-normalization needs k (m - 1) > d (k = " + std::to_string(k) +
                      ", m = " + std::to_string(m) + ", d = " + std::to_string(d) + ")");
  }
}

/// Joint draw with fresh points; rejects zero denominators by redrawing.
/// `rejected` counts the redraws.
inline JointDraw simulate_joint_draw(double k, double m, double xi, const Vector& gamma,
                                     const Vector& xbar, const Vector& psi,
                                     const SmoothedDesignSampler& sampler, Index M, Rng& rng,
                                     int* rejected = nullptr, int max_redraws = 100) {
  if (psi.size() != xbar.size()) throw DataError("psi has the wrong dimension");
  if ((psi.array() == 0.0).all()) throw DomainError("psi must be nonzero");
  check_sn_order(k, m, xbar.size());
  const Index M_used = effective_truncation(M, snap_order(m * k));
  for (int attempt = 0; attempt <= max_redraws; ++attempt) {
    const PoissonPoints pts = draw_poisson_points(sampler, M_used, rng);
    JointDraw draw = joint_draw_on(k, m, xi, gamma, xbar, psi, pts);
    const double tol = 1e-12 * (1.0 + std::pow(snap_order(m * k), std::abs(xi)));
    if (std::isfinite(draw.sn) && std::abs(draw.denominator) > tol) return draw;
    if (rejected) ++*rejected;
  }
  throw SimulationError("self-normalizing denominator vanished on every redraw");
}

struct LimitLawSample {
  double k = 0.0;
  double m = 0.0;
  double xi = 0.0;
  int B = 0;
  Index M = 0;  // truncation actually used
  std::uint64_t seed = 0;
  std::vector<double> cn_draws;
  std::vector<double> sn_draws;        // empty when k(m - 1) <= d
  std::vector<double> boundary_draws;  // empty when k(m - 1) <= d
  int rejected = 0;
  int nonunique = 0;
};

struct LimitLawOptions {
  int B = 1000;
  Index M = 500;
  std::uint64_t seed = 0;
  unsigned threads = 0;  // 0: thread_count()
};

/// B independent joint draws. Draw i uses its own random stream derived from
/// (seed, i), so the output does not depend on the worker count.
inline LimitLawSample simulate_limit_sample(double k, double m, double xi, const Vector& gamma,
                                            const Vector& xbar, const Vector& psi,
                                            const SmoothedDesignSampler& sampler,
                                            const LimitLawOptions& opt = {}) {
  if (opt.B < 100) throw DomainError("need B >= 100 limit draws, got " + std::to_string(opt.B));
  if (opt.M < 200) throw DomainError("need truncation M >= 200, got " + std::to_string(opt.M));
  if (!(k > 0.0)) throw DomainError("limit order k must be positive");
  if (!(m > 1.0)) throw DomainError("spacing parameter m must exceed 1");
  if (psi.size() != xbar.size() || gamma.size() != xbar.size() || sampler.dim() != xbar.size()) {
    throw DataError("dimension mismatch in limit simulation");
  }
  if ((psi.array() == 0.0).all()) throw DomainError("psi must be nonzero");
  if (!std::isfinite(xi)) throw DomainError("EV index must be finite");

  const bool with_sn = k * (m - 1.0) > static_cast<double>(xbar.size());
  LimitLawSample out;
  out.k = k;
  out.m = m;
  out.xi = xi;
  out.B = opt.B;
  out.seed = opt.seed;
  out.M = effective_truncation(opt.M, with_sn ? snap_order(m * k) : snap_order(k));

  const auto B = static_cast<std::size_t>(opt.B);
  std::vector<JointDraw> draws(B);
  std::vector<int> rejected(B, 0);
  const int cap = std::max(1, opt.B / 100);
  parallel_for(
      B,
      [&](std::size_t i) {
        Rng rng = stream_rng(opt.seed, i);
        if (with_sn) {
          draws[i] = simulate_joint_draw(k, m, xi, gamma, xbar, psi, sampler, out.M, rng,
                                         &rejected[i], cap);
        } else {
          const PoissonPoints pts = draw_poisson_points(sampler, out.M, rng);
          draws[i] = joint_draw_on(k, m, xi, gamma, xbar, psi, pts, false);
        }
      },
      opt.threads);

  for (std::size_t i = 0; i < B; ++i) {
    out.rejected += rejected[i];
    out.nonunique += draws[i].nonunique ? 1 : 0;
  }
  if (out.rejected > cap) {
    throw SimulationError("rejected " + std::to_string(out.rejected) +
                          " draws with a vanishing self-normalizing denominator (cap " +
                          std::to_string(cap) + ")");
  }
  out.cn_draws.reserve(B);
  for (const auto& d : draws) out.cn_draws.push_back(d.cn);
  if (with_sn) {
    out.sn_draws.reserve(B);
    out.boundary_draws.reserve(B);
    for (const auto& d : draws) {
      out.sn_draws.push_back(d.sn);
      out.boundary_draws.push_back(d.boundary);
    }
  }
  return out;
}

struct OracleDraw {
  double cn = 0.0;
  double sn = 0.0;
};

/// Closed-form location-model draw: G_k^-xi - k^-xi and its self-normalized
/// version, with G_k ~ Gamma(k) and G_mk = G_k + Gamma(mk - k) so fractional
/// orders follow the gamma-process representation of the arrivals.
inline OracleDraw nonregression_oracle_draw(double k, double m, double xi, Rng& rng) {
  if (!(k > 0.0) || !(m > 1.0)) throw DomainError("oracle needs k > 0 and m > 1");
  const double kk = snap_order(k);
  const double mk = snap_order(m * k);
  std::gamma_distribution<double> g1(kk, 1.0), g2(mk - kk, 1.0);
  const double a = g1(rng);
  const double b = a + g2(rng);
  OracleDraw out;
  out.cn = std::pow(a, -xi) - std::pow(kk, -xi);
  out.sn = std::sqrt(kk) * out.cn / (std::pow(b, -xi) - std::pow(a, -xi));
  return out;
}

}  // namespace exqr
