#pragma once

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "exqr/dataset.hpp"
#include "exqr/error.hpp"
#include "exqr/qr_solver.hpp"

namespace exqr {

/// Spacing parameter m = (d + p)/(tau T) + 1, so that tau T (m - 1) = d + p.
inline double spacing_m(double tau, Index T, Index d, int p = 5) {
  const double order = tau * static_cast<double>(T);
  if (!(order > 0.0)) throw DomainError("spacing parameter needs tau T > 0");
  if (p < 1) throw DomainError("spacing offset p must be at least 1");
  const double m = static_cast<double>(d + p) / order + 1.0;
  if (!(m * tau < 1.0)) {
    throw DomainError("upper spacing quantile m tau = " + std::to_string(m * tau) +
                      " is not below 1 (tau = " + std::to_string(tau) + ")");
  }
  return m;
}

/// Random normalization sqrt(tau T) / xbar'(b(m tau) - b(tau)); the sign is kept.
inline double sn_scale(const Dataset& data, const QuantileFit& fit_tau, const QuantileFit& fit_mtau) {
  const double den = data.column_means().dot(fit_mtau.beta - fit_tau.beta);
  if (!(std::abs(den) > 1e-12 * data.response_scale())) {
    throw DegenerateScaleError("quantile spacing " + std::to_string(den) +
                               " is too small to self-normalize");
  }
  return std::sqrt(fit_tau.tau * static_cast<double>(data.size())) / den;
}

/// The ceil(alpha N)-th order statistic (with a 1e-9 guard against rounding
/// in alpha N).
inline double empirical_quantile(std::vector<double> draws, double alpha) {
  if (draws.empty()) throw DataError("no draws to take a quantile of", "empty_draws");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("quantile level must lie in (0,1)");
  const double n = static_cast<double>(draws.size());
  auto rank = static_cast<std::size_t>(std::ceil(alpha * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, draws.size());
  std::nth_element(draws.begin(), draws.begin() + static_cast<std::ptrdiff_t>(rank - 1), draws.end());
  return draws[rank - 1];
}

enum class Statistic { sn, cn, boundary };
enum class CvMethod { subsample, analytic };

inline const char* statistic_name(Statistic s) {
  switch (s) {
    case Statistic::sn: return "SN";
    case Statistic::cn: return "CN";
    case Statistic::boundary: return "boundary";
  }
  return "?";
}

inline const char* cv_method_name(CvMethod m) {
  return m == CvMethod::subsample ? "subsample" : "analytic";
}

/// Quantiles of a simulated or subsampled reference law.
struct CriticalValues {
  Statistic statistic = Statistic::sn;
  CvMethod method = CvMethod::analytic;
  std::vector<std::pair<double, double>> grid;  // (level, quantile), sorted by level
  std::size_t draw_count = 0;
  std::map<std::string, double> provenance;

  /// Quantile at `level`; throws when the level is not on the grid.
  double at(double level) const {
    for (const auto& [a, c] : grid) {
      if (std::abs(a - level) <= 1e-12) return c;
    }
    throw UsageError("critical value grid lacks level " + std::to_string(level), "missing_grid");
  }

  std::string tag() const {
    return std::string(statistic_name(statistic)) + "-" + cv_method_name(method);
  }
};

/// Levels {a/2, 1/2, 1 - a/2} for each a in `alphas`, deduplicated.
inline std::vector<double> critical_levels(const std::vector<double>& alphas) {
  std::vector<double> levels{0.5};
  for (double a : alphas) {
    if (!(a > 0.0 && a < 1.0)) throw DomainError("significance level must lie in (0,1)");
    levels.push_back(a / 2.0);
    levels.push_back(1.0 - a / 2.0);
  }
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end(),
                           [](double x, double y) { return std::abs(x - y) <= 1e-12; }),
               levels.end());
  return levels;
}

inline CriticalValues make_critical_values(Statistic stat, CvMethod method,
                                           const std::vector<double>& draws,
                                           const std::vector<double>& alphas,
                                           std::map<std::string, double> provenance = {}) {
  if (draws.empty()) throw DataError("no draws to build critical values from", "empty_draws");
  CriticalValues cv;
  cv.statistic = stat;
  cv.method = method;
  cv.draw_count = draws.size();
  cv.provenance = std::move(provenance);
  std::vector<double> sorted = draws;
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  for (double level : critical_levels(alphas)) {
    auto rank = static_cast<std::size_t>(std::ceil(level * n - 1e-9));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());
    cv.grid.emplace_back(level, sorted[rank - 1]);
  }
  return cv;
}

struct InferenceResult {
  Vector psi;
  double tau = 0.0;
  double point = 0.0;
  double median_unbiased = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  double alpha = 0.0;
  std::string method;
  double scale_used = 0.0;
  std::optional<double> m;
  std::vector<std::string> warnings;
};

namespace infer_detail {

inline void check_psi(const Dataset& data, const Vector& psi) {
  if (psi.size() != data.dim()) throw DataError("psi has the wrong dimension");
  if ((psi.array() == 0.0).all()) throw DomainError("psi must be nonzero");
}

// point - c/scale for the three critical values, endpoints sorted.
inline void apply(InferenceResult& r, const CriticalValues& cv, double scale) {
  const double lo = cv.at(r.alpha / 2.0);
  const double mid = cv.at(0.5);
  const double hi = cv.at(1.0 - r.alpha / 2.0);
  r.scale_used = scale;
  r.median_unbiased = r.point - mid / scale;
  const double e1 = r.point - hi / scale;
  const double e2 = r.point - lo / scale;
  r.ci_lo = std::min(e1, e2);
  r.ci_hi = std::max(e1, e2);
  r.method = cv.tag();
  if (!(lo <= mid && mid <= hi)) {
    r.warnings.push_back("median critical value lies outside the interval critical values");
  }
}

inline void check_m(const CriticalValues& cv, double m) {
  auto it = cv.provenance.find("m");
  if (it != cv.provenance.end() && std::abs(it->second - m) > 1e-9 * m) {
    throw UsageError("critical values were built with m = " + std::to_string(it->second) +
                         " but inference uses m = " + std::to_string(m),
                     "config");
  }
}

}  // namespace infer_detail

/// Self-normalized inference on psi'beta(tau) (lower tail).
inline InferenceResult infer_sn(const Dataset& data, double tau, const Vector& psi, double alpha,
                                const CriticalValues& cvals, int p = 5) {
  infer_detail::check_psi(data, psi);
  if (cvals.statistic != Statistic::sn) throw UsageError("infer_sn needs SN critical values");
  const double m = spacing_m(tau, data.size(), data.dim(), p);
  infer_detail::check_m(cvals, m);
  const QuantileFit f = fit_qr(data, tau);
  QrOptions warm;
  warm.warm_basis = f.basis;
  const QuantileFit fm = fit_qr(data, m * tau, warm);
  InferenceResult r;
  r.psi = psi;
  r.tau = tau;
  r.alpha = alpha;
  r.m = m;
  r.point = psi.dot(f.beta);
  infer_detail::apply(r, cvals, sn_scale(data, f, fm));
  return r;
}

/// Canonically normalized inference with an estimated scale A_hat.
inline InferenceResult infer_cn(const Dataset& data, double tau, const Vector& psi, double alpha,
                                double A_hat, const CriticalValues& cvals) {
  infer_detail::check_psi(data, psi);
  if (cvals.statistic != Statistic::cn) throw UsageError("infer_cn needs CN critical values");
  if (!(std::abs(A_hat) > 0.0) || !std::isfinite(A_hat)) {
    throw DegenerateScaleError("canonical scale must be finite and nonzero");
  }
  const QuantileFit f = fit_qr(data, tau);
  InferenceResult r;
  r.psi = psi;
  r.tau = tau;
  r.alpha = alpha;
  r.point = psi.dot(f.beta);
  infer_detail::apply(r, cvals, A_hat);
  return r;
}

/// Inference on the lower end-point psi'beta_e from the sample extreme fit
/// b(1/T), self-normalized with m = d + p + 1. A positive xi_hat (no finite
/// end-point under the model) yields a warning.
inline InferenceResult infer_boundary(const Dataset& data, const Vector& psi, double alpha,
                                      const CriticalValues& cvals, int p = 5,
                                      std::optional<double> xi_hat = std::nullopt) {
  infer_detail::check_psi(data, psi);
  if (cvals.statistic != Statistic::boundary) {
    throw UsageError("infer_boundary needs boundary critical values");
  }
  const Index T = data.size();
  const double tau = 1.0 / static_cast<double>(T);
  const double m = spacing_m(tau, T, data.dim(), p);
  infer_detail::check_m(cvals, m);
  const QuantileFit f = fit_qr(data, tau);
  QrOptions warm;
  warm.warm_basis = f.basis;
  const QuantileFit fm = fit_qr(data, m * tau, warm);
  InferenceResult r;
  r.psi = psi;
  r.tau = tau;
  r.alpha = alpha;
  r.m = m;
  r.point = psi.dot(f.beta);
  infer_detail::apply(r, cvals, sn_scale(data, f, fm));
  if (xi_hat && *xi_hat > 0.0) {
    r.warnings.push_back("estimated EV index " + std::to_string(*xi_hat) +
                         " is positive: the model implies no finite lower end-point");
  }
  return r;
}

/// Hall-Sheather bandwidth on the probability scale.
inline double hall_sheather_bandwidth(double tau, Index T, double alpha) {
  boost::math::normal_distribution<double> N;
  const double z = boost::math::quantile(N, 1.0 - alpha / 2.0);
  const double x = boost::math::quantile(N, tau);
  const double f = boost::math::pdf(N, x);
  return std::cbrt(1.0 / static_cast<double>(T)) * std::pow(z, 2.0 / 3.0) *
         std::cbrt(1.5 * f * f / (2.0 * x * x + 1.0));
}

/// Normal-approximation interval with a Powell kernel sandwich:
/// se^2 = tau(1 - tau) psi'J^-1 (X'X/T) J^-1 psi / T.
inline InferenceResult normal_ci(const Dataset& data, double tau, const Vector& psi, double alpha) {
  infer_detail::check_psi(data, psi);
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("significance level must lie in (0,1)");
  const Index T = data.size();
  const QuantileFit f = fit_qr(data, tau);
  const Vector r = data.y - data.X * f.beta;

  boost::math::normal_distribution<double> N;
  double ht = hall_sheather_bandwidth(tau, T, alpha);
  ht = std::min(ht, 0.99 * std::min(tau, 1.0 - tau));
  const double spread = boost::math::quantile(N, tau + ht) - boost::math::quantile(N, tau - ht);

  std::vector<double> sorted(r.data(), r.data() + r.size());
  std::sort(sorted.begin(), sorted.end());
  const double mean = r.mean();
  const double sd = std::sqrt((r.array() - mean).square().sum() / static_cast<double>(T - 1));
  auto q = [&](double a) { return sorted[static_cast<std::size_t>(std::ceil(a * T - 1e-9)) - 1]; };
  const double iqr = q(0.75) - q(0.25);
  const double kappa = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  const double h = spread * kappa;
  if (!(h > 0.0)) throw NumericalError("kernel bandwidth is zero", "singular_density");

  Matrix J = Matrix::Zero(data.dim(), data.dim());
  for (Index t = 0; t < T; ++t) {
    const double u = r(t) / h;
    const double w = std::exp(-0.5 * u * u) / (std::sqrt(2.0 * M_PI) * h);
    J.noalias() += w * data.X.row(t).transpose() * data.X.row(t);
  }
  J /= static_cast<double>(T);
  Eigen::FullPivLU<Matrix> lu(J);
  lu.setThreshold(1e-12);
  if (!lu.isInvertible()) throw NumericalError("kernel density matrix is singular", "singular_density");
  const Vector g = lu.solve(psi);
  const Matrix S = data.X.transpose() * data.X / static_cast<double>(T);
  const double var = tau * (1.0 - tau) * g.dot(S * g) / static_cast<double>(T);
  const double se = std::sqrt(var);
  const double z = boost::math::quantile(N, 1.0 - alpha / 2.0);

  InferenceResult res;
  res.psi = psi;
  res.tau = tau;
  res.alpha = alpha;
  res.point = psi.dot(f.beta);
  res.median_unbiased = res.point;
  res.ci_lo = res.point - z * se;
  res.ci_hi = res.point + z * se;
  res.method = "normal";
  res.scale_used = se;
  return res;
}

enum class Advice { extremal, both, normal };

inline const char* advice_name(Advice a) {
  switch (a) {
    case Advice::extremal: return "extremal";
    case Advice::both: return "both";
    case Advice::normal: return "normal";
  }
  return "?";
}

struct AdviceRecord {
  double order_per_regressor = 0.0;       // tau T / d
  std::optional<double> order_in_cell;    // tau T s
  double threshold = 20.0;
  double cell_threshold = 30.0;
  Advice recommendation = Advice::normal;
};

struct AdviceOptions {
  double threshold = 20.0;
  double cell_threshold = 30.0;
  double band = 0.25;
};

/// Classifies one order against a threshold with a relative "both" band.
inline Advice classify_order(double order, double threshold, double band) {
  if (order < (1.0 - band) * threshold) return Advice::extremal;
  if (order > (1.0 + band) * threshold) return Advice::normal;
  return Advice::both;
}

/// Rule of thumb: extremal inference for small effective orders, normal for
/// large ones, "both" near the threshold. The tail is taken as the closer
/// of tau and 1 - tau.
inline AdviceRecord advise_method(double tau, Index T, Index d,
                                  std::optional<double> min_cell_share = std::nullopt,
                                  const AdviceOptions& opt = {}) {
  if (!(tau > 0.0 && tau < 1.0)) throw DomainError("quantile index must lie in (0,1)");
  if (T < 1 || d < 1) throw DomainError("advice needs T >= 1 and d >= 1");
  if (!(opt.threshold >= 15.0 && opt.threshold <= 30.0)) {
    throw DomainError("advisor threshold must lie in [15, 30]");
  }
  const double order = std::min(tau, 1.0 - tau) * static_cast<double>(T);
  AdviceRecord rec;
  rec.threshold = opt.threshold;
  rec.cell_threshold = opt.cell_threshold;
  rec.order_per_regressor = order / static_cast<double>(d);
  std::vector<Advice> votes{classify_order(rec.order_per_regressor, opt.threshold, opt.band)};
  if (min_cell_share) {
    if (!(*min_cell_share > 0.0 && *min_cell_share <= 1.0)) {
      throw DomainError("cell share must lie in (0,1]");
    }
    rec.order_in_cell = order * *min_cell_share;
    votes.push_back(classify_order(*rec.order_in_cell, opt.cell_threshold, opt.band));
  }
  auto has = [&](Advice a) { return std::find(votes.begin(), votes.end(), a) != votes.end(); };
  rec.recommendation = has(Advice::extremal) ? Advice::extremal
                       : has(Advice::both)   ? Advice::both
                                             : Advice::normal;
  return rec;
}

}  // namespace exqr
