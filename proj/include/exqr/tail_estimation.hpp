#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "exqr/dataset.hpp"
#include "exqr/error.hpp"
#include "exqr/qr_solver.hpp"

namespace exqr {

/// Smallest |xi| handed to the limit-law machinery; values inside are pushed
/// out to +/- this, keeping the sign.
inline constexpr double kXiFloor = 1e-4;

namespace tail_detail {

inline double spacing(const QuantileFit& lo, const QuantileFit& hi, const Vector& xbar) {
  if (lo.beta.size() != xbar.size() || hi.beta.size() != xbar.size()) {
    throw DataError("fit dimension does not match xbar");
  }
  return xbar.dot(hi.beta - lo.beta);
}

}  // namespace tail_detail

/// Pickands-type EV index from fits at tau, 2 tau and 4 tau:
///
///     xi = -log2( xbar'(b(4t) - b(2t)) / xbar'(b(2t) - b(t)) ).
///
/// `printed_numerator` switches the numerator to xbar'(b(4t) - b(t)), a
/// variant that is not a fixed point on exact Pareto tails; it exists for
/// comparison only.
inline double pickands_xi(const QuantileFit& f1, const QuantileFit& f2, const QuantileFit& f4,
                          const Vector& xbar, bool printed_numerator = false) {
  const double s1 = tail_detail::spacing(f1, f2, xbar);
  const double s2 = printed_numerator ? tail_detail::spacing(f1, f4, xbar)
                                      : tail_detail::spacing(f2, f4, xbar);
  if (s1 == 0.0 || s2 == 0.0) {
    throw DegenerateTailError("zero quantile spacing in the Pickands ratio");
  }
  const double ratio = s2 / s1;
  if (!(ratio > 0.0)) {
    throw DegenerateTailError("quantile spacings have opposite signs (ratio " +
                              std::to_string(ratio) + ")");
  }
  return -std::log(ratio) / std::log(2.0);
}

/// x'gamma with the slope terms summed left to right and the leading
/// (intercept) term added last; the reference for the normalization below.
inline double tail_normalization(const Vector& xbar, const Vector& gamma) {
  double rest = 0.0;
  for (Index j = 1; j < xbar.size(); ++j) rest += xbar(j) * gamma(j);
  return rest + xbar(0) * gamma(0);
}

/// Tail slope, normalized so that xbar'gamma = 1.
inline Vector pickands_gamma(const QuantileFit& f1, const QuantileFit& f2, const Vector& xbar) {
  const double s1 = tail_detail::spacing(f1, f2, xbar);
  if (s1 == 0.0) throw DegenerateTailError("zero quantile spacing in the tail slope");
  Vector gamma = (f2.beta - f1.beta) / s1;
  // Absorb the rounding residue in the intercept (xbar(0) = 1). The intercept
  // grid can be coarser than the doubles around one, so finish by nudging the
  // slope coordinate with the smallest nonzero mean, which moves the sum in
  // much finer steps.
  for (int pass = 0; pass < 2; ++pass) gamma(0) += 1.0 - tail_normalization(xbar, gamma);
  Index fine = -1;
  for (Index j = 1; j < xbar.size(); ++j) {
    if (xbar(j) != 0.0 && (fine < 0 || std::abs(xbar(j)) < std::abs(xbar(fine)))) fine = j;
  }
  if (fine > 0) {
    double gain = 0.75;
    for (int step = 0; step < 200; ++step) {
      const double v = tail_normalization(xbar, gamma);
      if (v == 1.0) break;
      const double moved = gamma(fine) + gain * (1.0 - v) / xbar(fine);
      if (moved == gamma(fine)) {
        const bool raise = (v < 1.0) == (xbar(fine) > 0.0);
        gamma(fine) = std::nextafter(gamma(fine), raise ? HUGE_VAL : -HUGE_VAL);
      } else {
        gamma(fine) = moved;
      }
      if (step % 8 == 7) gain *= 0.5;
    }
  }
  return gamma;
}

/// Extrapolated canonical scale 1 / Q_U(1/n) under the pure power-law tail
/// 1/Q_U(tau) = L tau^xi:
///
///     A_n = (2^-xi - 1) / ( xbar'(b(2t) - b(t)) * (t n)^xi ).
inline double canonical_A_hat(const QuantileFit& f1, const QuantileFit& f2, const Vector& xbar,
                              double xi_hat, double n) {
  if (!(n > 0.0)) throw DomainError("target sample size must be positive");
  const double tau = f1.tau;
  if (tau * n < 1.0 - 1e-9) {
    throw DomainError("canonical scale needs tau_T * n >= 1 (got " + std::to_string(tau * n) + ")");
  }
  const double s1 = tail_detail::spacing(f1, f2, xbar);
  if (s1 == 0.0) throw DegenerateTailError("zero quantile spacing in the canonical scale");
  return (std::pow(2.0, -xi_hat) - 1.0) / (s1 * std::pow(tau * n, xi_hat));
}

/// Default intermediate index: T^(-1/3) clamped to [(d + 20)/T, 0.05].
inline double default_intermediate_tau(Index T, Index d) {
  const double Td = static_cast<double>(T);
  if (T <= 4 * (d + 20)) {
    throw UsageError("sample too small for an intermediate order (T = " + std::to_string(T) +
                         "); supply tau_T explicitly",
                     "config");
  }
  const double lower = static_cast<double>(d + 20) / Td;
  const double upper = 0.05;
  if (lower > upper) {
    throw UsageError("cannot satisfy tau_T * T >= d + 20 and tau_T <= 0.05 with T = " +
                         std::to_string(T) + ", d = " + std::to_string(d) +
                         "; supply tau_T explicitly",
                     "config");
  }
  return std::clamp(std::cbrt(1.0 / Td), lower, upper);
}

/// Pushes |xi| < kXiFloor out to the floor, keeping the sign (a spacing
/// ratio below one gives a positive index).
inline double clamp_xi(double xi) {
  if (std::abs(xi) >= kXiFloor) return xi;
  return std::signbit(xi) ? -kXiFloor : kXiFloor;
}

struct TailEstimates {
  double xi = 0.0;       // clamped EV index used downstream
  double xi_raw = 0.0;   // unclamped Pickands value
  Vector gamma;          // xbar'gamma = 1
  double tau_T = 0.0;    // intermediate index
  double spacing = 0.0;  // xbar'(b(2 tau_T) - b(tau_T))
  std::optional<double> A_hat;
  std::optional<double> A_hat_n;

  /// Canonical scale extrapolated to sample size n.
  double scale_at(double n) const {
    if (tau_T * n < 1.0 - 1e-9) {
      throw DomainError("canonical scale needs tau_T * n >= 1 (got " +
                        std::to_string(tau_T * n) + ")");
    }
    return (std::pow(2.0, -xi) - 1.0) / (spacing * std::pow(tau_T * n, xi));
  }
};

struct TailOptions {
  bool printed_numerator = false;
  /// Sample size at which to report the canonical scale, if any.
  std::optional<double> scale_n;
};

/// Fits the data at tau_T, 2 tau_T, 4 tau_T and returns the Pickands-type
/// tail summary.
inline TailEstimates estimate_tail(const Dataset& data, double tau_T, const TailOptions& opt = {}) {
  if (!(tau_T > 0.0 && 4.0 * tau_T < 1.0)) {
    throw DomainError("intermediate index needs 0 < tau_T < 1/4, got " + std::to_string(tau_T));
  }
  const Vector xbar = data.column_means();
  const QuantileFit f1 = fit_qr(data, tau_T);
  QrOptions warm;
  warm.warm_basis = f1.basis;
  const QuantileFit f2 = fit_qr(data, 2.0 * tau_T, warm);
  warm.warm_basis = f2.basis;
  const QuantileFit f4 = fit_qr(data, 4.0 * tau_T, warm);

  TailEstimates est;
  est.tau_T = tau_T;
  est.xi_raw = pickands_xi(f1, f2, f4, xbar, opt.printed_numerator);
  est.xi = clamp_xi(est.xi_raw);
  est.gamma = pickands_gamma(f1, f2, xbar);
  est.spacing = tail_detail::spacing(f1, f2, xbar);
  if (opt.scale_n) {
    est.A_hat_n = *opt.scale_n;
    est.A_hat = est.scale_at(*opt.scale_n);
  }
  return est;
}

}  // namespace exqr
