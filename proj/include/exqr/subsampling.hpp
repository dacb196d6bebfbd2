#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "exqr/dataset.hpp"
#include "exqr/error.hpp"
#include "exqr/inference.hpp"
#include "exqr/qr_solver.hpp"
#include "exqr/random.hpp"
#include "exqr/tail_estimation.hpp"

namespace exqr {

enum class SubsampleMode { iid, timeseries };

inline const char* subsample_mode_name(SubsampleMode m) {
  return m == SubsampleMode::iid ? "iid" : "timeseries";
}

/// Subsample quantile index keeping the order tau_T T fixed:
/// min(tau_T T / b, 0.2) if tau_T < 0.2, tau_T otherwise.
inline double tau_b_rule(double tau_T, Index T, Index b) {
  if (b < 1 || b > T) throw DomainError("subsample size must satisfy 1 <= b <= T");
  if (tau_T >= 0.2) return tau_T;
  return std::min(tau_T * static_cast<double>(T) / static_cast<double>(b), 0.2);
}

/// ceil(T^0.7), bounded to [5d, T/2].
inline Index default_subsample_size(Index T, Index d) {
  const auto raw = static_cast<Index>(std::ceil(std::pow(static_cast<double>(T), 0.7)));
  const Index lo = 5 * d, hi = T / 2;
  if (lo > hi) throw UsageError("sample too small for the default subsample size; set b", "config");
  return std::clamp(raw, lo, hi);
}

/// B_T index sets of size b, each sorted. iid: independent draws without
/// replacement; timeseries: distinct contiguous blocks (all of them when
/// B_T = T - b + 1). Subset i uses stream i of `seed`.
inline std::vector<std::vector<Index>> make_subsample_indices(Index T, Index b, Index B_T,
                                                              SubsampleMode mode, std::uint64_t seed) {
  if (b < 1 || b >= T) throw DomainError("subsample size must satisfy 1 <= b < T");
  if (B_T < 1) throw DomainError("need at least one subsample");
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(B_T));
  if (mode == SubsampleMode::timeseries) {
    const Index blocks = T - b + 1;
    if (B_T > blocks) {
      throw DomainError("timeseries mode allows at most T - b + 1 = " + std::to_string(blocks) +
                        " blocks");
    }
    std::vector<Index> starts(static_cast<std::size_t>(blocks));
    std::iota(starts.begin(), starts.end(), Index{0});
    if (B_T < blocks) {
      std::vector<Index> picked;
      Rng rng = stream_rng(seed, 0);
      std::sample(starts.begin(), starts.end(), std::back_inserter(picked), B_T, rng);
      starts = std::move(picked);
    }
    for (Index i = 0; i < B_T; ++i) {
      auto& s = out[static_cast<std::size_t>(i)];
      s.resize(static_cast<std::size_t>(b));
      std::iota(s.begin(), s.end(), starts[static_cast<std::size_t>(i)]);
    }
    return out;
  }
  std::vector<Index> all(static_cast<std::size_t>(T));
  std::iota(all.begin(), all.end(), Index{0});
  for (Index i = 0; i < B_T; ++i) {
    Rng rng = stream_rng(seed, static_cast<std::uint64_t>(i));
    auto& s = out[static_cast<std::size_t>(i)];
    s.reserve(static_cast<std::size_t>(b));
    std::sample(all.begin(), all.end(), std::back_inserter(s), b, rng);
  }
  return out;
}

struct SubsampleDraws {
  Index b = 0;
  Index B_T = 0;
  double tau_b = 0.0;
  double m = 0.0;
  double center = 0.0;         // psi'b(tau_b) on the full sample
  std::vector<double> draws;   // one per retained subsample
  std::vector<double> scales;  // normalization used for each retained draw
  int skipped = 0;
  SubsampleMode mode = SubsampleMode::iid;
};

struct SubsampleOptions {
  SubsampleMode mode = SubsampleMode::iid;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  /// Replaces the full-sample centering fit (diagnostics only).
  std::optional<Vector> center_beta;
  /// Largest tolerated share of degenerate subsamples.
  double max_skip_share = 0.10;
};

namespace sub_detail {

enum class Scale { random, fixed };

inline SubsampleDraws run(const Dataset& data, double tau_b, double m, double center, Index b,
                          Index B_T, const Vector& psi, Scale scale_kind, double fixed_scale,
                          const SubsampleOptions& opt) {
  const auto sets = make_subsample_indices(data.size(), b, B_T, opt.mode, opt.seed);
  const auto n = static_cast<std::size_t>(B_T);
  std::vector<double> value(n, 0.0), scale(n, 0.0);
  std::vector<char> ok(n, 0);
  parallel_for(
      n,
      [&](std::size_t i) {
        const Dataset sub = data.rows(sets[i]);
        try {
          const QuantileFit f = fit_qr(sub, tau_b);
          double a = fixed_scale;
          if (scale_kind == Scale::random) {
            QrOptions warm;
            warm.warm_basis = f.basis;
            const QuantileFit fm = fit_qr(sub, m * tau_b, warm);
            a = sn_scale(sub, f, fm);
          }
          value[i] = a * (psi.dot(f.beta) - center);
          scale[i] = a;
          ok[i] = 1;
        } catch (const SolverError&) {
        } catch (const DegenerateScaleError&) {
        }
      },
      opt.threads);

  SubsampleDraws out;
  out.b = b;
  out.B_T = B_T;
  out.tau_b = tau_b;
  out.m = m;
  out.center = center;
  out.mode = opt.mode;
  for (std::size_t i = 0; i < n; ++i) {
    if (ok[i]) {
      out.draws.push_back(value[i]);
      out.scales.push_back(scale[i]);
    } else {
      ++out.skipped;
    }
  }
  if (static_cast<double>(out.skipped) > opt.max_skip_share * static_cast<double>(B_T)) {
    throw NumericalError(std::to_string(out.skipped) + " of " + std::to_string(B_T) +
                             " subsamples were degenerate; increase b",
                         "unstable_subsampling");
  }
  return out;
}

inline void check_psi(const Dataset& data, const Vector& psi) {
  if (psi.size() != data.dim()) throw DataError("psi has the wrong dimension");
  if ((psi.array() == 0.0).all()) throw DomainError("psi must be nonzero");
}

inline double full_center(const Dataset& data, double tau, const Vector& psi,
                          const SubsampleOptions& opt) {
  if (opt.center_beta) {
    if (opt.center_beta->size() != data.dim()) throw DataError("centering vector has the wrong size");
    return psi.dot(*opt.center_beta);
  }
  return psi.dot(fit_qr(data, tau).beta);
}

}  // namespace sub_detail

/// Self-normalized subsample statistics A_i psi'(b_i(tau_b) - b(tau_b)),
/// recentered at the full-sample fit and sharing m = (d + p)/(tau_T T) + 1
/// with the full-sample statistic.
inline SubsampleDraws sn_subsample_draws(const Dataset& data, double tau_T, Index b, Index B_T,
                                         const Vector& psi, int p = 5,
                                         const SubsampleOptions& opt = {}) {
  sub_detail::check_psi(data, psi);
  const Index T = data.size(), d = data.dim();
  const double tau_b = tau_b_rule(tau_T, T, b);
  const double m = static_cast<double>(d + p) / (tau_T * static_cast<double>(T)) + 1.0;
  if (!(tau_b * static_cast<double>(b) * (m - 1.0) > static_cast<double>(d))) {
    throw DomainError("subsample spacing tau_b b (m - 1) = " +
                      std::to_string(tau_b * b * (m - 1.0)) + " does not exceed d = " +
                      std::to_string(d) + "; use a larger b or a smaller tau");
  }
  if (!(m * tau_b < 1.0)) throw DomainError("subsample spacing quantile m tau_b is not below 1");
  const double center = sub_detail::full_center(data, tau_b, psi, opt);
  return sub_detail::run(data, tau_b, m, center, b, B_T, psi, sub_detail::Scale::random, 0.0, opt);
}

/// Canonically normalized subsample statistics with the deterministic scale
/// A_b extrapolated from the tail estimates to sample size b.
inline SubsampleDraws cn_subsample_draws(const Dataset& data, double tau_T, Index b, Index B_T,
                                         const Vector& psi, const TailEstimates& tail,
                                         const SubsampleOptions& opt = {}) {
  sub_detail::check_psi(data, psi);
  const double tau_b = tau_b_rule(tau_T, data.size(), b);
  const double A_b = tail.scale_at(static_cast<double>(b));
  const double center = sub_detail::full_center(data, tau_b, psi, opt);
  return sub_detail::run(data, tau_b, 0.0, center, b, B_T, psi, sub_detail::Scale::fixed, A_b, opt);
}

/// End-point subsample statistics: sample-extreme fits b_i(1/b), m = d + p + 1,
/// recentered at the full-sample extreme fit b(1/T).
inline SubsampleDraws boundary_subsample_draws(const Dataset& data, Index b, Index B_T,
                                               const Vector& psi, int p = 5,
                                               const SubsampleOptions& opt = {}) {
  sub_detail::check_psi(data, psi);
  const Index T = data.size(), d = data.dim();
  const double tau_b = 1.0 / static_cast<double>(b);
  const double m = static_cast<double>(d + p) + 1.0;
  if (!(m * tau_b < 1.0)) throw DomainError("subsample too small for the end-point spacing");
  const double center = sub_detail::full_center(data, 1.0 / static_cast<double>(T), psi, opt);
  return sub_detail::run(data, tau_b, m, center, b, B_T, psi, sub_detail::Scale::random, 0.0, opt);
}

inline CriticalValues subsample_critical_values(Statistic stat, const SubsampleDraws& sd,
                                                const std::vector<double>& alphas) {
  std::map<std::string, double> prov{{"b", static_cast<double>(sd.b)},
                                     {"B_T", static_cast<double>(sd.B_T)},
                                     {"tau_b", sd.tau_b},
                                     {"skipped", static_cast<double>(sd.skipped)}};
  if (stat != Statistic::cn) prov["m"] = sd.m;
  return make_critical_values(stat, CvMethod::subsample, sd.draws, alphas, std::move(prov));
}

}  // namespace exqr
