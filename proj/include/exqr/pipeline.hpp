#pragma once

// End-to-end inference: tail estimation, critical values by simulation or
// subsampling, and the final interval. Upper-tail indexes (tau > 1/2) are
// handled by negating the response and working at 1 - tau.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "exqr/dataset.hpp"
#include "exqr/error.hpp"
#include "exqr/ev_limit_sim.hpp"
#include "exqr/inference.hpp"
#include "exqr/subsampling.hpp"
#include "exqr/tail_estimation.hpp"

namespace exqr {

enum class Method { sn_subsample, sn_analytic, cn_subsample, cn_analytic, normal };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::sn_subsample: return "SN-subsample";
    case Method::sn_analytic: return "SN-analytic";
    case Method::cn_subsample: return "CN-subsample";
    case Method::cn_analytic: return "CN-analytic";
    case Method::normal: return "normal";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  for (Method m : {Method::sn_subsample, Method::sn_analytic, Method::cn_subsample,
                   Method::cn_analytic, Method::normal}) {
    std::string name = method_name(m);
    std::string lower;
    for (char c : name) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (s == name || s == lower) return m;
  }
  throw UsageError("unknown method '" + s +
                   "' (expected SN-subsample, SN-analytic, CN-subsample, CN-analytic or normal)");
}

struct PipelineOptions {
  int p = 5;
  /// Intermediate index for tail estimation; default_intermediate_tau() if unset.
  std::optional<double> tail_tau;
  // analytic critical values
  int B = 1000;
  Index M = 500;
  // subsampling
  std::optional<Index> b;  // default_subsample_size() if unset
  Index B_T = 200;
  SubsampleMode mode = SubsampleMode::iid;
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

inline double resolve_tail_tau(const Dataset& data, const PipelineOptions& opt) {
  return opt.tail_tau ? *opt.tail_tau : default_intermediate_tau(data.size(), data.dim());
}

inline Index resolve_b(const Dataset& data, const PipelineOptions& opt) {
  return opt.b ? *opt.b : default_subsample_size(data.size(), data.dim());
}

struct AnalyticCriticalValues {
  CriticalValues cv;
  TailEstimates tail;
  int rejected = 0;
};

/// Critical values from the simulated limit law at order k = tau T (k = 1
/// for the end-point statistic), using xi and gamma estimated at the
/// intermediate index.
inline AnalyticCriticalValues analytic_critical_values(const Dataset& data, double tau,
                                                       const Vector& psi, Statistic stat,
                                                       const std::vector<double>& alphas,
                                                       const PipelineOptions& opt = {}) {
  const Index T = data.size();
  const double tail_tau = resolve_tail_tau(data, opt);
  TailOptions topt;
  topt.scale_n = static_cast<double>(T);
  AnalyticCriticalValues out;
  out.tail = estimate_tail(data, tail_tau, topt);
  const double tau_eff = stat == Statistic::boundary ? 1.0 / static_cast<double>(T) : tau;
  const double k = tau_eff * static_cast<double>(T);
  const double m = spacing_m(tau_eff, T, data.dim(), opt.p);
  const SmoothedDesignSampler sampler(data.X);
  LimitLawOptions lopt;
  lopt.B = opt.B;
  lopt.M = opt.M;
  lopt.seed = opt.seed;
  lopt.threads = opt.threads;
  const LimitLawSample sim = simulate_limit_sample(k, m, out.tail.xi, out.tail.gamma,
                                                   data.column_means(), psi, sampler, lopt);
  const std::vector<double>& draws = stat == Statistic::sn   ? sim.sn_draws
                                     : stat == Statistic::cn ? sim.cn_draws
                                                             : sim.boundary_draws;
  std::map<std::string, double> prov{{"k", k},
                                     {"xi", out.tail.xi},
                                     {"tail_tau", tail_tau},
                                     {"B", static_cast<double>(sim.B)},
                                     {"M", static_cast<double>(sim.M)},
                                     {"rejected", static_cast<double>(sim.rejected)}};
  if (stat != Statistic::cn) prov["m"] = m;
  out.rejected = sim.rejected;
  out.cv = make_critical_values(stat, CvMethod::analytic, draws, alphas, std::move(prov));
  return out;
}

namespace pipeline_detail {

inline Dataset negated(const Dataset& data) {
  Dataset out = data;
  out.y = -data.y;
  return out;
}

inline InferenceResult unflip(InferenceResult r, double tau) {
  r.tau = tau;
  r.point = -r.point;
  r.median_unbiased = -r.median_unbiased;
  const double lo = -r.ci_hi, hi = -r.ci_lo;
  r.ci_lo = lo;
  r.ci_hi = hi;
  r.scale_used = -r.scale_used;
  r.warnings.push_back("upper-tail index handled as the lower tail of -y at 1 - tau");
  return r;
}

}  // namespace pipeline_detail

struct PipelineResult {
  InferenceResult result;
  std::optional<CriticalValues> critical_values;
  std::optional<TailEstimates> tail;
};

/// Interval for psi'beta(tau) by the chosen method.
inline PipelineResult infer(const Dataset& data, double tau, const Vector& psi, double alpha,
                            Method method, const PipelineOptions& opt = {}) {
  if (!(tau > 0.0 && tau < 1.0)) throw DomainError("quantile index must lie in (0,1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("significance level must lie in (0,1)");
  if (tau > 0.5 && method != Method::normal) {
    PipelineResult r = infer(pipeline_detail::negated(data), 1.0 - tau, psi, alpha, method, opt);
    r.result = pipeline_detail::unflip(std::move(r.result), tau);
    return r;
  }
  PipelineResult out;
  const std::vector<double> alphas{alpha};
  switch (method) {
    case Method::normal:
      out.result = normal_ci(data, tau, psi, alpha);
      return out;
    case Method::sn_analytic: {
      auto a = analytic_critical_values(data, tau, psi, Statistic::sn, alphas, opt);
      out.result = infer_sn(data, tau, psi, alpha, a.cv, opt.p);
      out.critical_values = std::move(a.cv);
      out.tail = std::move(a.tail);
      return out;
    }
    case Method::cn_analytic: {
      auto a = analytic_critical_values(data, tau, psi, Statistic::cn, alphas, opt);
      out.result = infer_cn(data, tau, psi, alpha, *a.tail.A_hat, a.cv);
      out.critical_values = std::move(a.cv);
      out.tail = std::move(a.tail);
      return out;
    }
    case Method::sn_subsample: {
      SubsampleOptions sopt;
      sopt.mode = opt.mode;
      sopt.seed = opt.seed;
      sopt.threads = opt.threads;
      const auto sd = sn_subsample_draws(data, tau, resolve_b(data, opt), opt.B_T, psi, opt.p, sopt);
      auto cv = subsample_critical_values(Statistic::sn, sd, alphas);
      out.result = infer_sn(data, tau, psi, alpha, cv, opt.p);
      out.critical_values = std::move(cv);
      return out;
    }
    case Method::cn_subsample: {
      TailOptions topt;
      topt.scale_n = static_cast<double>(data.size());
      auto tail = estimate_tail(data, resolve_tail_tau(data, opt), topt);
      SubsampleOptions sopt;
      sopt.mode = opt.mode;
      sopt.seed = opt.seed;
      sopt.threads = opt.threads;
      const auto sd = cn_subsample_draws(data, tau, resolve_b(data, opt), opt.B_T, psi, tail, sopt);
      auto cv = subsample_critical_values(Statistic::cn, sd, alphas);
      out.result = infer_cn(data, tau, psi, alpha, *tail.A_hat, cv);
      out.critical_values = std::move(cv);
      out.tail = std::move(tail);
      return out;
    }
  }
  throw UsageError("unhandled method");
}

/// Interval for the lower end-point psi'beta_e, with analytic or subsample
/// critical values.
inline PipelineResult infer_endpoint(const Dataset& data, const Vector& psi, double alpha,
                                     CvMethod cv_method, const PipelineOptions& opt = {}) {
  PipelineResult out;
  const std::vector<double> alphas{alpha};
  std::optional<double> xi_hat;
  if (cv_method == CvMethod::analytic) {
    auto a = analytic_critical_values(data, 0.0, psi, Statistic::boundary, alphas, opt);
    xi_hat = a.tail.xi;
    out.critical_values = std::move(a.cv);
    out.tail = std::move(a.tail);
  } else {
    SubsampleOptions sopt;
    sopt.mode = opt.mode;
    sopt.seed = opt.seed;
    sopt.threads = opt.threads;
    const auto sd = boundary_subsample_draws(data, resolve_b(data, opt), opt.B_T, psi, opt.p, sopt);
    out.critical_values = subsample_critical_values(Statistic::boundary, sd, alphas);
    if (opt.tail_tau || data.size() > 4 * (data.dim() + 20)) {
      try {
        out.tail = estimate_tail(data, resolve_tail_tau(data, opt));
        xi_hat = out.tail->xi;
      } catch (const Error&) {
      }
    }
  }
  out.result = infer_boundary(data, psi, alpha, *out.critical_values, opt.p, xi_hat);
  return out;
}

}  // namespace exqr
