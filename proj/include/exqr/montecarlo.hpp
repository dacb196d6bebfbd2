#pragma once

// Simulation harness: location-shift designs with known conditional
// quantiles, the finite-sample vs EV vs normal quantile comparison, and
// confidence-interval coverage studies.

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include "exqr/dataset.hpp"
#include "exqr/error.hpp"
#include "exqr/ev_limit_sim.hpp"
#include "exqr/inference.hpp"
#include "exqr/pipeline.hpp"
#include "exqr/qr_solver.hpp"
#include "exqr/random.hpp"

namespace exqr {

enum class ErrorFamily { student_t, cauchy, pareto, uniform, weibull, zero };

/// Error distribution given by its quantile function. Lower tails:
/// t(nu) has EV index 1/nu, Pareto(xi) is -V^xi-type for xi > 0 and has a
/// finite end-point at 0 for xi < 0, Weibull(a) is W - E[W] so the lower
/// end-point is finite with index -1/a.
class ErrorLaw {
 public:
  static ErrorLaw student_t(double nu) {
    if (!(nu > 0.0)) throw DomainError("t degrees of freedom must be positive");
    return {ErrorFamily::student_t, nu};
  }
  static ErrorLaw cauchy() { return {ErrorFamily::cauchy, 1.0}; }
  static ErrorLaw pareto(double xi) {
    if (!(xi != 0.0 && std::isfinite(xi))) throw DomainError("Pareto index must be finite and nonzero");
    return {ErrorFamily::pareto, xi};
  }
  static ErrorLaw uniform() { return {ErrorFamily::uniform, -1.0}; }
  static ErrorLaw weibull(double shape) {
    if (!(shape > 0.0)) throw DomainError("Weibull shape must be positive");
    return {ErrorFamily::weibull, shape};
  }
  static ErrorLaw zero() { return {ErrorFamily::zero, 0.0}; }

  ErrorFamily family() const { return family_; }
  double parameter() const { return param_; }

  std::string name() const {
    auto num = [](double v) {
      std::string s = std::to_string(v);
      s.erase(s.find_last_not_of('0') + 1);
      if (!s.empty() && s.back() == '.') s.pop_back();
      return s;
    };
    switch (family_) {
      case ErrorFamily::student_t: return "t(" + num(param_) + ")";
      case ErrorFamily::cauchy: return "Cauchy";
      case ErrorFamily::pareto: return "Pareto(" + num(param_) + ")";
      case ErrorFamily::uniform: return "Uniform";
      case ErrorFamily::weibull: return "Weibull(" + num(param_) + ")";
      case ErrorFamily::zero: return "zero";
    }
    return "?";
  }

  /// Lower-tail EV index; none for the degenerate law.
  std::optional<double> ev_index() const {
    switch (family_) {
      case ErrorFamily::student_t: return 1.0 / param_;
      case ErrorFamily::cauchy: return 1.0;
      case ErrorFamily::pareto: return param_;
      case ErrorFamily::uniform: return -1.0;
      case ErrorFamily::weibull: return -1.0 / param_;
      case ErrorFamily::zero: return std::nullopt;
    }
    return std::nullopt;
  }

  std::optional<double> lower_endpoint() const {
    switch (family_) {
      case ErrorFamily::pareto: return param_ < 0.0 ? std::optional<double>(0.0) : std::nullopt;
      case ErrorFamily::uniform: return 0.0;
      case ErrorFamily::weibull: return -weibull_mean();
      case ErrorFamily::zero: return 0.0;
      default: return std::nullopt;
    }
  }

  double quantile(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw DomainError("quantile level must lie in (0,1)");
    switch (family_) {
      case ErrorFamily::student_t:
        return boost::math::quantile(boost::math::students_t_distribution<double>(param_), u);
      case ErrorFamily::cauchy: return std::tan(std::numbers::pi * (u - 0.5));
      case ErrorFamily::pareto: return param_ > 0.0 ? -std::pow(u, -param_) : std::pow(u, -param_);
      case ErrorFamily::uniform: return u;
      case ErrorFamily::weibull: return std::pow(-std::log1p(-u), 1.0 / param_) - weibull_mean();
      case ErrorFamily::zero: return 0.0;
    }
    return 0.0;
  }

  /// Density at the u-quantile, f(Q(u)).
  double density_at_quantile(double u) const {
    if (!(u > 0.0 && u < 1.0)) throw DomainError("quantile level must lie in (0,1)");
    switch (family_) {
      case ErrorFamily::student_t: {
        const boost::math::students_t_distribution<double> t(param_);
        return boost::math::pdf(t, boost::math::quantile(t, u));
      }
      case ErrorFamily::cauchy: {
        const double q = quantile(u);
        return 1.0 / (std::numbers::pi * (1.0 + q * q));
      }
      case ErrorFamily::pareto: return std::pow(u, 1.0 + param_) / std::abs(param_);
      case ErrorFamily::uniform: return 1.0;
      case ErrorFamily::weibull: {
        const double e = -std::log1p(-u);
        return param_ * (1.0 - u) * std::pow(e, 1.0 - 1.0 / param_);
      }
      case ErrorFamily::zero: throw DomainError("the zero error law has no density");
    }
    return 0.0;
  }

  /// Canonical EV scale A_T: 1/Q(1/T) for xi > 0, 1/(Q(1/T) - end-point) for xi < 0.
  double canonical_scale(Index T) const {
    const auto xi = ev_index();
    if (!xi) throw DomainError("the zero error law has no canonical scale");
    const double q = quantile(1.0 / static_cast<double>(T));
    return *xi > 0.0 ? 1.0 / q : 1.0 / (q - *lower_endpoint());
  }

  template <class URBG>
  double draw(URBG& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double v = 0.0;
    while (v == 0.0) v = u(rng);
    return quantile(v);
  }

 private:
  ErrorLaw(ErrorFamily f, double p) : family_(f), param_(p) {}
  double weibull_mean() const { return std::tgamma(1.0 + 1.0 / param_); }

  ErrorFamily family_;
  double param_;
};

/// Parses "t(3)", "Cauchy", "Pareto(-0.5)", "Uniform", "Weibull(1)" or "zero".
inline ErrorLaw parse_error_law(const std::string& text) {
  static const std::regex pat(R"(^\s*([A-Za-z]+)\s*(?:\(\s*([-+0-9.eE]+)\s*\))?\s*$)");
  std::smatch m;
  if (!std::regex_match(text, m, pat)) throw UsageError("cannot parse error law '" + text + "'");
  std::string fam = m[1];
  for (auto& c : fam) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const bool has_arg = m[2].matched;
  auto arg = [&]() {
    if (!has_arg) throw UsageError("error law '" + text + "' needs a parameter");
    try {
      return std::stod(m[2]);
    } catch (const std::exception&) {
      throw UsageError("bad parameter in error law '" + text + "'");
    }
  };
  if (fam == "t") return ErrorLaw::student_t(arg());
  if (fam == "weibull") return ErrorLaw::weibull(arg());
  if (fam == "pareto") return ErrorLaw::pareto(arg());
  if (has_arg) throw UsageError("error law '" + fam + "' takes no parameter");
  if (fam == "cauchy") return ErrorLaw::cauchy();
  if (fam == "uniform") return ErrorLaw::uniform();
  if (fam == "zero") return ErrorLaw::zero();
  throw UsageError("unknown error family '" + text + "'", "unknown_family");
}

enum class RegressorSource { fixed_matrix, resample, constant_one };

inline const char* regressor_source_name(RegressorSource s) {
  switch (s) {
    case RegressorSource::fixed_matrix: return "fixed-matrix";
    case RegressorSource::resample: return "resample";
    case RegressorSource::constant_one: return "constant-one";
  }
  return "?";
}

inline RegressorSource parse_regressor_source(const std::string& s) {
  if (s == "fixed-matrix" || s == "fixed") return RegressorSource::fixed_matrix;
  if (s == "resample" || s == "resample-with-replacement") return RegressorSource::resample;
  if (s == "constant-one" || s == "constant") return RegressorSource::constant_one;
  throw UsageError("unknown regressor source '" + s + "'");
}

/// Location-shift model y = x'beta + U with U drawn from `error`.
struct Design {
  Index T = 500;
  Vector beta = Vector::Ones(1);
  ErrorLaw error = ErrorLaw::student_t(3.0);
  RegressorSource source = RegressorSource::constant_one;
  /// Fixed design (T rows) or resampling pool, intercept first.
  Matrix regressors;
  std::uint64_t seed = 0;

  Index dim() const { return beta.size(); }
  std::optional<double> ev_index() const { return error.ev_index(); }
};

inline void validate_design(const Design& d) {
  if (d.T < 2) throw DomainError("design needs T >= 2");
  if (d.beta.size() < 1) throw DomainError("design needs at least one coefficient");
  if (d.source == RegressorSource::constant_one) {
    if (d.dim() != 1) throw DomainError("constant-one regressors need a single coefficient");
    return;
  }
  if (d.regressors.cols() != d.dim()) {
    throw DataError("regressor matrix has " + std::to_string(d.regressors.cols()) +
                    " columns, beta has " + std::to_string(d.dim()));
  }
  if (d.source == RegressorSource::fixed_matrix && d.regressors.rows() != d.T) {
    throw DataError("fixed regressor matrix must have T rows");
  }
  if (d.regressors.rows() < 1) throw DataError("empty regressor pool");
  if ((d.regressors.col(0).array() != 1.0).any()) throw DataError("column 0 of the regressors must be 1");
}

/// Stand-in for a daily-returns design: (1, r1+, r1-, r2+, r2-, r3+, r3-)
/// built from three correlated heavy-tailed return series (percent units)
/// split into positive and negative parts. Deterministic in `seed`.
inline Matrix synthetic_return_design(Index rows = 1000, std::uint64_t seed = 19961998) {
  Rng rng = stream_rng(seed, 0);
  std::student_t_distribution<double> t4(4.0);
  const double unit = 1.0 / std::sqrt(2.0);  // t(4) has variance 2
  Matrix X(rows, 7);
  double prev_own = 0.0;
  for (Index t = 0; t < rows; ++t) {
    const double market = 1.0 * unit * t4(rng);
    const double oil = 0.5 * market + 1.8 * unit * t4(rng);
    const double own = 0.8 * market + 0.4 * oil + 1.5 * unit * t4(rng);
    const double r[3] = {oil, market, prev_own};
    X(t, 0) = 1.0;
    for (int j = 0; j < 3; ++j) {
      X(t, 1 + 2 * j) = std::max(r[j], 0.0);
      X(t, 2 + 2 * j) = -std::min(r[j], 0.0);
    }
    prev_own = own;
  }
  return X;
}

/// Resampled-regressor design with the synthetic returns pool truncated to d columns.
inline Design returns_design(const ErrorLaw& error, Index T = 500, Index d = 7, std::uint64_t seed = 0) {
  if (d < 1 || d > 7) throw DomainError("the returns design has 1 to 7 columns");
  Design out;
  out.T = T;
  out.beta = Vector::Ones(d);
  out.error = error;
  out.source = d == 1 ? RegressorSource::constant_one : RegressorSource::resample;
  if (d > 1) out.regressors = synthetic_return_design().leftCols(d);
  out.seed = seed;
  return out;
}

inline Dataset simulate_design(const Design& design, Rng& rng) {
  validate_design(design);
  const Index T = design.T, d = design.dim();
  Matrix X(T, d);
  switch (design.source) {
    case RegressorSource::constant_one: X.setOnes(); break;
    case RegressorSource::fixed_matrix: X = design.regressors; break;
    case RegressorSource::resample: {
      std::uniform_int_distribution<Index> pick(0, design.regressors.rows() - 1);
      for (Index t = 0; t < T; ++t) X.row(t) = design.regressors.row(pick(rng));
      break;
    }
  }
  Vector y = X * design.beta;
  for (Index t = 0; t < T; ++t) y(t) += design.error.draw(rng);
  return make_dataset(std::move(y), std::move(X));
}

/// beta(tau): the intercept shifted by the error tau-quantile.
inline Vector true_beta(const Design& design, double tau) {
  Vector b = design.beta;
  b(0) += design.error.quantile(tau);
  return b;
}

/// Intermediate index for simulated designs: (d+20)/T <= tau_T, T^(-1/3)
/// capped at 0.05 otherwise. Unlike default_intermediate_tau() this is
/// defined for the small T used in coverage studies.
inline double simulation_intermediate_tau(Index T, Index d) {
  const double Td = static_cast<double>(T);
  return std::max(static_cast<double>(d + 20) / Td, std::min(std::pow(Td, -1.0 / 3.0), 0.05));
}

// ---------------------------------------------------------------------------
// Quantile comparison

struct QqOptions {
  int ev_draws = 10000;
  Index M = 500;
  double step = 0.005;  // levels step, 1 - step, ... ; 0.005 spans the central 99%
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

struct QqRow {
  double tau = 0.0;
  int reps = 0;
  std::vector<double> levels;
  std::vector<double> true_q;    // finite-sample law of b(tau) - beta(tau)
  std::vector<double> ev_q;      // EV law (order k = tau T) in the same units
  std::vector<double> normal_q;  // asymptotic normal law
  double ev_discrepancy = 0.0;   // mean |ev_q - true_q|
  double normal_discrepancy = 0.0;
};

namespace mc_detail {

/// empirical_quantile() on data already sorted ascending.
inline double sorted_quantile(const std::vector<double>& sorted, double p) {
  const double n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(p * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

}  // namespace mc_detail

inline std::vector<double> quantile_levels(double step) {
  if (!(step > 0.0 && step < 0.5)) throw DomainError("level step must lie in (0, 0.5)");
  std::vector<double> out;
  const int n = static_cast<int>(std::floor((1.0 - step) / step + 1e-9));
  for (int i = 1; i <= n; ++i) out.push_back(i * step);
  return out;
}

/// Quantiles of the intercept estimation error under a constant-one design:
/// simulated exactly, from the EV law and from the normal law.
inline std::vector<QqRow> qq_experiment(const Design& design, const std::vector<double>& taus, int reps,
                                        const QqOptions& opt = {}) {
  validate_design(design);
  if (design.source != RegressorSource::constant_one) {
    throw DomainError("the quantile comparison needs the constant-one location design");
  }
  const auto xi = design.ev_index();
  if (!xi) throw DomainError("the quantile comparison needs a nondegenerate error law");
  if (reps < 100) throw DomainError("need at least 100 replications");
  const Index T = design.T;
  for (double tau : taus) {
    if (!(tau > 0.0 && tau < 0.5 && tau * static_cast<double>(T) >= 1.0)) {
      throw DomainError("each tau must satisfy 1/T <= tau < 1/2");
    }
  }
  const auto nt = taus.size();
  std::vector<std::vector<double>> err(nt, std::vector<double>(static_cast<std::size_t>(reps)));
  parallel_for(
      static_cast<std::size_t>(reps),
      [&](std::size_t r) {
        Rng rng = stream_rng(design.seed, r);
        const Dataset data = simulate_design(design, rng);
        for (std::size_t j = 0; j < nt; ++j) {
          err[j][r] = fit_qr(data, taus[j]).beta(0) - true_beta(design, taus[j])(0);
        }
      },
      opt.threads);

  const std::vector<double> levels = quantile_levels(opt.step);
  const double scale = design.error.canonical_scale(T);
  const SmoothedDesignSampler sampler(Matrix::Ones(1, 1));
  const Vector one = Vector::Ones(1);
  std::vector<QqRow> rows;
  for (std::size_t j = 0; j < nt; ++j) {
    const double tau = taus[j];
    const double k = tau * static_cast<double>(T);
    LimitLawOptions lopt;
    lopt.B = opt.ev_draws;
    lopt.M = opt.M;
    lopt.seed = derive_seed(opt.seed, j);
    lopt.threads = opt.threads;
    const double m = spacing_m(tau, T, 1, 5);
    const LimitLawSample ev = simulate_limit_sample(k, m, *xi, one, one, one, sampler, lopt);
    const double sd = std::sqrt(tau * (1.0 - tau) / static_cast<double>(T)) /
                      design.error.density_at_quantile(tau);
    QqRow row;
    row.tau = tau;
    row.reps = reps;
    row.levels = levels;
    std::vector<double> sorted_err = err[j], sorted_ev = ev.cn_draws;
    for (double& v : sorted_ev) v /= scale;  // scale < 0 when xi > 0: convert before sorting
    std::sort(sorted_err.begin(), sorted_err.end());
    std::sort(sorted_ev.begin(), sorted_ev.end());
    for (double p : levels) {
      const double tq = mc_detail::sorted_quantile(sorted_err, p);
      const double eq = mc_detail::sorted_quantile(sorted_ev, p);
      const double nq = sd * boost::math::quantile(boost::math::normal_distribution<double>(), p);
      row.true_q.push_back(tq);
      row.ev_q.push_back(eq);
      row.normal_q.push_back(nq);
      row.ev_discrepancy += std::abs(eq - tq);
      row.normal_discrepancy += std::abs(nq - tq);
    }
    row.ev_discrepancy /= static_cast<double>(levels.size());
    row.normal_discrepancy /= static_cast<double>(levels.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Coverage

struct CoverageCell {
  double tau = 0.0;
  Index coefficient = 0;
  std::string method;
  int reps = 0;      // requested replications
  int failed = 0;    // replications where the method raised an error
  int hits = 0;
  double coverage = 0.0;    // hits / (reps - failed)
  double mean_width = 0.0;  // over completed replications
};

struct CoverageReport {
  std::string error_law;
  std::optional<double> ev_index;
  Index T = 0;
  Index d = 0;
  double alpha = 0.10;
  std::uint64_t seed = 0;
  std::vector<CoverageCell> cells;

  const CoverageCell& cell(double tau, Index coefficient, const std::string& method) const {
    for (const auto& c : cells) {
      if (c.tau == tau && c.coefficient == coefficient && c.method == method) return c;
    }
    throw UsageError("no coverage cell for tau " + std::to_string(tau) + ", coefficient " +
                     std::to_string(coefficient) + ", method " + method);
  }
};

struct CoverageOptions {
  double alpha = 0.10;
  std::vector<Index> coefficients{0, 1};
  /// Method settings; tail_tau defaults to simulation_intermediate_tau().
  PipelineOptions pipeline;
  unsigned threads = 0;
};

/// Empirical coverage of level 1 - alpha intervals for each (tau, coefficient, method).
inline CoverageReport coverage_experiment(const Design& design, const std::vector<double>& taus, int reps,
                                          const std::vector<Method>& methods,
                                          const CoverageOptions& opt = {}) {
  validate_design(design);
  if (reps < 50) throw DomainError("need at least 50 replications");
  if (methods.empty() || taus.empty() || opt.coefficients.empty()) {
    throw DomainError("need at least one tau, coefficient and method");
  }
  for (Index j : opt.coefficients) {
    if (j < 0 || j >= design.dim()) throw DomainError("coefficient index out of range");
  }
  for (double tau : taus) true_beta(design, tau);  // checks the levels
  PipelineOptions popt = opt.pipeline;
  if (!popt.tail_tau) popt.tail_tau = simulation_intermediate_tau(design.T, design.dim());
  popt.threads = 1;

  struct Outcome {
    bool ok = false;
    bool hit = false;
    double width = 0.0;
  };
  const std::size_t nt = taus.size(), nc = opt.coefficients.size(), nm = methods.size();
  const std::size_t ncell = nt * nc * nm;
  std::vector<Outcome> outcomes(ncell * static_cast<std::size_t>(reps));
  parallel_for(
      static_cast<std::size_t>(reps),
      [&](std::size_t r) {
        Rng rng = stream_rng(design.seed, r);
        const Dataset data = simulate_design(design, rng);
        std::size_t cell = 0;
        for (std::size_t it = 0; it < nt; ++it) {
          const Vector truth = true_beta(design, taus[it]);
          for (std::size_t ic = 0; ic < nc; ++ic) {
            const Vector psi = Vector::Unit(design.dim(), opt.coefficients[ic]);
            for (std::size_t im = 0; im < nm; ++im, ++cell) {
              PipelineOptions local = popt;
              local.seed = derive_seed(design.seed, r * ncell + cell);
              Outcome& o = outcomes[r * ncell + cell];
              try {
                const auto res = infer(data, taus[it], psi, opt.alpha, methods[im], local).result;
                const double target = psi.dot(truth);
                o.ok = true;
                o.hit = res.ci_lo <= target && target <= res.ci_hi;
                o.width = res.ci_hi - res.ci_lo;
              } catch (const Error&) {
              }
            }
          }
        }
      },
      opt.threads);

  CoverageReport rep;
  rep.error_law = design.error.name();
  rep.ev_index = design.ev_index();
  rep.T = design.T;
  rep.d = design.dim();
  rep.alpha = opt.alpha;
  rep.seed = design.seed;
  std::size_t cell = 0;
  for (std::size_t it = 0; it < nt; ++it) {
    for (std::size_t ic = 0; ic < nc; ++ic) {
      for (std::size_t im = 0; im < nm; ++im, ++cell) {
        CoverageCell c;
        c.tau = taus[it];
        c.coefficient = opt.coefficients[ic];
        c.method = method_name(methods[im]);
        c.reps = reps;
        double width = 0.0;
        for (int r = 0; r < reps; ++r) {
          const Outcome& o = outcomes[static_cast<std::size_t>(r) * ncell + cell];
          if (!o.ok) {
            ++c.failed;
            continue;
          }
          c.hits += o.hit ? 1 : 0;
          width += o.width;
        }
        const int done = reps - c.failed;
        c.coverage = done > 0 ? static_cast<double>(c.hits) / done : 0.0;
        c.mean_width = done > 0 ? width / done : 0.0;
        rep.cells.push_back(c);
      }
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Presets

struct McPreset {
  std::string name;
  int reps = 100;
  Index T = 300;
  Index d = 3;
  std::vector<double> taus;
};

inline McPreset coverage_preset(const std::string& name) {
  if (name == "quick") return {"quick", 100, 300, 3, {0.05}};
  if (name == "paper") return {"paper", 1000, 500, 7, {0.01, 0.05, 0.10, 0.25, 0.50}};
  throw UsageError("unknown coverage preset '" + name + "' (quick, paper)");
}

inline McPreset qq_preset(const std::string& name) {
  if (name == "quick") return {"quick", 500, 200, 1, {0.025, 0.1, 0.2, 0.3}};
  if (name == "desk") return {"desk", 2000, 200, 1, {0.025, 0.1, 0.2, 0.3}};
  if (name == "figure1") return {"figure1", 10000, 200, 1, {0.025, 0.1, 0.2, 0.3}};
  throw UsageError("unknown quantile-comparison preset '" + name + "' (quick, desk, figure1)");
}

}  // namespace exqr
