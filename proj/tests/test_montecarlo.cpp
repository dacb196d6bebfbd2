#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "exqr/montecarlo.hpp"

using namespace exqr;
using Catch::Approx;

TEST_CASE("error laws: quantiles agree with large simulated samples", "[mc][laws]") {
  const std::vector<ErrorLaw> laws{ErrorLaw::student_t(3), ErrorLaw::cauchy(), ErrorLaw::pareto(0.5),
                                   ErrorLaw::pareto(-0.5), ErrorLaw::uniform(), ErrorLaw::weibull(1),
                                   ErrorLaw::weibull(3)};
  const int n = 1000000;
  for (std::size_t i = 0; i < laws.size(); ++i) {
    const ErrorLaw& law = laws[i];
    Rng rng = stream_rng(99, i);
    std::vector<double> draws(n);
    // independent generators, so the check is not circular through quantile()
    switch (law.family()) {
      case ErrorFamily::student_t: {
        std::student_t_distribution<double> t(law.parameter());
        for (auto& v : draws) v = t(rng);
        break;
      }
      case ErrorFamily::cauchy: {
        std::cauchy_distribution<double> c(0.0, 1.0);
        for (auto& v : draws) v = c(rng);
        break;
      }
      case ErrorFamily::pareto: {
        std::exponential_distribution<double> e(1.0);
        const double xi = law.parameter();
        // U = exp(-E) is uniform; Pareto(xi) lower tail is -U^-xi or U^-xi
        for (auto& v : draws) v = (xi > 0 ? -1.0 : 1.0) * std::exp(xi * e(rng));
        break;
      }
      case ErrorFamily::uniform: {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (auto& v : draws) v = u(rng);
        break;
      }
      case ErrorFamily::weibull: {
        std::weibull_distribution<double> w(law.parameter(), 1.0);
        const double mean = std::tgamma(1.0 + 1.0 / law.parameter());
        for (auto& v : draws) v = w(rng) - mean;
        break;
      }
      case ErrorFamily::zero: break;
    }
    std::sort(draws.begin(), draws.end());
    for (double tau : {0.01, 0.05, 0.25, 0.5}) {
      const double emp = draws[static_cast<std::size_t>(std::ceil(tau * n)) - 1];
      const double se = std::sqrt(tau * (1 - tau) / n) / law.density_at_quantile(tau);
      INFO(law.name() << " tau " << tau << " empirical " << emp << " exact " << law.quantile(tau));
      CHECK(std::abs(emp - law.quantile(tau)) <= 3.0 * se);
    }
  }
}

TEST_CASE("error laws: density is the reciprocal quantile derivative", "[mc][laws]") {
  for (const auto& law : {ErrorLaw::student_t(3), ErrorLaw::cauchy(), ErrorLaw::pareto(1.0),
                          ErrorLaw::pareto(-1.0 / 3.0), ErrorLaw::weibull(0.5), ErrorLaw::weibull(30)}) {
    for (double u : {0.01, 0.1, 0.4, 0.7}) {
      const double h = 1e-6 * u;
      const double dq = (law.quantile(u + h) - law.quantile(u - h)) / (2 * h);
      CHECK(law.density_at_quantile(u) == Approx(1.0 / dq).epsilon(1e-5));
    }
  }
}

TEST_CASE("error laws: indexes, end-points and canonical scales", "[mc][laws]") {
  CHECK(*ErrorLaw::student_t(30).ev_index() == Approx(1.0 / 30));
  CHECK(*ErrorLaw::student_t(1).ev_index() == 1.0);
  CHECK(*ErrorLaw::weibull(1).ev_index() == -1.0);
  CHECK(*ErrorLaw::weibull(3).ev_index() == Approx(-1.0 / 3));
  CHECK(*ErrorLaw::uniform().ev_index() == -1.0);
  CHECK_FALSE(ErrorLaw::zero().ev_index());
  CHECK(*ErrorLaw::weibull(2).lower_endpoint() == Approx(-std::tgamma(1.5)));
  CHECK_FALSE(ErrorLaw::cauchy().lower_endpoint());
  // lower end-point of Weibull(a) - E[W] is finite: quantiles approach it
  CHECK(ErrorLaw::weibull(1).quantile(1e-9) == Approx(-1.0).margin(1e-8));
  CHECK(ErrorLaw::uniform().canonical_scale(500) == Approx(500.0));
  CHECK(ErrorLaw::pareto(0.5).canonical_scale(400) == Approx(-1.0 / 20.0));
  CHECK(ErrorLaw::weibull(1).canonical_scale(1000) == Approx(1.0 / -std::log1p(-1e-3)));
  CHECK(ErrorLaw::cauchy().canonical_scale(200) == Approx(1.0 / std::tan(std::numbers::pi * (0.005 - 0.5))));
  CHECK_THROWS_AS(ErrorLaw::zero().canonical_scale(10), DomainError);
  CHECK_THROWS_AS(ErrorLaw::pareto(0.0), DomainError);
  CHECK_THROWS_AS(ErrorLaw::uniform().quantile(0.0), DomainError);
}

TEST_CASE("error law parsing", "[mc][laws]") {
  CHECK(parse_error_law("t(3)").name() == "t(3)");
  CHECK(parse_error_law("T( 30 )").parameter() == 30.0);
  CHECK(parse_error_law("Weibull(1)").family() == ErrorFamily::weibull);
  CHECK(parse_error_law("pareto(-0.5)").parameter() == -0.5);
  CHECK(parse_error_law("Cauchy").family() == ErrorFamily::cauchy);
  CHECK(parse_error_law("uniform").family() == ErrorFamily::uniform);
  CHECK(parse_error_law("zero").family() == ErrorFamily::zero);
  CHECK_THROWS_AS(parse_error_law("gumbel"), UsageError);
  CHECK_THROWS_AS(parse_error_law("t"), UsageError);
  CHECK_THROWS_AS(parse_error_law("cauchy(2)"), UsageError);
  CHECK_THROWS_AS(parse_error_law("t(x)"), UsageError);
  CHECK_THROWS_AS(parse_error_law("t(-1)"), DomainError);
}

TEST_CASE("design simulation", "[mc][design]") {
  SECTION("constant-one Cauchy location design") {
    Design d;
    d.T = 200;
    d.error = ErrorLaw::cauchy();
    d.beta = Vector::Constant(1, 1.0);
    Rng rng(1);
    const Dataset data = simulate_design(d, rng);
    CHECK(data.size() == 200);
    CHECK(data.dim() == 1);
    CHECK((data.X.array() == 1.0).all());
    CHECK(*d.ev_index() == 1.0);
  }
  SECTION("zero noise gives an exact fit") {
    Design d = returns_design(ErrorLaw::zero(), 300, 4);
    Rng rng(2);
    const Dataset data = simulate_design(d, rng);
    CHECK((data.y - data.X * d.beta).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("resampled rows come from the pool and are reproducible") {
    Design d = returns_design(ErrorLaw::student_t(3), 500, 7);
    Rng a(5), b(5);
    const Dataset x = simulate_design(d, a);
    const Dataset y = simulate_design(d, b);
    CHECK(x.y == y.y);
    for (Index t = 0; t < x.size(); ++t) {
      bool found = false;
      for (Index r = 0; r < d.regressors.rows() && !found; ++r) found = x.X.row(t) == d.regressors.row(r);
      REQUIRE(found);
    }
  }
  SECTION("fixed matrix is used as given") {
    Design d;
    d.T = 4;
    d.beta = Vector::Ones(2);
    d.source = RegressorSource::fixed_matrix;
    d.regressors.resize(4, 2);
    d.regressors << 1, 0, 1, 1, 1, 2, 1, 3;
    d.error = ErrorLaw::zero();
    Rng rng(3);
    CHECK(simulate_design(d, rng).X == d.regressors);
    d.regressors(2, 0) = 0.5;
    CHECK_THROWS_AS(simulate_design(d, rng), DataError);
  }
  SECTION("true conditional quantiles shift only the intercept") {
    Design d = returns_design(ErrorLaw::weibull(1), 500, 7);
    const Vector b = true_beta(d, 0.05);
    CHECK(b(0) == Approx(1.0 + (-std::log(0.95) - 1.0)));
    CHECK(b.tail(6) == Vector::Ones(6));
  }
}

TEST_CASE("synthetic returns design", "[mc][design]") {
  const Matrix a = synthetic_return_design();
  const Matrix b = synthetic_return_design();
  CHECK(a == b);
  REQUIRE(a.rows() == 1000);
  REQUIRE(a.cols() == 7);
  CHECK((a.col(0).array() == 1.0).all());
  CHECK((a.rightCols(6).array() >= 0.0).all());
  for (int j = 0; j < 3; ++j) {
    CHECK((a.col(1 + 2 * j).array() * a.col(2 + 2 * j).array() == 0.0).all());
    // both signs occur in reasonable proportion
    const double share = (a.col(1 + 2 * j).array() > 0.0).cast<double>().mean();
    CHECK(share > 0.35);
    CHECK(share < 0.65);
  }
  CHECK(design_rank(a) == 7);
  CHECK(synthetic_return_design(1000, 1) != a);
}

TEST_CASE("simulation intermediate index", "[mc]") {
  CHECK(simulation_intermediate_tau(500, 7) == Approx(27.0 / 500));
  CHECK(simulation_intermediate_tau(200, 1) == Approx(0.105));
  CHECK(simulation_intermediate_tau(100000, 1) == Approx(std::pow(1e5, -1.0 / 3.0)));
  CHECK(simulation_intermediate_tau(1000, 2) == Approx(0.05));
}

TEST_CASE("quantile comparison: EV law beats normal deep in a bounded tail", "[mc][qq]") {
  Design d;
  d.T = 200;
  d.error = ErrorLaw::uniform();
  d.seed = 4;
  QqOptions opt;
  opt.ev_draws = 4000;
  opt.seed = 9;
  const auto rows = qq_experiment(d, {0.025}, 1000, opt);
  REQUIRE(rows.size() == 1);
  const auto& r = rows[0];
  CHECK(r.levels.size() == 199);
  CHECK(r.levels.front() == Approx(0.005));
  CHECK(r.levels.back() == Approx(0.995));
  CHECK(std::is_sorted(r.true_q.begin(), r.true_q.end()));
  CHECK(std::is_sorted(r.ev_q.begin(), r.ev_q.end()));
  CHECK(std::is_sorted(r.normal_q.begin(), r.normal_q.end()));
  CHECK(r.ev_discrepancy < r.normal_discrepancy);
  // sample minimum-type law: the true spread is in units of 1/T
  CHECK(r.ev_discrepancy < 0.1 / 200 * 5);
}

TEST_CASE("quantile comparison: reproducible and validated", "[mc][qq]") {
  Design d;
  d.T = 200;
  d.error = ErrorLaw::cauchy();
  d.seed = 11;
  QqOptions opt;
  opt.ev_draws = 500;
  opt.seed = 3;
  opt.threads = 1;
  const auto a = qq_experiment(d, {0.05, 0.2}, 200, opt);
  opt.threads = 3;
  const auto b = qq_experiment(d, {0.05, 0.2}, 200, opt);
  CHECK(a[0].true_q == b[0].true_q);
  CHECK(a[1].ev_q == b[1].ev_q);
  CHECK(a[1].ev_discrepancy == b[1].ev_discrepancy);
  // xi > 0 has a negative canonical scale; quantiles must still ascend
  CHECK(std::is_sorted(a[0].ev_q.begin(), a[0].ev_q.end()));
  CHECK(std::is_sorted(a[1].ev_q.begin(), a[1].ev_q.end()));
  Design reg = returns_design(ErrorLaw::cauchy(), 200, 3);
  CHECK_THROWS_AS(qq_experiment(reg, {0.05}, 200, opt), DomainError);
  Design z = d;
  z.error = ErrorLaw::zero();
  CHECK_THROWS_AS(qq_experiment(z, {0.05}, 200, opt), DomainError);
  CHECK_THROWS_AS(qq_experiment(d, {0.001}, 200, opt), DomainError);
}

TEST_CASE("coverage report bookkeeping", "[mc][coverage]") {
  Design d = returns_design(ErrorLaw::student_t(3), 200, 2, 21);
  CoverageOptions opt;
  opt.pipeline.B_T = 100;
  opt.coefficients = {0, 1};
  const std::vector<Method> methods{Method::normal, Method::sn_subsample};
  opt.threads = 1;
  const auto a = coverage_experiment(d, {0.05, 0.1}, 50, methods, opt);
  opt.threads = 2;
  const auto b = coverage_experiment(d, {0.05, 0.1}, 50, methods, opt);
  REQUIRE(a.cells.size() == 8);
  for (std::size_t i = 0; i < a.cells.size(); ++i) {
    const auto& c = a.cells[i];
    CHECK(c.reps == 50);
    CHECK(c.failed == 0);
    CHECK(c.hits <= c.reps);
    CHECK(c.coverage >= 0.0);
    CHECK(c.coverage <= 1.0);
    CHECK(c.mean_width > 0.0);
    CHECK(c.hits == b.cells[i].hits);
    CHECK(c.mean_width == b.cells[i].mean_width);
  }
  CHECK(a.cell(0.1, 1, "normal").method == "normal");
  CHECK_THROWS_AS(a.cell(0.3, 1, "normal"), UsageError);
  CHECK(a.error_law == "t(3)");
  CHECK(*a.ev_index == Approx(1.0 / 3));
  CHECK_THROWS_AS(coverage_experiment(d, {0.1}, 49, methods, opt), DomainError);
  opt.coefficients = {2};
  CHECK_THROWS_AS(coverage_experiment(d, {0.1}, 50, methods, opt), DomainError);
}

TEST_CASE("nominal coverage at the median with near-Gaussian errors", "[mc][coverage][slow]") {
  Design d = returns_design(ErrorLaw::student_t(30), 500, 2, 8);
  CoverageOptions opt;
  opt.coefficients = {0, 1};
  const auto rep = coverage_experiment(d, {0.5}, 500, {Method::normal}, opt);
  for (const auto& c : rep.cells) {
    INFO(c.method << " coefficient " << c.coefficient << " coverage " << c.coverage);
    CHECK(c.failed == 0);
    CHECK(c.coverage >= 0.85);
    CHECK(c.coverage <= 0.95);
  }
}

TEST_CASE("central SN subsampling needs b > T d / (d + p)", "[mc][coverage]") {
  Design d = returns_design(ErrorLaw::student_t(30), 500, 2, 8);
  Rng rng(1);
  const Dataset data = simulate_design(d, rng);
  PipelineOptions opt;
  opt.b = 100;
  CHECK_THROWS_AS(infer(data, 0.5, Vector::Unit(2, 1), 0.1, Method::sn_subsample, opt), DomainError);
  opt.b = 150;
  CHECK_NOTHROW(infer(data, 0.5, Vector::Unit(2, 1), 0.1, Method::sn_subsample, opt));
}
