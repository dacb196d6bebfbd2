#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "exqr/qr_solver.hpp"
#include "test_support.hpp"

using namespace exqr;
using Catch::Approx;

namespace {

Dataset location(std::initializer_list<double> values) {
  Vector y(static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) y(i++) = v;
  return make_dataset(y, intercept_design(y.size()));
}

}  // namespace

TEST_CASE("check_loss follows the asymmetric absolute deviation", "[qr][check_loss]") {
  CHECK(check_loss(1.0, 0.3) == Approx(0.3));
  CHECK(check_loss(-1.0, 0.3) == Approx(0.7));
  CHECK(check_loss(0.0, 0.9) == 0.0);
  CHECK(check_loss(-2.5, 0.1) > 0.0);
  CHECK_THROWS_AS(check_loss(1.0, 0.0), DomainError);
  CHECK_THROWS_AS(check_loss(1.0, 1.0), DomainError);
  CHECK_THROWS_AS(check_loss(1.0, -0.2), DomainError);
}

TEST_CASE("fit_qr on small closed-form instances", "[qr][fit]") {
  SECTION("median of three points") {
    auto fit = fit_qr(location({1.0, 2.0, 3.0}), 0.5);
    REQUIRE(fit.beta.size() == 1);
    CHECK(fit.beta(0) == Approx(2.0));
    CHECK(fit.objective == Approx(1.0));
    CHECK(fit.basis == std::vector<Index>{1});
  }
  SECTION("exact fit recovers the generating coefficients") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> z;
    const Index T = 15, d = 3;
    Matrix X(T, d);
    Vector b0(d);
    b0 << 0.5, -2.0, 3.25;
    for (Index t = 0; t < T; ++t) X.row(t) << 1.0, z(rng), z(rng);
    Dataset data = make_dataset(X * b0, X);
    for (double tau : {0.1, 0.5, 0.9}) {
      auto fit = fit_qr(data, tau);
      CHECK((fit.beta - b0).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(fit.objective < 1e-10);
    }
  }
  SECTION("flat optimal edge resolves to the lower vertex and is flagged") {
    auto fit = fit_qr(location({4.0, 1.0, 3.0, 2.0}), 0.5);
    CHECK(fit.beta(0) == Approx(2.0));
    CHECK(fit.nonunique);
    auto unique = fit_qr(location({4.0, 1.0, 3.0, 2.0, 5.0}), 0.5);
    CHECK(unique.beta(0) == Approx(3.0));
    CHECK_FALSE(unique.nonunique);
  }
  SECTION("location fit returns the ceil(tau T)-th order statistic") {
    std::mt19937_64 rng(11);
    std::cauchy_distribution<double> c;
    Vector y(200);
    for (Index t = 0; t < 200; ++t) y(t) = c(rng);
    Dataset data = make_dataset(y, intercept_design(200));
    std::vector<double> sorted(y.data(), y.data() + 200);
    std::sort(sorted.begin(), sorted.end());
    for (double tau : {0.005, 0.025, 0.1, 0.2, 0.3, 0.5, 0.777}) {
      const auto order = static_cast<std::size_t>(std::ceil(tau * 200 - 1e-9));
      CHECK(fit_qr(data, tau).beta(0) == sorted[order - 1]);
    }
  }
  SECTION("random instance matches the enumeration oracle") {
    std::mt19937_64 rng(2024);
    Dataset data = testing::random_instance(rng, 20, 2);
    auto fit = fit_qr(data, 0.2);
    auto oracle = brute_force_qr(data, 0.2);
    CHECK(std::abs(fit.objective - oracle.objective) <= 1e-8);
  }
}

TEST_CASE("fit_qr error paths", "[qr][errors]") {
  Dataset data = location({1.0, 2.0, 3.0});
  CHECK_THROWS_AS(fit_qr(data, 0.0), DomainError);
  CHECK_THROWS_AS(fit_qr(data, 1.0), DomainError);
  // tau T = 0.3 is below the sample extreme
  CHECK_THROWS_AS(fit_qr(data, 0.1), DomainError);
  CHECK_NOTHROW(fit_qr(data, 1.0 / 3.0));

  // A subsample in which an indicator column is constant zero is singular.
  Dataset bad;
  bad.y = Vector::LinSpaced(6, 0.0, 5.0);
  bad.X = Matrix::Ones(6, 2);
  bad.X.col(1).setZero();
  CHECK_THROWS_AS(fit_qr(bad, 0.5), SolverError);
}

TEST_CASE("brute_force_qr enumeration oracle", "[qr][oracle]") {
  SECTION("two-point tie keeps the first subset") {
    auto fit = brute_force_qr(location({0.0, 1.0}), 0.5);
    CHECK(fit.beta(0) == 0.0);
    CHECK(fit.objective == Approx(0.5));
    CHECK(fit.basis == std::vector<Index>{0});
  }
  SECTION("median") { CHECK(brute_force_qr(location({1.0, 2.0, 3.0}), 0.5).beta(0) == 2.0); }
  SECTION("exact fit") {
    Matrix X(5, 2);
    X << 1, 0, 1, 1, 1, 2, 1, 3, 1, 4;
    Vector y = X * Vector::Constant(2, 1.5);
    CHECK(brute_force_qr(make_dataset(y, X), 0.3).objective < 1e-12);
  }
  SECTION("size guard") {
    std::mt19937_64 rng(1);
    CHECK_THROWS_AS(brute_force_qr(testing::random_instance(rng, 31, 2), 0.5), UsageError);
    CHECK_THROWS_AS(brute_force_qr(testing::random_instance(rng, 20, 5), 0.5), UsageError);
  }
}

TEST_CASE("fit_qr invariants on random instances", "[qr][property]") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> Tdist(8, 25);
  std::uniform_int_distribution<int> ddist(1, 3);
  std::uniform_int_distribution<int> tdist(1, 9);
  std::normal_distribution<double> z;

  for (int rep = 0; rep < 120; ++rep) {
    const Index T = Tdist(rng);
    const Index d = ddist(rng);
    const double tau = 0.1 * tdist(rng);
    Dataset data = testing::random_instance(rng, T, d);
    if (tau * T < 1.0) continue;
    const auto fit = fit_qr(data, tau);
    const double scale = data.response_scale();

    // oracle equivalence
    CHECK(std::abs(fit.objective - brute_force_qr(data, tau).objective) <= 1e-8);

    // objective and basis invariants
    CHECK(fit.objective == Approx(check_objective(data, fit.beta, tau)).epsilon(1e-12));
    REQUIRE(static_cast<Index>(fit.basis.size()) == d);
    const Vector r = data.y - data.X * fit.beta;
    for (Index h : fit.basis) CHECK(std::abs(r(h)) <= 1e-9 * scale);

    // subgradient bracketing
    int negative = 0, nonpositive = 0;
    for (Index t = 0; t < T; ++t) {
      if (r(t) < -1e-9 * scale) ++negative;
      if (r(t) <= 1e-9 * scale) ++nonpositive;
    }
    CHECK(negative <= std::ceil(tau * T));
    CHECK(nonpositive >= tau * T - d);

    // shift equivariance
    Vector b(d);
    for (Index j = 0; j < d; ++j) b(j) = z(rng);
    Dataset shifted = data;
    shifted.y += data.X * b;
    const auto fs = fit_qr(shifted, tau);
    CHECK((fs.beta - (fit.beta + b)).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + b.norm()));

    // scale equivariance
    const double c = 0.5 + 3.0 * std::abs(z(rng));
    Dataset scaled = data;
    scaled.y *= c;
    const auto fc = fit_qr(scaled, tau);
    CHECK((fc.beta - c * fit.beta).cwiseAbs().maxCoeff() <= 1e-9 * c * scale);
    CHECK(fc.objective == Approx(c * fit.objective).epsilon(1e-10));

    // local optimality probe
    for (Index j = 0; j < d; ++j) {
      for (double step : {1e-3 * scale, -1e-3 * scale}) {
        Vector probe = fit.beta;
        probe(j) += step;
        CHECK(fit.objective <= check_objective(data, probe, tau) + 1e-12 * scale);
      }
    }
  }
}

TEST_CASE("fit_qr handles larger designs with indicator columns", "[qr][scale]") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::student_t_distribution<double> noise(3.0);
  const Index T = 500, d = 7;
  Matrix X(T, d);
  Vector y(T);
  for (Index t = 0; t < T; ++t) {
    X(t, 0) = 1.0;
    for (Index j = 1; j < 5; ++j) X(t, j) = u(rng);
    X(t, 5) = u(rng) < 0.3 ? 1.0 : 0.0;
    X(t, 6) = u(rng) < 0.5 ? 1.0 : 0.0;
    y(t) = X.row(t).sum() + noise(rng);
  }
  Dataset data = make_dataset(y, X);
  for (double tau : {0.002, 0.01, 0.05, 0.25, 0.5, 0.95}) {
    const auto fit = fit_qr(data, tau);
    for (Index j = 0; j < d; ++j) {
      for (double step : {1e-4, -1e-4}) {
        Vector probe = fit.beta;
        probe(j) += step;
        CHECK(fit.objective <= check_objective(data, probe, tau) + 1e-10);
      }
    }
  }
}
