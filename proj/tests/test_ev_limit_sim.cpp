#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "exqr/ev_limit_sim.hpp"
#include "test_support.hpp"

using namespace exqr;
using Catch::Approx;

namespace {

const Vector kOne = Vector::Ones(1);

std::vector<double> oracle_cn(double k, double m, double xi, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = nonregression_oracle_draw(k, m, xi, rng).cn;
  return out;
}

std::vector<double> oracle_sn(double k, double m, double xi, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = nonregression_oracle_draw(k, m, xi, rng).sn;
  return out;
}

Matrix mixed_design(Index T, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> z;
  std::bernoulli_distribution coin(0.3);
  Matrix X(T, 3);
  for (Index t = 0; t < T; ++t) X.row(t) << 1.0, z(rng), coin(rng) ? 1.0 : 0.0;
  return X;
}

}  // namespace

TEST_CASE("Poisson arrivals", "[sim][arrivals]") {
  SECTION("single arrival is standard exponential") {
    double sum = 0.0, sumsq = 0.0;
    const int n = 40000;
    for (int i = 0; i < n; ++i) {
      Rng rng = stream_rng(3, static_cast<std::uint64_t>(i));
      const double g = sample_poisson_arrivals(1, rng)(0);
      sum += g;
      sumsq += g * g;
    }
    const double mean = sum / n;
    CHECK(mean == Approx(1.0).margin(0.03));
    CHECK(sumsq / n - mean * mean == Approx(1.0).margin(0.06));
  }
  SECTION("law of large numbers and monotonicity") {
    Rng rng(11);
    const Vector g = sample_poisson_arrivals(10000, rng);
    CHECK(g(9999) / 10000.0 == Approx(1.0).margin(0.05));
    for (Index t = 1; t < g.size(); ++t) REQUIRE(g(t) > g(t - 1));
    CHECK(g(0) > 0.0);
  }
  SECTION("determinism") {
    Rng a(5), b(5);
    CHECK(sample_poisson_arrivals(50, a) == sample_poisson_arrivals(50, b));
  }
  CHECK_THROWS_AS([] {
    Rng rng(1);
    return sample_poisson_arrivals(0, rng);
  }(), DomainError);
}

TEST_CASE("smoothed design sampler", "[sim][design]") {
  SECTION("single-row design keeps the intercept and constants") {
    Matrix X(1, 3);
    X << 1.0, 2.0, 5.0;
    SmoothedDesignSampler s(X);
    Rng rng(1);
    for (int i = 0; i < 10; ++i) {
      const Vector x = draw_design_point(s, rng);
      CHECK(x(0) == 1.0);
      CHECK(x(1) == 2.0);
      CHECK(x(2) == 5.0);
    }
  }
  SECTION("noise scales follow sd / sqrt(T)") {
    const Matrix X = mixed_design(400, 2);
    SmoothedDesignSampler s(X);
    CHECK(s.noise_scales()(0) == 0.0);
    const double mean = X.col(1).mean();
    const double sd = std::sqrt((X.col(1).array() - mean).square().sum() / 399.0);
    CHECK(s.noise_scales()(1) == Approx(sd / 20.0).epsilon(1e-12));
    CHECK(s.noise_scales()(2) > 0.0);
  }
  SECTION("draw mean matches the column means") {
    const Matrix X = mixed_design(200, 4);
    SmoothedDesignSampler s(X);
    Rng rng(8);
    const int n = 100000;
    Vector sum = Vector::Zero(3), sumsq = Vector::Zero(3);
    for (int i = 0; i < n; ++i) {
      const Vector x = draw_design_point(s, rng);
      REQUIRE(x(0) == 1.0);
      sum += x;
      sumsq += x.cwiseProduct(x);
    }
    const Vector mean = sum / n;
    const Vector xbar = s.column_means();
    for (Index j = 1; j < 3; ++j) {
      const double var = sumsq(j) / n - mean(j) * mean(j);
      CHECK(std::abs(mean(j) - xbar(j)) <= 3.0 * std::sqrt(var / n));
    }
  }
}

TEST_CASE("limit argmin on a degenerate design equals the order statistic", "[sim][argmin]") {
  const auto sampler = SmoothedDesignSampler::constant_one();
  for (double xi : {-1.0, -1.0 / 3.0, 0.5, 1.0}) {
    for (double k : {1.0, 2.0, 5.0, 7.5}) {
      Rng rng(static_cast<std::uint64_t>(100 * k + 10 * xi + 50));
      const PoissonPoints pts = draw_poisson_points(sampler, 300, rng);
      const Vector z = simulate_zhat_star(k, xi, kOne, kOne, pts);
      const auto order = static_cast<Index>(std::ceil(k)) - 1;
      const double expected = std::pow(pts.gammas(order), -xi) - std::pow(k, -xi);
      CHECK(z(0) == Approx(expected).epsilon(1e-12).margin(1e-12));
    }
  }
}

TEST_CASE("limit argmin is optimal under coordinate perturbations", "[sim][argmin]") {
  const Matrix X = mixed_design(300, 9);
  SmoothedDesignSampler s(X);
  const Vector xbar = s.column_means();
  Vector gamma(3);
  gamma << 1.0, 0.3, -0.2;
  gamma(0) += 1.0 - xbar.dot(gamma);
  for (double xi : {-0.5, 0.5}) {
    for (int rep = 0; rep < 20; ++rep) {
      Rng rng = stream_rng(77, static_cast<std::uint64_t>(rep));
      const PoissonPoints pts = draw_poisson_points(s, 500, rng);
      const LimitArgmin a = limit_argmin(6.0, xi, gamma, xbar, pts);
      const double best = limit_objective(6.0, xi, gamma, xbar, pts, a.w);
      for (Index j = 0; j < 3; ++j) {
        for (double step : {1e-3, -1e-3, 1e-1, -1e-1}) {
          Vector probe = a.w;
          probe(j) += step;
          CHECK(best <= limit_objective(6.0, xi, gamma, xbar, pts, probe) + 1e-10);
        }
      }
    }
  }
}

TEST_CASE("oracle closed forms", "[sim][oracle]") {
  SECTION("xi = -1, k = 1 has mean zero") {
    const auto cn = oracle_cn(1.0, 2.0, -1.0, 200000, 4);
    const double mean = std::accumulate(cn.begin(), cn.end(), 0.0) / cn.size();
    CHECK(mean == Approx(0.0).margin(0.01));
  }
  SECTION("xi = -1, k = 5, m = 2: positive denominator and matching signs") {
    Rng rng(12);
    for (int i = 0; i < 10000; ++i) {
      const auto d = nonregression_oracle_draw(5.0, 2.0, -1.0, rng);
      REQUIRE(std::isfinite(d.sn));
      CHECK((d.sn > 0) == (d.cn > 0));
    }
  }
  SECTION("continuity at xi = 0 after scaling by 1/xi") {
    // (G^-xi - 1)/xi -> -log G from both sides.
    auto scaled = [](double xi) {
      auto v = oracle_cn(1.0, 2.0, xi, 50000, 21);
      for (auto& x : v) x /= xi;
      return v;
    };
    const auto plus = scaled(1e-4);
    const auto minus = scaled(-1e-4);
    CHECK(testing::ks_distance(plus, minus) <= 0.02);
    Rng rng(21);
    std::exponential_distribution<double> e;
    std::vector<double> gumbel(50000);
    for (auto& x : gumbel) x = -std::log(e(rng));
    CHECK(testing::ks_distance(plus, gumbel) <= 0.02);
  }
}

TEST_CASE("simulator reproduces the closed-form laws in the location model", "[sim][calibration]") {
  const auto sampler = SmoothedDesignSampler::constant_one();
  for (double xi : {-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0}) {
    for (double k : {2.0, 5.0, 20.0}) {
      const double m = 6.0 / k + 1.0;  // k(m - 1) = d + 5
      LimitLawOptions opt;
      opt.B = 5000;
      opt.seed = 900 + static_cast<std::uint64_t>(k);
      const auto sim = simulate_limit_sample(k, m, xi, kOne, kOne, kOne, sampler, opt);
      const auto cn = oracle_cn(k, m, xi, 1000000, 31);
      const auto sn = oracle_sn(k, m, xi, 1000000, 31);
      INFO("xi = " << xi << ", k = " << k);
      CHECK(testing::ks_distance(sim.cn_draws, cn) <= 0.05);
      CHECK(testing::ks_distance(sim.sn_draws, sn) <= 0.05);
      CHECK(sim.rejected == 0);
    }
  }
}

TEST_CASE("median of the k = 1 uniform-tail law", "[sim][calibration]") {
  const auto sampler = SmoothedDesignSampler::constant_one();
  std::vector<double> z;
  for (std::uint64_t i = 0; i < 20000; ++i) {
    Rng rng = stream_rng(55, i);
    const PoissonPoints pts = draw_poisson_points(sampler, 200, rng);
    z.push_back(simulate_zhat_star(1.0, -1.0, kOne, kOne, pts)(0));
  }
  CHECK(testing::sample_median(z) == Approx(std::log(2.0) - 1.0).margin(0.03));
}

TEST_CASE("joint draw checks and determinism", "[sim][joint]") {
  const auto sampler = SmoothedDesignSampler::constant_one();
  Rng rng(1);
  CHECK_THROWS_AS(simulate_joint_draw(5, 3.4, -1, kOne, kOne, Vector::Zero(1), sampler, 500, rng),
                  DomainError);
  CHECK_THROWS_AS(simulate_joint_draw(5, 1.1, -1, kOne, kOne, kOne, sampler, 500, rng),
                  DomainError);
  Rng a(42), b(42);
  const auto da = simulate_joint_draw(5, 3.4, -1, kOne, kOne, kOne, sampler, 500, a);
  const auto db = simulate_joint_draw(5, 3.4, -1, kOne, kOne, kOne, sampler, 500, b);
  CHECK(da.cn == db.cn);
  CHECK(da.sn == db.sn);
  CHECK(da.denominator > 0.0);
}

TEST_CASE("simulate_limit_sample contract", "[sim][sample]") {
  const Matrix X = mixed_design(250, 3);
  SmoothedDesignSampler s(X);
  const Vector xbar = s.column_means();
  Vector gamma(3);
  gamma << 1.0, 0.2, 0.4;
  gamma(0) += 1.0 - xbar.dot(gamma);
  Vector psi(3);
  psi << 0.0, 1.0, 0.0;

  LimitLawOptions opt;
  opt.B = 100;
  opt.M = 200;
  opt.seed = 7;
  const auto a = simulate_limit_sample(5.0, 2.6, -0.5, gamma, xbar, psi, s, opt);
  CHECK(a.cn_draws.size() == 100);
  CHECK(a.sn_draws.size() == 100);
  CHECK(a.M >= 200);
  for (double v : a.sn_draws) CHECK(std::isfinite(v));

  SECTION("bit-identical under a fixed seed and any worker count") {
    opt.threads = 1;
    const auto serial = simulate_limit_sample(5.0, 2.6, -0.5, gamma, xbar, psi, s, opt);
    opt.threads = 4;
    const auto threaded = simulate_limit_sample(5.0, 2.6, -0.5, gamma, xbar, psi, s, opt);
    CHECK(serial.cn_draws == a.cn_draws);
    CHECK(threaded.cn_draws == a.cn_draws);
    CHECK(threaded.sn_draws == a.sn_draws);
  }
  SECTION("different seeds differ") {
    opt.seed = 8;
    const auto c = simulate_limit_sample(5.0, 2.6, -0.5, gamma, xbar, psi, s, opt);
    CHECK(c.cn_draws != a.cn_draws);
  }
  SECTION("positive denominators for a finite endpoint") {
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
      const auto d = simulate_joint_draw(5.0, 2.6, -0.5, gamma, xbar, psi, s, 300, rng);
      CHECK(d.denominator > 0.0);
    }
  }
  SECTION("no self-normalized draws when k(m - 1) <= d") {
    const auto c = simulate_limit_sample(2.0, 2.0, -0.5, gamma, xbar, psi, s, opt);
    CHECK(c.sn_draws.empty());
    CHECK(c.cn_draws.size() == 100);
  }
  SECTION("preconditions") {
    opt.B = 99;
    CHECK_THROWS_AS(simulate_limit_sample(5.0, 2.6, -0.5, gamma, xbar, psi, s, opt), DomainError);
    opt.B = 100;
    opt.M = 199;
    CHECK_THROWS_AS(simulate_limit_sample(5.0, 2.6, -0.5, gamma, xbar, psi, s, opt), DomainError);
  }
}

TEST_CASE("doubling the truncation leaves critical values stable", "[sim][truncation]") {
  const auto sampler = SmoothedDesignSampler::constant_one();
  auto quantiles = [&](Index M) {
    LimitLawOptions opt;
    opt.B = 4000;
    opt.M = M;
    opt.seed = 2024;
    auto sn = simulate_limit_sample(5.0, 2.2, -1.0, kOne, kOne, kOne, sampler, opt).sn_draws;
    std::sort(sn.begin(), sn.end());
    std::vector<double> q;
    for (double a : {0.05, 0.5, 0.95}) q.push_back(sn[static_cast<std::size_t>(std::ceil(a * sn.size())) - 1]);
    return q;
  };
  // Same seeds: the first M arrivals coincide, so only truncation differs.
  const auto base = quantiles(500);
  const auto doubled = quantiles(1000);
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(std::abs(doubled[i] - base[i]) <= 0.02 * std::abs(base[i]));
  }
}
