#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "dropscan/arma.hpp"
#include "dropscan/error.hpp"

using namespace dropscan;

namespace {

// Exact ARMA(1,1) log-likelihood from the dense autocovariance matrix of the
// observed points; independent of the state-space code.
double dense_arma11_loglik(double c, double phi, double theta, double sigma2, const DiffSeries& y) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (!y.missing[i]) idx.push_back(i);
  const double g0 = sigma2 * (1 + 2 * phi * theta + theta * theta) / (1 - phi * phi);
  const double g1 = sigma2 * (1 + phi * theta) * (phi + theta) / (1 - phi * phi);
  auto gamma = [&](std::size_t lag) { return lag == 0 ? g0 : g1 * std::pow(phi, static_cast<double>(lag - 1)); };
  const auto m = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd cov(m, m);
  Eigen::VectorXd r(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    r(a) = y.values[idx[static_cast<std::size_t>(a)]] - c;
    for (Eigen::Index b = 0; b < m; ++b) {
      const auto ia = idx[static_cast<std::size_t>(a)], ib = idx[static_cast<std::size_t>(b)];
      cov(a, b) = gamma(ia > ib ? ia - ib : ib - ia);
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double quad = r.dot(llt.solve(r));
  return -0.5 * (static_cast<double>(m) * std::log(2 * std::numbers::pi) + logdet + quad);
}

DiffSeries white_noise(std::size_t n, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, sd);
  DiffSeries d;
  for (std::size_t i = 0; i < n; ++i) d.values.push_back(z(rng));
  d.missing.assign(n, false);
  d.t1_index = n / 2;
  return d;
}

}  // namespace

TEST(Loglikelihood, MatchesClosedFormAr1) {
  DiffSeries s;
  s.values = {0, 1, 0.5};
  s.missing = {false, false, false};
  ArmaParams p;
  p.phi = {0.5};
  p.sigma2 = 1.0;
  const double v0 = 1.0 / (1.0 - 0.25);
  const double two_pi = 2 * std::numbers::pi;
  // y1 ~ N(0, v0); y2 | y1 ~ N(0.5 y1, 1); y3 | y2 ~ N(0.5 y2, 1)
  const double oracle = -0.5 * std::log(two_pi * v0) - 0.5 * (std::log(two_pi) + 1.0) - 0.5 * std::log(two_pi);
  EXPECT_NEAR(loglikelihood(p, s, RegressorMatrix::empty(3)), oracle, 1e-10);
}

TEST(Loglikelihood, MatchesDenseCovarianceWithMissingValues) {
  const double phi[] = {0.6}, theta[] = {-0.4};
  DiffSeries y = simulate_arma({1, 1}, 2.0, phi, theta, 1.5, 60, 5);
  for (std::size_t i : {3u, 4u, 17u, 40u}) {
    y.missing[i] = true;
    y.values[i] = 0.0;
  }
  ArmaParams p;
  p.c = 2.0;
  p.phi = {0.6};
  p.theta = {-0.4};
  p.sigma2 = 1.5;
  const double oracle = dense_arma11_loglik(2.0, 0.6, -0.4, 1.5, y);
  EXPECT_NEAR(loglikelihood(p, y, RegressorMatrix::empty(60), false), oracle, 1e-8);
  EXPECT_NEAR(loglikelihood(p, y, RegressorMatrix::empty(60), true), oracle, 1e-6);
}

TEST(Loglikelihood, RejectsInadmissibleParameters) {
  const DiffSeries y = white_noise(30, 1);
  ArmaParams p;
  p.phi = {1.2};
  try {
    loglikelihood(p, y, RegressorMatrix::empty(30));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonStationaryParams);
  }
  p.phi = {};
  p.theta = {-1.5};
  try {
    loglikelihood(p, y, RegressorMatrix::empty(30));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonInvertibleParams);
  }
}

TEST(LoglikelihoodGradient, AgreesWithCentralDifferences) {
  const double phi[] = {0.5, -0.2}, theta[] = {0.3};
  const DiffSeries y = simulate_arma({2, 1}, 1.0, phi, theta, 2.0, 120, 9);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(120, 1);
  x.bottomRows(60).setOnes();
  const RegressorMatrix reg(x);
  ArmaParams p;
  p.c = 0.8;
  p.phi = {0.4, -0.1};
  p.theta = {0.25};
  p.beta = {0.3};
  p.sigma2 = 1.7;
  const Eigen::VectorXd g = loglikelihood_gradient(p, y, reg, false);
  ASSERT_EQ(g.size(), 6);
  auto perturbed = [&](int k, double h) {
    ArmaParams q = p;
    double* slots[] = {&q.c, &q.phi[0], &q.phi[1], &q.theta[0], &q.beta[0], &q.sigma2};
    *slots[k] += h;
    return loglikelihood(q, y, reg, false);
  };
  for (int k = 0; k < 6; ++k) {
    const double h = 1e-5;
    const double fd = (perturbed(k, h) - perturbed(k, -h)) / (2 * h);
    EXPECT_NEAR(g(k), fd, 1e-4 * std::max(1.0, std::abs(fd))) << "coordinate " << k;
  }
}

TEST(Aicc, DirectFormula) {
  EXPECT_NEAR(aicc(-100.0, 4, 100), 200.0 + 8.0 + 40.0 / 95.0, 1e-12);
  EXPECT_THROW(aicc(-1.0, 4, 5), Error);
}

TEST(Fit, RecoversArma11) {
  const double phi[] = {0.5}, theta[] = {0.3};
  int ok = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const DiffSeries y = simulate_arma({1, 1}, 0.0, phi, theta, 1.0, 500, seed);
    const ArmaFit f = fit(y, RegressorMatrix::empty(500), {1, 1});
    EXPECT_TRUE(f.converged);
    if (std::abs(f.phi[0] - 0.5) < 0.15 && std::abs(f.theta[0] - 0.3) < 0.2) ++ok;
  }
  EXPECT_GE(ok, 8);
}

TEST(Fit, EstimatesLevelShiftAndItsStandardError) {
  DiffSeries y = white_noise(200, 4, 2.0);
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(200, 1);
  for (std::size_t i = 100; i < 200; ++i) {
    x(static_cast<Eigen::Index>(i), 0) = 1.0;
    y.values[i] += 5.0;
  }
  const ArmaFit f = fit(y, RegressorMatrix(x), {0, 0});
  ASSERT_EQ(f.beta.size(), 1u);
  EXPECT_NEAR(f.beta[0], 5.0, 1.0);
  // OLS standard error of a difference of two means of 100 points each.
  EXPECT_NEAR(f.beta_se(0), 2.0 * std::sqrt(2.0 / 100.0), 0.1);
}

TEST(Fit, ThrowsOnTooFewObservations) {
  const DiffSeries y = white_noise(5, 2);
  try {
    fit(y, RegressorMatrix::empty(5), {2, 2});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InsufficientData);
  }
}

TEST(Fit, ResidualsHaveInnovationVariance) {
  const DiffSeries y = white_noise(300, 8, 3.0);
  const ArmaFit f = fit(y, RegressorMatrix::empty(300), {0, 0});
  const auto r = f.residuals(y, RegressorMatrix::empty(300));
  double ss = 0;
  for (double v : r) ss += v * v;
  EXPECT_NEAR(ss / 300.0, f.sigma2, 1e-6 + 0.05 * f.sigma2);
  EXPECT_NEAR(f.sigma2, 9.0, 1.5);
}

TEST(SelectOrder, FindsAutoregressionInStrongAr1) {
  const double phi[] = {0.8};
  const DiffSeries y = simulate_arma({1, 0}, 0.0, phi, {}, 1.0, 100, 0);
  const auto sel = select_order_detailed(y);
  EXPECT_EQ(sel.scores.size(), 64u);
  EXPECT_GE(sel.best.p + sel.best.q, 1);
}

TEST(SelectOrder, RespectsGridBounds) {
  SelectOptions opt;
  opt.max_p = 1;
  opt.max_q = 1;
  const auto sel = select_order_detailed(white_noise(80, 3), opt);
  EXPECT_EQ(sel.scores.size(), 4u);
  EXPECT_LE(sel.best.p, 1);
  EXPECT_LE(sel.best.q, 1);
}

TEST(Reparameterisation, PacfRoundTrip) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<double> u(-3, 3);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> raw{u(rng), u(rng), u(rng)};
    const auto phi = pacf_to_ar(raw);
    EXPECT_TRUE(is_stationary(phi));
    const auto back = ar_to_pacf(phi);
    ASSERT_TRUE(back.has_value());
    for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR((*back)[i], std::tanh(raw[i]), 1e-9);
  }
  EXPECT_FALSE(ar_to_pacf(std::vector<double>{1.1}).has_value());
  EXPECT_TRUE(is_invertible(std::vector<double>{0.5}));
  EXPECT_FALSE(is_invertible(std::vector<double>{-1.2}));
}
