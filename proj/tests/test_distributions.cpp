// SPDX-License-Identifier: Apache-2.0
//
// Closed forms against their independent oracles. Frozen expected values
// were computed from the quadrature / Monte-Carlo oracles in
// oracle_utils.hpp before being pinned here.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <boost/math/distributions/students_t.hpp>

#include <cmath>

#include "bfvae/distributions.hpp"
#include "bfvae/special.hpp"
#include "oracle_utils.hpp"

using namespace bfvae;

namespace {

Vec vec1(double v) {
  Vec x(1);
  x[0] = v;
  return x;
}

McEstimate mc_gaussian_kl(double m, double s, double mp, double sp, int n,
                          uint64_t seed) {
  return mc_kl_oracle(
      [m, s](Rng& rng) { return m + s * rng.gaussian(); },
      [m, s](double z) { return oracle::log_normal_pdf(z, m, s); },
      [mp, sp](double z) { return oracle::log_normal_pdf(z, mp, sp); }, n, seed);
}

}  // namespace

TEST_CASE("type invariants") {
  CHECK_THROWS_AS(DiagGaussian(vec1(0.0), vec1(0.0)), std::domain_error);
  CHECK_THROWS_AS(DiagGaussian(vec1(0.0), vec1(-1.0)), std::domain_error);
  CHECK_THROWS_AS(GammaParams(vec1(0.0), vec1(1.0)), std::domain_error);
  CHECK_THROWS_AS(GammaParams(vec1(1.0), vec1(-2.0)), std::domain_error);
  CHECK_THROWS_AS(StudentT(0.0, 1.0), std::domain_error);
  CHECK_THROWS_AS(RelevanceVector(vec1(1.5)), std::domain_error);
  CHECK_THROWS_AS(RelevanceVector(vec1(0.5), 0.0), std::domain_error);
  Vec two(2);
  two << 0.0, 0.0;
  CHECK_THROWS_AS(DiagGaussian(two, vec1(1.0)), std::invalid_argument);
}

TEST_CASE("kl_gaussian_std: examples") {
  CHECK(kl_gaussian_std(DiagGaussian(vec1(0.0), vec1(1.0)))[0] ==
        doctest::Approx(0.0).epsilon(1e-15));
  CHECK(kl_gaussian_std(DiagGaussian(vec1(1.0), vec1(1.0)))[0] ==
        doctest::Approx(0.5).epsilon(1e-12));
  // (m=0, s=2): (4 - log 4 - 1)/2
  CHECK(kl_gaussian_std(DiagGaussian(vec1(0.0), vec1(2.0)))[0] ==
        doctest::Approx(0.8068528194400547).epsilon(1e-12));
}

TEST_CASE("kl_gaussian_std: MC oracle agreement on the frozen examples") {
  auto a = mc_gaussian_kl(1.0, 1.0, 0.0, 1.0, 1000000, 11);
  CHECK(std::fabs(a.estimate - 0.5) <= 3.0 * a.stderr_);
  auto b = mc_gaussian_kl(0.0, 2.0, 0.0, 1.0, 1000000, 12);
  CHECK(std::fabs(b.estimate - 0.8068528194400547) <= 3.0 * b.stderr_);
}

TEST_CASE("kl_gaussian_precision: examples and reduction") {
  DiagGaussian q01(vec1(0.0), vec1(1.0));
  CHECK(kl_gaussian_precision(q01, vec1(1.0))[0] == doctest::Approx(0.0));
  CHECK(kl_gaussian_precision(q01, vec1(4.0))[0] ==
        doctest::Approx(0.8068528194400547).epsilon(1e-12));
  CHECK_THROWS_AS(kl_gaussian_precision(q01, vec1(0.0)), std::domain_error);

  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    DiagGaussian q(vec1(rng.uniform(-3, 3)), vec1(rng.uniform(0.1, 3)));
    CHECK(std::fabs(kl_gaussian_precision(q, vec1(1.0))[0] - kl_gaussian_std(q)[0]) <=
          1e-12);
  }
}

TEST_CASE("expected_kl_under_gamma: examples") {
  // q(alpha) concentrated at 1 reduces to the identical-Gaussian case
  CHECK(std::fabs(expected_kl_under_gamma(DiagGaussian(vec1(0.0), vec1(1.0)),
                                          GammaParams(vec1(1e6), vec1(1e6)))[0]) <
        1e-5);
  // frozen from the nested-MC oracle below: (2*2 - psi(2) - 1)/2
  const double frozen = 1.2886078324507664;
  CHECK(expected_kl_under_gamma(DiagGaussian(vec1(1.0), vec1(1.0)),
                                GammaParams(vec1(2.0), vec1(1.0)))[0] ==
        doctest::Approx(frozen).epsilon(1e-12));

  // nested MC: sample alpha ~ Gamma(2,1), average the closed-form inner KL
  Rng rng(21);
  const int n = 1000000;
  double sum = 0, sumsq = 0;
  DiagGaussian q(vec1(1.0), vec1(1.0));
  for (int i = 0; i < n; ++i) {
    const double a = rng.gamma(2.0, 1.0);
    const double v = kl_gaussian_precision(q, vec1(a))[0];
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sumsq / n - mean * mean) / n);
  CHECK(std::fabs(mean - frozen) <= 3.0 * se);

  // linearity: increasing m^2 raises the value by (ahat/bhat) * dm2 / 2 exactly
  GammaParams qa(vec1(3.0), vec1(2.0));
  const double k1 = expected_kl_under_gamma(DiagGaussian(vec1(1.0), vec1(0.7)), qa)[0];
  const double k2 = expected_kl_under_gamma(DiagGaussian(vec1(2.0), vec1(0.7)), qa)[0];
  CHECK(k2 - k1 == doctest::Approx(0.5 * (3.0 / 2.0) * (4.0 - 1.0)).epsilon(1e-12));
}

TEST_CASE("kl_gamma_gamma: examples, quadrature oracle, asymmetry") {
  GammaParams q(vec1(3.0), vec1(2.0)), p(vec1(2.0), vec1(1.0));
  CHECK(kl_gamma_gamma(q, q)[0] == doctest::Approx(0.0).epsilon(1e-14));

  // frozen from the quadrature oracle: psi(3) + log 2 - 3/2
  const double frozen = 0.11593151565841244;
  const double closed = kl_gamma_gamma(q, p)[0];
  CHECK(closed == doctest::Approx(frozen).epsilon(1e-10));
  CHECK(oracle::kl_gamma_quadrature(3, 2, 2, 1) == doctest::Approx(closed).epsilon(1e-7));

  const double reversed = kl_gamma_gamma(p, q)[0];
  CHECK(std::fabs(closed - reversed) > 1e-3);
  CHECK(oracle::kl_gamma_quadrature(2, 1, 3, 2) ==
        doctest::Approx(reversed).epsilon(1e-6));
}

TEST_CASE("corrected_prior_logpdf: normalization, Gaussian limit, generative KS") {
  // normalization on a fine grid over [-50, 50] for (f=4, v=1)
  StudentT t41(4.0, 1.0);
  const double mass = oracle::simpson(
      [&](double z) { return std::exp(corrected_prior_logpdf(vec1(z), t41)[0]); },
      -50.0, 50.0, 40000);
  CHECK(std::fabs(mass - 1.0) < 1e-4);

  // dof -> infinity approaches the standard normal on [-5, 5]
  StudentT tbig(2e6, 1.0);
  double max_gap = 0.0;
  for (double z = -5.0; z <= 5.0; z += 0.01) {
    const double gap = std::fabs(corrected_prior_logpdf(vec1(z), tbig)[0] -
                                 oracle::log_normal_pdf(z, 0.0, 1.0));
    max_gap = std::max(max_gap, gap);
  }
  CHECK(max_gap < 1e-4);

  // sample alpha then z; the marginal must match t_{2 ahat}(0, bhat/ahat)
  const double ahat = 1.0, bhat = 1.0;
  Rng rng(5);
  std::vector<double> zs(20000);
  for (auto& z : zs) {
    const double alpha = rng.gamma(ahat, bhat);
    z = rng.gaussian() / std::sqrt(alpha);
  }
  boost::math::students_t tdist(2.0 * ahat);
  const double scale = std::sqrt(bhat / ahat);
  const double d = oracle::ks_statistic(
      zs, [&](double z) { return boost::math::cdf(tdist, z / scale); });
  CHECK(d < oracle::ks_critical(static_cast<double>(zs.size())));
}

TEST_CASE("gamma_prior_from_relevance: arithmetic and the mode pin") {
  RelevanceVector r0(vec1(0.0), 1e-3);
  GammaParams g0 = gamma_prior_from_relevance(r0);
  CHECK(g0.shape[0] == doctest::Approx(1002.0).epsilon(1e-9));
  CHECK(g0.rate[0] == doctest::Approx(1001.0).epsilon(1e-9));
  // peaked near alpha = 1: tiny variance, mean near 1
  CHECK(g0.shape[0] / g0.rate[0] == doctest::Approx(1.0).epsilon(2e-3));
  CHECK(g0.shape[0] / (g0.rate[0] * g0.rate[0]) < 2e-3);

  RelevanceVector r1(vec1(1.0), 1e-3);
  GammaParams g1 = gamma_prior_from_relevance(r1);
  CHECK(g1.shape[0] == doctest::Approx(1.001).epsilon(1e-3));
  CHECK(g1.rate[0] == doctest::Approx(0.000999).epsilon(1e-2));

  Rng rng(17);
  for (int i = 0; i < 100; ++i) {
    RelevanceVector rv(vec1(rng.uniform()), 1e-3);
    GammaParams g = gamma_prior_from_relevance(rv);
    CHECK(g.shape[0] > 1.0);
    CHECK((g.shape[0] - 1.0) / g.rate[0] == 1.0);  // mode exactly 1
  }
}

TEST_CASE("entropic_regularizer: boundary, maximum, frozen example") {
  Vec zeros = Vec::Zero(4), ones = Vec::Ones(4);
  CHECK(entropic_regularizer(RelevanceVector(zeros)) == doctest::Approx(0.0));
  CHECK(entropic_regularizer(RelevanceVector(ones)) == doctest::Approx(0.0));
  CHECK(entropic_regularizer(RelevanceVector(Vec::Constant(10, 0.5))) ==
        doctest::Approx(10.0 * std::log(2.0)).epsilon(1e-12));

  Vec r(2);
  r << 0.9, 0.1;
  const double val = entropic_regularizer(RelevanceVector(r));
  CHECK(val == doctest::Approx(0.6501659467828964).epsilon(1e-12));
  // cross-check against a binary-entropy oracle
  auto h2 = [](double p) { return -p * std::log(p) - (1 - p) * std::log(1 - p); };
  CHECK(val == doctest::Approx(h2(0.9) + h2(0.1)).epsilon(1e-12));
}

TEST_CASE("mc_kl_oracle: calibration and convergence") {
  CHECK_THROWS_AS(mc_kl_oracle([](Rng& r) { return r.gaussian(); },
                               [](double) { return 0.0; }, [](double) { return 0.0; },
                               10, 1),
                  std::invalid_argument);
  auto same = mc_gaussian_kl(0, 1, 0, 1, 100000, 2);
  CHECK(std::fabs(same.estimate) <= 3.0 * std::max(same.stderr_, 1e-12));
  auto shifted = mc_gaussian_kl(1, 1, 0, 1, 100000, 3);
  CHECK(std::fabs(shifted.estimate - 0.5) <= 3.0 * shifted.stderr_);
  auto coarse = mc_gaussian_kl(1, 1, 0, 1, 10000, 4);
  auto fine = mc_gaussian_kl(1, 1, 0, 1, 1000000, 4);
  CHECK(fine.stderr_ < coarse.stderr_ * 0.15);  // ~ 1/10, allow slack
  CHECK(fine.stderr_ > coarse.stderr_ * 0.05);
}

TEST_CASE("property: closed-form KLs are non-negative for random parameters") {
  Rng rng(31);
  for (int i = 0; i < 200; ++i) {
    DiagGaussian q(vec1(rng.uniform(-4, 4)), vec1(rng.uniform(0.05, 4)));
    CHECK(kl_gaussian_std(q)[0] >= -1e-9);
    CHECK(kl_gaussian_precision(q, vec1(rng.uniform(0.05, 10)))[0] >= -1e-9);
    GammaParams qa(vec1(rng.uniform(0.5, 20)), vec1(rng.uniform(0.5, 20)));
    CHECK(expected_kl_under_gamma(q, qa)[0] >= -1e-9);
    GammaParams pa(vec1(rng.uniform(0.5, 20)), vec1(rng.uniform(0.5, 20)));
    CHECK(kl_gamma_gamma(qa, pa)[0] >= -1e-9);
  }
}

TEST_CASE("property: closed forms track the MC/quadrature oracles (3 se)") {
  Rng rng(37);
  int worst_fail = 0;
  for (int i = 0; i < 30; ++i) {
    const double m = rng.uniform(-2, 2), s = rng.uniform(0.3, 2.0);
    DiagGaussian q(vec1(m), vec1(s));
    auto mc = mc_gaussian_kl(m, s, 0, 1, 200000, 1000 + static_cast<uint64_t>(i));
    if (std::fabs(mc.estimate - kl_gaussian_std(q)[0]) > 3 * mc.stderr_) ++worst_fail;

    const double ah = rng.uniform(0.8, 8), bh = rng.uniform(0.8, 8);
    const double a = rng.uniform(0.8, 8), b = rng.uniform(0.8, 8);
    const double quad = oracle::kl_gamma_quadrature(ah, bh, a, b);
    CHECK(kl_gamma_gamma(GammaParams(vec1(ah), vec1(bh)),
                         GammaParams(vec1(a), vec1(b)))[0] ==
          doctest::Approx(quad).epsilon(1e-5));
  }
  CHECK(worst_fail == 0);
}

TEST_CASE("property: averaged component KL upper-bounds the mixture KL") {
  Rng rng(41);
  for (int i = 0; i < 100; ++i) {
    const double m1 = rng.uniform(-3, 3), s1 = rng.uniform(0.2, 3);
    const double m2 = rng.uniform(-3, 3), s2 = rng.uniform(0.2, 3);
    const double mp = rng.uniform(-2, 2), sp = rng.uniform(0.3, 3);
    auto kl_cg = [&](double m, double s) {
      return std::log(sp / s) + (s * s + (m - mp) * (m - mp)) / (2 * sp * sp) - 0.5;
    };
    const double upper = 0.5 * (kl_cg(m1, s1) + kl_cg(m2, s2));
    const double mix =
        oracle::kl_mixture_vs_gaussian_quadrature(0.5, m1, s1, 0.5, m2, s2, mp, sp);
    CHECK(upper >= mix - 1e-6);
  }
}

TEST_CASE("limit: expected KL under a concentrating Gamma posterior") {
  DiagGaussian q(vec1(1.2), vec1(0.8));
  const double t = 1e5;
  const double gap = std::fabs(
      expected_kl_under_gamma(q, GammaParams(vec1(t), vec1(t)))[0] -
      kl_gaussian_std(q)[0]);
  CHECK(gap < 1e-3);
}

TEST_CASE("corrected prior: symmetric and unimodal at zero") {
  StudentT t(3.0, 2.0);
  for (double z : {0.3, 1.0, 2.5, 7.0}) {
    CHECK(corrected_prior_logpdf(vec1(z), t)[0] ==
          doctest::Approx(corrected_prior_logpdf(vec1(-z), t)[0]).epsilon(1e-14));
    CHECK(corrected_prior_logpdf(vec1(z), t)[0] <
          corrected_prior_logpdf(vec1(0.0), t)[0]);
  }
}
