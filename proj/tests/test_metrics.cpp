// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bfvae/metrics.hpp"
#include "bfvae/rng.hpp"

using namespace bfvae;

namespace {

// Dataset whose observations ARE the factor values (one pixel per factor),
// so the identity map is a perfectly disentangled encoder.
FactorDataset oracle_dataset(const std::vector<int>& grid) {
  FactorDataset ds;
  const int K = static_cast<int>(grid.size());
  size_t n = 1;
  for (int g : grid) n *= static_cast<size_t>(g);
  ds.name = "oracle";
  ds.channels = 1;
  ds.height = 1;
  ds.width = K;
  ds.factor_sizes = grid;
  for (int k = 0; k < K; ++k) ds.factor_names.push_back("f" + std::to_string(k));
  ds.factor_values.resize(static_cast<Eigen::Index>(n), K);
  ds.classes.resize(static_cast<Eigen::Index>(n), K);
  ds.pixels.resize(n * static_cast<size_t>(K));
  ds.grid_lookup.resize(n);
  std::vector<int> idx(static_cast<size_t>(K), 0);
  for (size_t r = 0; r < n; ++r) {
    size_t linear = 0;
    for (int k = 0; k < K; ++k) {
      const double v =
          grid[static_cast<size_t>(k)] == 1
              ? 0.5
              : static_cast<double>(idx[static_cast<size_t>(k)]) /
                    (grid[static_cast<size_t>(k)] - 1);
      ds.factor_values(static_cast<Eigen::Index>(r), k) = v;
      ds.classes(static_cast<Eigen::Index>(r), k) = idx[static_cast<size_t>(k)];
      ds.pixels[r * static_cast<size_t>(K) + static_cast<size_t>(k)] =
          static_cast<uint8_t>(std::lround(v * 255.0));
      linear = linear * static_cast<size_t>(grid[static_cast<size_t>(k)]) +
               static_cast<size_t>(idx[static_cast<size_t>(k)]);
    }
    ds.grid_lookup[linear] = r;
    for (int k = K - 1; k >= 0; --k) {
      if (++idx[static_cast<size_t>(k)] < grid[static_cast<size_t>(k)]) break;
      idx[static_cast<size_t>(k)] = 0;
    }
  }
  ds.validate_grid();
  return ds;
}

const EncodeFn kIdentity = [](const Mat& x) { return x; };

}  // namespace

TEST_CASE("metric I and II score 100 on identity oracle codes, any seed") {
  FactorDataset ds = oracle_dataset({8, 8, 6});
  for (uint64_t seed : {0ull, 1ull, 12345ull}) {
    CHECK(metric_one(kIdentity, ds, 100, 32, seed).score == 100.0);
    CHECK(metric_two(kIdentity, ds, 100, 32, seed).score == 100.0);
  }
}

TEST_CASE("constant codes trigger the exclusion rule and score near chance") {
  FactorDataset ds = oracle_dataset({8, 8, 6});
  EncodeFn constant = [](const Mat& x) { return Mat::Zero(x.rows(), 3); };
  MetricResult r = metric_one(constant, ds, 400, 16, 7);
  CHECK(r.excluded_dims.size() == 3);
  CHECK(r.score == doctest::Approx(100.0 / 3.0).epsilon(0.2));
}

TEST_CASE("a rotation mixing two factors scores strictly below the oracle") {
  FactorDataset ds = oracle_dataset({8, 8, 6});
  // 45 degrees: the two mixed factors produce identical normalized
  // variances, so their votes collide on one dimension
  const double c = std::cos(std::numbers::pi / 4), s = std::sin(std::numbers::pi / 4);
  EncodeFn rotated = [c, s](const Mat& x) {
    Mat z = x;
    z.col(0) = c * x.col(0) - s * x.col(1);
    z.col(1) = s * x.col(0) + c * x.col(1);
    return z;
  };
  CHECK(metric_one(rotated, ds, 300, 32, 3).score < 100.0);
  CHECK(metric_two(rotated, ds, 300, 32, 3).score < 100.0);
}

TEST_CASE("vote metrics are invariant to per-dimension affine rescaling") {
  FactorDataset ds = oracle_dataset({8, 8, 6});
  EncodeFn scaled = [](const Mat& x) {
    Mat z = x;
    z.col(0) = 3.7 * x.col(0).array() - 1.0;
    z.col(1) = 0.4 * x.col(1).array() + 2.0;
    z.col(2) = -2.0 * x.col(2).array();
    return z;
  };
  for (uint64_t seed : {2ull, 9ull}) {
    MetricResult a = metric_one(kIdentity, ds, 200, 32, seed);
    MetricResult b = metric_one(scaled, ds, 200, 32, seed);
    CHECK(a.score == b.score);
    MetricResult c2 = metric_two(kIdentity, ds, 200, 32, seed);
    MetricResult d = metric_two(scaled, ds, 200, 32, seed);
    CHECK(c2.score == d.score);
  }
}

TEST_CASE("duplicated latent with deterministic ties keeps both metrics at 100") {
  FactorDataset ds = oracle_dataset({8, 8, 6});
  EncodeFn dup = [](const Mat& x) {
    Mat z(x.rows(), 4);
    z.leftCols(3) = x;
    z.col(3) = x.col(0);  // copy of factor 0
    return z;
  };
  CHECK(metric_one(dup, ds, 200, 32, 5).score == 100.0);
  CHECK(metric_two(dup, ds, 200, 32, 5).score == 100.0);
}

TEST_CASE("vote metric preconditions") {
  FactorDataset ds = oracle_dataset({4, 4});
  CHECK_THROWS_AS(metric_one(kIdentity, ds, 50, 32, 1), std::invalid_argument);
  CHECK_THROWS_AS(metric_one(kIdentity, ds, 200, 1, 1), std::invalid_argument);
  FactorDataset empty = ds;
  empty.factor_sizes.clear();
  empty.factor_values.resize(static_cast<Eigen::Index>(ds.n()), 0);
  empty.classes.resize(static_cast<Eigen::Index>(ds.n()), 0);
  CHECK_THROWS_AS(metric_one(kIdentity, empty, 200, 32, 1), std::invalid_argument);
}

TEST_CASE("dci_scores: permutation and uniform matrices, permutation invariance") {
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(4, 4);
  P(0, 2) = 0.9;
  P(1, 0) = 0.4;
  P(2, 3) = 1.3;
  P(3, 1) = 0.7;
  DciScores s = dci_scores(P);
  CHECK(s.disentanglement == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.completeness == doctest::Approx(1.0).epsilon(1e-12));

  Eigen::MatrixXd U = Eigen::MatrixXd::Constant(4, 4, 0.25);
  DciScores u = dci_scores(U);
  CHECK(u.disentanglement == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(u.completeness == doctest::Approx(0.0).epsilon(1e-12));

  // invariance to row/column permutations
  Rng rng(3);
  Eigen::MatrixXd R(3, 5);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) R(i, j) = rng.uniform(0, 2);
  DciScores base = dci_scores(R);
  Eigen::MatrixXd rp = R;
  rp.row(0).swap(rp.row(2));
  Eigen::MatrixXd cp = rp;
  cp.col(1).swap(cp.col(4));
  DciScores perm = dci_scores(cp);
  CHECK(perm.disentanglement == doctest::Approx(base.disentanglement).epsilon(1e-12));
  CHECK(perm.completeness == doctest::Approx(base.completeness).epsilon(1e-12));

  // dead latent excluded
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(3, 2);
  D(0, 0) = 1.0;
  D(1, 1) = 1.0;
  CHECK(dci_scores(D).disentanglement == doctest::Approx(1.0));
}

TEST_CASE("metric III: identity codes are highly informative for both regressors") {
  FactorDataset ds = oracle_dataset({8, 8, 6});
  LatentCodes codes = collect_codes(kIdentity, ds);
  CHECK(codes.z.rows() == 384);

  MetricResult lasso = metric_three(codes, ds.factor_values, Regressor::Lasso, 1);
  CHECK(lasso.informativeness <= 0.05);
  CHECK(lasso.disentanglement > 0.95);
  CHECK(lasso.completeness > 0.95);

  MetricResult forest =
      metric_three(codes, ds.factor_values, Regressor::RandomForest, 1);
  CHECK(forest.informativeness <= 0.05);
  CHECK(forest.disentanglement > 0.9);

  LatentCodes tiny{Mat::Zero(10, 3), Vec::Ones(3)};
  CHECK_THROWS_AS(metric_three(tiny, Mat::Zero(10, 2), Regressor::Lasso, 1),
                  std::invalid_argument);
}

TEST_CASE("metric III bounds hold on a mixed-up encoder") {
  FactorDataset ds = oracle_dataset({8, 8, 6});
  Rng rng(9);
  Mat mix(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) mix(i, j) = rng.gaussian();
  EncodeFn mixed = [mix](const Mat& x) { return x * mix; };
  LatentCodes codes = collect_codes(mixed, ds);
  MetricResult r = metric_three(codes, ds.factor_values, Regressor::Lasso, 2);
  CHECK(r.disentanglement >= 0.0);
  CHECK(r.disentanglement <= 1.0);
  CHECK(r.completeness >= 0.0);
  CHECK(r.completeness <= 1.0);
  CHECK(r.informativeness >= 0.0);
  CHECK(r.disentanglement < 0.9);  // mixing destroys exclusivity
}

TEST_CASE("aggregate diagnostics: factorized standard normal gives zeros") {
  Rng rng(11);
  Mat z(20000, 3);
  for (int i = 0; i < z.rows(); ++i)
    for (int j = 0; j < 3; ++j) z(i, j) = rng.gaussian();
  AggregateDiagnostics d = aggregate_diagnostics_from_samples(z);
  CHECK(std::fabs(d.tc) < 0.01);
  CHECK(std::fabs(d.kl_z) < 0.01);
  CHECK(d.per_dim_kl.abs().maxCoeff() < 0.01);
  CHECK(d.residual < 1e-10);
}

TEST_CASE("aggregate diagnostics: correlated Gaussian matches the analytic TC") {
  const double rho = 0.8;
  Rng rng(13);
  Mat z(40000, 2);
  for (int i = 0; i < z.rows(); ++i) {
    const double a = rng.gaussian(), b = rng.gaussian();
    z(i, 0) = a;
    z(i, 1) = rho * a + std::sqrt(1 - rho * rho) * b;
  }
  AggregateDiagnostics d = aggregate_diagnostics_from_samples(z);
  const double analytic_tc = -0.5 * std::log(1 - rho * rho);  // 0.51082562376
  CHECK(d.tc == doctest::Approx(analytic_tc).epsilon(0.05));
  // decomposition identity: kl_z = tc + sum per-dim, exact under the fit
  CHECK(std::fabs(d.kl_z - d.tc - d.per_dim_kl.sum()) < 0.05);
  CHECK(d.residual < 1e-10);
}

TEST_CASE("aggregate diagnostics: posterior wrapper runs on a dataset") {
  FactorDataset ds = oracle_dataset({8, 8});
  PosteriorFn post = [](const Mat& x) {
    return GaussianPosterior{x, Mat::Constant(x.rows(), x.cols(), 0.1)};
  };
  AggregateDiagnostics d = aggregate_posterior_diagnostics(post, ds, 4096, 3);
  CHECK(std::isfinite(d.tc));
  CHECK(d.residual < 1e-10);
  // a nuisance-like dimension with constant posterior is driven by (m, s)
  PosteriorFn nuisance = [](const Mat& x) {
    Mat m = Mat::Zero(x.rows(), 2);
    m.col(0) = x.col(0);
    Mat s = Mat::Constant(x.rows(), 2, 0.1);
    s.col(1).setConstant(1.0);  // q(z_1 | x) = N(0, 1) for every x
    return GaussianPosterior{m, s};
  };
  AggregateDiagnostics dn = aggregate_posterior_diagnostics(nuisance, ds, 8192, 5);
  CHECK(std::fabs(dn.per_dim_kl[1]) < 0.01);  // matches the prior exactly
  CHECK(dn.per_dim_kl[0] > 0.05);
}
