// SPDX-License-Identifier: Apache-2.0
//
// The three disentanglement metrics plus aggregate-posterior diagnostics.
//
//   metric_one: fix one factor, vary the rest, vote with the argmin of the
//               normalized per-dimension code variance.
//   metric_two: vary one factor, fix the rest, vote with the argmax.
//   metric_three: regression-based disentanglement / completeness /
//               informativeness from an importance matrix (lasso
//               coefficients or random-forest impurity importances).
//
// Vote-based scores are percentages in [0,100]; 800 training + 800
// evaluation votes with 64 samples per vote keep the oracle-code score
// variance under one point. Dimensions whose code std over the dataset
// falls below 0.05 are excluded from voting; ties break toward the lowest
// index. All sampling is derived deterministically from the master seed.
#pragma once

#include <functional>

#include "bfvae/data.hpp"
#include "bfvae/distributions.hpp"
#include "bfvae/nets.hpp"

namespace bfvae {

// Observation batch -> code batch (typically the posterior means).
using EncodeFn = std::function<Mat(const Mat&)>;

struct LatentCodes {
  Mat z;      // N x d
  Vec z_std;  // per-dimension empirical std over the dataset
};

struct MetricResult {
  double score = 0.0;            // metric I/II: percent in [0,100]
  Vec per_factor;                // per-factor accuracy (vote metrics)
  Eigen::MatrixXd details;       // vote table (d x K) or importance matrix
  std::vector<int> dim_to_factor;  // majority assignment; -1 if no votes
  std::vector<int> excluded_dims;
  // metric III:
  double disentanglement = 0.0;
  double completeness = 0.0;
  double informativeness = 0.0;
};

struct MetricOptions {
  double collapse_std_threshold = 0.05;
  int encode_batch = 256;
  int std_estimate_cap = 10000;  // rows used to estimate z_std
};

MetricResult metric_one(const EncodeFn& encode, const FactorDataset& ds, int votes,
                        int batch_per_vote, uint64_t seed,
                        const MetricOptions& opts = {});
MetricResult metric_two(const EncodeFn& encode, const FactorDataset& ds, int votes,
                        int batch_per_vote, uint64_t seed,
                        const MetricOptions& opts = {});

enum class Regressor { Lasso, RandomForest };

// codes.z: N x d, factors: N x K (column-standardized internally).
// Requires N >= 10 d.
MetricResult metric_three(const LatentCodes& codes, const Mat& factors,
                          Regressor regressor, uint64_t split_seed);

// Disentanglement / completeness of a given importance matrix P (d x K);
// all-zero rows are excluded from D and its weights.
struct DciScores {
  double disentanglement = 0.0;
  double completeness = 0.0;
};
DciScores dci_scores(const Eigen::MatrixXd& importance);

// Encodes the full dataset (means) and its per-dimension stds.
LatentCodes collect_codes(const EncodeFn& encode, const FactorDataset& ds,
                          int encode_batch = 256);

struct AggregateDiagnostics {
  double tc = 0.0;
  Vec per_dim_kl;
  double kl_z = 0.0;
  double residual = 0.0;  // | kl_z - tc - sum(per_dim_kl) |
};

// Diagnostics of a set of aggregate-posterior samples against the standard
// normal prior, via a Gaussian fit to q(z) (moment matching); under the fit
// the decomposition kl_z = tc + sum_j kl_j is exact, so `residual` reflects
// only floating-point error. The fit itself is an estimator, not ground
// truth; with heavy non-Gaussian structure it underestimates all terms.
AggregateDiagnostics aggregate_diagnostics_from_samples(const Mat& z_samples);

// Samples z ~ q(z) by encoding `n_samples` random dataset rows and drawing
// one reparametrized sample each.
using PosteriorFn = std::function<GaussianPosterior(const Mat&)>;
AggregateDiagnostics aggregate_posterior_diagnostics(const PosteriorFn& posterior,
                                                     const FactorDataset& ds,
                                                     int n_samples, uint64_t seed);

}  // namespace bfvae
