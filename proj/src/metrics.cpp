// SPDX-License-Identifier: Apache-2.0
#include "bfvae/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bfvae/rng.hpp"

namespace bfvae {

namespace {

enum Stream : uint64_t {
  kVoteFactor = 21,
  kVoteSample = 22,
  kStdRows = 23,
  kSplit = 24,
  kForest = 25,
  kDiagRows = 26,
  kDiagNoise = 27
};

Vec column_std(const Mat& m) {
  Vec out(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    const double mean = m.col(j).mean();
    out[j] = std::sqrt((m.col(j).array() - mean).square().sum() /
                       std::max<Eigen::Index>(1, m.rows() - 1));
  }
  return out;
}

struct VoteSetup {
  Vec z_std;
  std::vector<int> excluded;
  std::vector<bool> usable;
};

VoteSetup vote_setup(const EncodeFn& encode, const FactorDataset& ds, uint64_t seed,
                     const MetricOptions& opts) {
  // estimate per-dim code std on (a subsample of) the dataset
  const size_t cap = std::min<size_t>(ds.n(), static_cast<size_t>(opts.std_estimate_cap));
  std::vector<size_t> rows(cap);
  if (cap == ds.n()) {
    std::iota(rows.begin(), rows.end(), size_t{0});
  } else {
    Rng rng(derive_seed(seed, kStdRows));
    for (auto& r : rows) r = rng.index(ds.n());
  }
  Mat codes;
  for (size_t start = 0; start < rows.size();
       start += static_cast<size_t>(opts.encode_batch)) {
    const size_t len = std::min<size_t>(static_cast<size_t>(opts.encode_batch),
                                        rows.size() - start);
    std::vector<size_t> chunk(rows.begin() + static_cast<long>(start),
                              rows.begin() + static_cast<long>(start + len));
    Mat c = encode(ds.batch(chunk));
    if (codes.size() == 0) codes.resize(static_cast<Eigen::Index>(rows.size()), c.cols());
    codes.middleRows(static_cast<Eigen::Index>(start), c.rows()) = c;
  }

  VoteSetup s;
  s.z_std = column_std(codes);
  s.usable.assign(static_cast<size_t>(codes.cols()), true);
  for (Eigen::Index j = 0; j < codes.cols(); ++j) {
    if (s.z_std[j] < opts.collapse_std_threshold) {
      s.usable[static_cast<size_t>(j)] = false;
      s.excluded.push_back(static_cast<int>(j));
    }
  }
  return s;
}

MetricResult vote_metric(const EncodeFn& encode, const FactorDataset& ds, int votes,
                         int batch_per_vote, uint64_t seed, const MetricOptions& opts,
                         bool fixed_factor_mode) {
  if (ds.num_factors() < 1)
    throw std::invalid_argument("vote metric: dataset has no factor labels");
  if (votes < 100) throw std::invalid_argument("vote metric: votes must be >= 100");
  if (batch_per_vote < 2)
    throw std::invalid_argument("vote metric: batch_per_vote must be >= 2");

  VoteSetup setup = vote_setup(encode, ds, seed, opts);
  const int K = ds.num_factors();
  Eigen::Index d = setup.z_std.size();

  auto run_vote = [&](uint64_t vote_idx, int* out_dim, int* out_factor) {
    Rng rng(derive_seed(seed, kVoteFactor, vote_idx));
    const int k = static_cast<int>(rng.index(static_cast<size_t>(K)));
    const uint64_t sseed = derive_seed(seed, kVoteSample, vote_idx);
    SampleBatch sb = fixed_factor_mode
                         ? sample_fixed_factor(ds, k, batch_per_vote, sseed)
                         : sample_varied_factor(ds, k, batch_per_vote, sseed);
    Mat codes = encode(sb.obs);
    Vec var(d);
    for (Eigen::Index j = 0; j < d; ++j) {
      const double mean = codes.col(j).mean();
      const double v = (codes.col(j).array() - mean).square().mean();
      const double sd = std::max(setup.z_std[j], 1e-12);
      var[j] = v / (sd * sd);
    }
    int best = -1;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (!setup.usable[static_cast<size_t>(j)]) continue;
      if (best < 0) {
        best = static_cast<int>(j);
        continue;
      }
      const bool better = fixed_factor_mode ? var[j] < var[best] : var[j] > var[best];
      if (better) best = static_cast<int>(j);
    }
    if (best < 0) best = 0;  // every dim collapsed; vote degenerates to dim 0
    *out_dim = best;
    *out_factor = k;
  };

  // training votes build the table; evaluation votes score the classifier
  Eigen::MatrixXd table = Eigen::MatrixXd::Zero(d, K);
  for (int v = 0; v < votes; ++v) {
    int dim = 0, k = 0;
    run_vote(static_cast<uint64_t>(v), &dim, &k);
    table(dim, k) += 1.0;
  }
  std::vector<int> majority(static_cast<size_t>(d), -1);
  for (Eigen::Index j = 0; j < d; ++j) {
    double best = 0.0;
    for (int k = 0; k < K; ++k) {
      if (table(j, k) > best) {
        best = table(j, k);
        majority[static_cast<size_t>(j)] = k;
      }
    }
  }

  double correct = 0.0;
  Vec per_factor_correct = Vec::Zero(K), per_factor_total = Vec::Zero(K);
  for (int v = 0; v < votes; ++v) {
    int dim = 0, k = 0;
    run_vote(static_cast<uint64_t>(votes + v), &dim, &k);
    per_factor_total[k] += 1.0;
    if (majority[static_cast<size_t>(dim)] == k) {
      correct += 1.0;
      per_factor_correct[k] += 1.0;
    }
  }

  MetricResult res;
  res.score = 100.0 * correct / votes;
  res.details = table;
  res.dim_to_factor = majority;
  res.excluded_dims = setup.excluded;
  res.per_factor = Vec::Zero(K);
  for (int k = 0; k < K; ++k)
    res.per_factor[k] =
        per_factor_total[k] > 0 ? 100.0 * per_factor_correct[k] / per_factor_total[k] : 0.0;
  return res;
}

}  // namespace

MetricResult metric_one(const EncodeFn& encode, const FactorDataset& ds, int votes,
                        int batch_per_vote, uint64_t seed, const MetricOptions& opts) {
  return vote_metric(encode, ds, votes, batch_per_vote, seed, opts, true);
}

MetricResult metric_two(const EncodeFn& encode, const FactorDataset& ds, int votes,
                        int batch_per_vote, uint64_t seed, const MetricOptions& opts) {
  return vote_metric(encode, ds, votes, batch_per_vote, seed, opts, false);
}

LatentCodes collect_codes(const EncodeFn& encode, const FactorDataset& ds,
                          int encode_batch) {
  LatentCodes lc;
  for (size_t start = 0; start < ds.n(); start += static_cast<size_t>(encode_batch)) {
    const size_t len = std::min<size_t>(static_cast<size_t>(encode_batch), ds.n() - start);
    std::vector<size_t> rows(len);
    std::iota(rows.begin(), rows.end(), start);
    Mat c = encode(ds.batch(rows));
    if (lc.z.size() == 0) lc.z.resize(static_cast<Eigen::Index>(ds.n()), c.cols());
    lc.z.middleRows(static_cast<Eigen::Index>(start), c.rows()) = c;
  }
  lc.z_std = column_std(lc.z);
  return lc;
}

// --- DCI ---------------------------------------------------------------------

namespace {

double entropy_of(const Vec& p) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) h -= p[i] * std::log(p[i]);
  return h;
}

}  // namespace

DciScores dci_scores(const Eigen::MatrixXd& P) {
  const Eigen::Index d = P.rows(), K = P.cols();
  if ((P.array() < 0.0).any())
    throw std::invalid_argument("dci_scores: importances must be non-negative");
  DciScores out;

  // disentanglement: importance-weighted (1 - normalized row entropy)
  double total = P.sum();
  double dsum = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    const double rs = P.row(i).sum();
    if (rs <= 0.0) continue;  // dead latent: excluded from D and its weights
    const double hi = K > 1 ? entropy_of(P.row(i).transpose().array() / rs) /
                                  std::log(static_cast<double>(K))
                            : 0.0;
    dsum += (rs / total) * (1.0 - hi);
  }
  // renormalize over live rows only
  double live = 0.0;
  for (Eigen::Index i = 0; i < d; ++i)
    if (P.row(i).sum() > 0.0) live += P.row(i).sum();
  out.disentanglement = live > 0.0 ? dsum * (total / live) : 0.0;

  // completeness: mean over factors of (1 - normalized column entropy)
  double csum = 0.0;
  int cols = 0;
  for (Eigen::Index j = 0; j < K; ++j) {
    const double cs = P.col(j).sum();
    if (cs <= 0.0) continue;
    const double hj = d > 1 ? entropy_of(P.col(j).array() / cs) /
                                  std::log(static_cast<double>(d))
                            : 0.0;
    csum += 1.0 - hj;
    ++cols;
  }
  out.completeness = cols > 0 ? csum / cols : 0.0;
  return out;
}

// --- regressors ----------------------------------------------------------------

namespace {

struct Standardized {
  Mat x;
  Vec mean, std;
};

Standardized standardize(const Mat& m) {
  Standardized s;
  s.x = m;
  s.mean = Vec::Zero(m.cols());
  s.std = Vec::Ones(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    s.mean[j] = m.col(j).mean();
    const double sd =
        std::sqrt((m.col(j).array() - s.mean[j]).square().sum() / m.rows());
    s.std[j] = sd > 1e-12 ? sd : 1.0;
    s.x.col(j) = (m.col(j).array() - s.mean[j]) / s.std[j];
  }
  return s;
}

// Lasso via cyclic coordinate descent on standardized columns:
//   min_w (1/2N) |y - Xw|^2 + lambda |w|_1
Vec lasso_fit(const Mat& X, const Vec& y, double lambda) {
  const Eigen::Index n = X.rows(), d = X.cols();
  Vec w = Vec::Zero(d);
  Vec resid = y;  // y - Xw
  Vec colsq(d);
  for (Eigen::Index j = 0; j < d; ++j) colsq[j] = X.col(j).squaredNorm() / n;
  for (int sweep = 0; sweep < 500; ++sweep) {
    double max_delta = 0.0;
    for (Eigen::Index j = 0; j < d; ++j) {
      if (colsq[j] <= 0.0) continue;
      const double rho =
          (X.col(j).array() * resid.array()).sum() / n + colsq[j] * w[j];
      const double wj_new =
          std::copysign(std::fmax(std::fabs(rho) - lambda, 0.0), rho) / colsq[j];
      const double delta = wj_new - w[j];
      if (delta != 0.0) {
        resid -= delta * X.col(j).array();
        w[j] = wj_new;
        max_delta = std::fmax(max_delta, std::fabs(delta));
      }
    }
    if (max_delta < 1e-7) break;
  }
  return w;
}

double rmse(const Vec& pred, const Vec& truth) {
  return std::sqrt((pred - truth).square().mean());
}

// Regression tree with variance-reduction splits over all features.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  double value = 0.0;  // leaf mean
  int left = -1, right = -1;
};

struct Tree {
  std::vector<TreeNode> nodes;
  double predict(const Eigen::RowVectorXd& x) const {
    int i = 0;
    while (nodes[static_cast<size_t>(i)].feature >= 0) {
      const auto& nd = nodes[static_cast<size_t>(i)];
      i = x[nd.feature] <= nd.threshold ? nd.left : nd.right;
    }
    return nodes[static_cast<size_t>(i)].value;
  }
};

struct ForestConfig {
  int n_trees = 10;
  int max_depth = 8;
  int min_leaf = 2;
};

int build_tree(Tree& tree, const Mat& X, const Vec& y, std::vector<int>& items,
               int lo, int hi, int depth, const ForestConfig& cfg, Vec& importance) {
  const int n = hi - lo;
  double sum = 0.0, sumsq = 0.0;
  for (int i = lo; i < hi; ++i) {
    const double v = y[items[static_cast<size_t>(i)]];
    sum += v;
    sumsq += v * v;
  }
  const double mean = sum / n;
  const double sse = sumsq - n * mean * mean;

  TreeNode node;
  node.value = mean;
  const int self = static_cast<int>(tree.nodes.size());
  tree.nodes.push_back(node);

  if (depth >= cfg.max_depth || n < 2 * cfg.min_leaf || sse <= 1e-12) return self;

  int best_f = -1;
  double best_thr = 0.0, best_gain = 1e-12;
  std::vector<std::pair<double, double>> fv(static_cast<size_t>(n));
  for (Eigen::Index f = 0; f < X.cols(); ++f) {
    for (int i = 0; i < n; ++i) {
      const int row = items[static_cast<size_t>(lo + i)];
      fv[static_cast<size_t>(i)] = {X(row, f), y[row]};
    }
    std::sort(fv.begin(), fv.end());
    double lsum = 0.0, lsq = 0.0;
    for (int i = 0; i < n - 1; ++i) {
      const double v = fv[static_cast<size_t>(i)].second;
      lsum += v;
      lsq += v * v;
      if (fv[static_cast<size_t>(i)].first == fv[static_cast<size_t>(i + 1)].first)
        continue;
      const int nl = i + 1, nr = n - nl;
      if (nl < cfg.min_leaf || nr < cfg.min_leaf) continue;
      const double rsum = sum - lsum, rsq = sumsq - lsq;
      const double sse_l = lsq - lsum * lsum / nl;
      const double sse_r = rsq - rsum * rsum / nr;
      const double gain = sse - sse_l - sse_r;
      if (gain > best_gain) {
        best_gain = gain;
        best_f = static_cast<int>(f);
        best_thr = 0.5 * (fv[static_cast<size_t>(i)].first +
                          fv[static_cast<size_t>(i + 1)].first);
      }
    }
  }
  if (best_f < 0) return self;

  auto mid = std::partition(items.begin() + lo, items.begin() + hi, [&](int row) {
    return X(row, best_f) <= best_thr;
  });
  const int split = static_cast<int>(mid - items.begin());
  if (split == lo || split == hi) return self;

  importance[best_f] += best_gain;
  tree.nodes[static_cast<size_t>(self)].feature = best_f;
  tree.nodes[static_cast<size_t>(self)].threshold = best_thr;
  tree.nodes[static_cast<size_t>(self)].left =
      build_tree(tree, X, y, items, lo, split, depth + 1, cfg, importance);
  tree.nodes[static_cast<size_t>(self)].right =
      build_tree(tree, X, y, items, split, hi, depth + 1, cfg, importance);
  return self;
}

struct ForestFit {
  std::vector<Tree> trees;
  Vec importance;  // impurity-based, normalized to sum 1 (when non-zero)
  Vec predict(const Mat& X) const {
    Vec out = Vec::Zero(X.rows());
    for (const auto& t : trees)
      for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] += t.predict(X.row(i));
    return out / static_cast<double>(trees.size());
  }
};

ForestFit forest_fit(const Mat& X, const Vec& y, const ForestConfig& cfg, uint64_t seed) {
  ForestFit fit;
  fit.importance = Vec::Zero(X.cols());
  const int n = static_cast<int>(X.rows());
  for (int t = 0; t < cfg.n_trees; ++t) {
    Rng rng(derive_seed(seed, kForest, static_cast<uint64_t>(t)));
    std::vector<int> items(static_cast<size_t>(n));
    for (auto& it : items) it = static_cast<int>(rng.index(static_cast<size_t>(n)));
    Tree tree;
    Vec imp = Vec::Zero(X.cols());
    build_tree(tree, X, y, items, 0, n, 0, cfg, imp);
    if (imp.sum() > 0.0) fit.importance += imp / imp.sum();
    fit.trees.push_back(std::move(tree));
  }
  if (fit.importance.sum() > 0.0) fit.importance /= cfg.n_trees;
  return fit;
}

}  // namespace

MetricResult metric_three(const LatentCodes& codes, const Mat& factors,
                          Regressor regressor, uint64_t split_seed) {
  const Eigen::Index N = codes.z.rows(), d = codes.z.cols(), K = factors.cols();
  if (factors.rows() != N)
    throw std::invalid_argument("metric_three: codes/factors row mismatch");
  if (N < 10 * d) throw std::invalid_argument("metric_three: need N >= 10 d");

  Standardized zs = standardize(codes.z);
  Standardized fs = standardize(factors);

  Rng rng(derive_seed(split_seed, kSplit));
  auto perm = rng.permutation(static_cast<size_t>(N));
  const Eigen::Index n_test = std::max<Eigen::Index>(1, N / 5);
  const Eigen::Index n_train = N - n_test;
  Mat Xtr(n_train, d), Xte(n_test, d);
  Mat Ytr(n_train, K), Yte(n_test, K);
  for (Eigen::Index i = 0; i < n_train; ++i) {
    Xtr.row(i) = zs.x.row(static_cast<Eigen::Index>(perm[static_cast<size_t>(i)]));
    Ytr.row(i) = fs.x.row(static_cast<Eigen::Index>(perm[static_cast<size_t>(i)]));
  }
  for (Eigen::Index i = 0; i < n_test; ++i) {
    Xte.row(i) = zs.x.row(static_cast<Eigen::Index>(perm[static_cast<size_t>(n_train + i)]));
    Yte.row(i) = fs.x.row(static_cast<Eigen::Index>(perm[static_cast<size_t>(n_train + i)]));
  }

  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(d, K);
  double info = 0.0;

  for (Eigen::Index j = 0; j < K; ++j) {
    const Vec ytr = Ytr.col(j).array();
    const Vec yte = Yte.col(j).array();
    if (regressor == Regressor::Lasso) {
      // lambda from a fixed grid, chosen on a validation tail of the train split
      const Eigen::Index n_val = std::max<Eigen::Index>(1, n_train / 5);
      const Eigen::Index n_fit = n_train - n_val;
      const Mat Xfit = Xtr.topRows(n_fit), Xval = Xtr.bottomRows(n_val);
      const Vec yfit = ytr.head(n_fit), yval = ytr.tail(n_val);
      double lmax = 0.0;
      for (Eigen::Index c = 0; c < d; ++c)
        lmax = std::fmax(lmax,
                         std::fabs((Xfit.col(c).array() * yfit.array()).sum() / n_fit));
      const double grid[] = {0.3, 0.1, 0.03, 0.01, 0.003, 0.001};
      double best_rmse = 1e300, best_lambda = grid[0] * lmax;
      for (double gfrac : grid) {
        const double lam = gfrac * lmax;
        Vec w = lasso_fit(Xfit, yfit, lam);
        const double r = rmse((Xval * w.matrix()).array(), yval);
        if (r < best_rmse) {
          best_rmse = r;
          best_lambda = lam;
        }
      }
      Vec w = lasso_fit(Xtr, ytr, best_lambda);
      P.col(j) = w.abs().matrix();
      info += rmse((Xte * w.matrix()).array(), yte);
    } else {
      ForestFit fit = forest_fit(Xtr, ytr, ForestConfig{}, derive_seed(split_seed, kForest, static_cast<uint64_t>(j)));
      P.col(j) = fit.importance.matrix();
      info += rmse(fit.predict(Xte), yte);
    }
  }

  MetricResult res;
  res.details = P;
  DciScores dci = dci_scores(P);
  res.disentanglement = dci.disentanglement;
  res.completeness = dci.completeness;
  res.informativeness = info / static_cast<double>(K);
  res.score = res.disentanglement;
  return res;
}

// --- aggregate posterior diagnostics ---------------------------------------------

AggregateDiagnostics aggregate_diagnostics_from_samples(const Mat& z) {
  const Eigen::Index n = z.rows(), d = z.cols();
  if (n < 2 || d < 1)
    throw std::invalid_argument("aggregate diagnostics: need >= 2 samples");
  Eigen::RowVectorXd mu = z.colwise().mean();
  Mat centered = z.rowwise() - mu;
  Mat cov = centered.transpose() * centered / static_cast<double>(n - 1);

  Eigen::LLT<Mat> llt(cov);
  if (llt.info() != Eigen::Success)
    cov += 1e-9 * Mat::Identity(d, d);  // near-singular fit; nudge
  llt.compute(cov);
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));

  AggregateDiagnostics out;
  out.kl_z = 0.5 * (cov.trace() + mu.squaredNorm() - d - logdet);
  double sum_log_diag = 0.0;
  out.per_dim_kl = Vec::Zero(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    sum_log_diag += std::log(cov(j, j));
    out.per_dim_kl[j] = 0.5 * (cov(j, j) + mu[j] * mu[j] - 1.0 - std::log(cov(j, j)));
  }
  out.tc = 0.5 * (sum_log_diag - logdet);
  out.residual = std::fabs(out.kl_z - out.tc - out.per_dim_kl.sum());
  return out;
}

AggregateDiagnostics aggregate_posterior_diagnostics(const PosteriorFn& posterior,
                                                     const FactorDataset& ds,
                                                     int n_samples, uint64_t seed) {
  if (n_samples < 2) throw std::invalid_argument("aggregate diagnostics: n_samples < 2");
  Rng rng(derive_seed(seed, kDiagRows));
  Rng noise(derive_seed(seed, kDiagNoise));
  Mat z;
  const int chunk = 512;
  int done = 0;
  while (done < n_samples) {
    const int len = std::min(chunk, n_samples - done);
    std::vector<size_t> rows(static_cast<size_t>(len));
    for (auto& r : rows) r = rng.index(ds.n());
    GaussianPosterior q = posterior(ds.batch(rows));
    if (z.size() == 0) z.resize(n_samples, q.mean.cols());
    for (int i = 0; i < len; ++i)
      for (Eigen::Index j = 0; j < q.mean.cols(); ++j)
        z(done + i, j) = q.mean(i, j) + q.std(i, j) * noise.gaussian();
    done += len;
  }
  return aggregate_diagnostics_from_samples(z);
}

}  // namespace bfvae
