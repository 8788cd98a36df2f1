// SPDX-License-Identifier: Apache-2.0
//
// Closed-form densities and divergences for the latent priors: diagonal
// Gaussians, Gamma hyper-priors (shape/rate convention -- rate is the
// INVERSE scale; this is the classic source of bugs, so it is spelled out
// on every type), the generalized Student-t marginal, and the relevance
// reparametrization of the Gamma prior.
//
// Every function here is a pure function of its inputs and safe to call
// concurrently. The Monte-Carlo oracle takes an explicit seed so parallel
// test shards stay deterministic.
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>

#include "bfvae/rng.hpp"

namespace bfvae {

using Vec = Eigen::ArrayXd;

// Diagonal Gaussian N(mean_j, std_j^2). std strictly positive.
struct DiagGaussian {
  Vec mean;
  Vec std;

  DiagGaussian(Vec m, Vec s);
  Eigen::Index dim() const { return mean.size(); }
};

// Gamma(shape, rate) with density proportional to x^(shape-1) e^(-rate x).
// "rate" is the inverse scale: mean = shape/rate, var = shape/rate^2.
struct GammaParams {
  Vec shape;
  Vec rate;

  GammaParams(Vec shape_, Vec rate_);
  Eigen::Index dim() const { return shape.size(); }
};

// Generalized Student-t centred at 0 with degrees of freedom `dof` and
// squared-scale `shape_scale` (variance of the underlying Gaussian scale
// mixture's precision mean inverse).
struct StudentT {
  double dof;
  double shape_scale;

  StudentT(double dof_, double shape_scale_);
};

// Per-dimension relevance indicators r in [0,1], with the small positive
// epsilon that keeps the induced Gamma prior proper at r = 0.
struct RelevanceVector {
  Vec r;
  double epsilon;

  explicit RelevanceVector(Vec r_, double epsilon_ = 1e-3);
  Eigen::Index dim() const { return r.size(); }
};

// --- Closed-form divergences -------------------------------------------

// Per-dimension KL( N(m, s^2) || N(0, 1) ) = (m^2 + s^2 - log s^2 - 1) / 2.
Vec kl_gaussian_std(const DiagGaussian& q);

// Per-dimension KL( N(m, s^2) || N(0, 1/alpha) )
//   = (alpha (m^2 + s^2) - log alpha - log s^2 - 1) / 2.
// Reduces to kl_gaussian_std at alpha = 1.
Vec kl_gaussian_precision(const DiagGaussian& q, const Vec& alpha);

// E_{alpha ~ Gamma(ahat, bhat)}[ KL( N(m,s^2) || N(0, 1/alpha) ) ].
//
// Derivation: the KL above is linear in alpha and log alpha,
//   KL = (alpha (m^2+s^2) - log alpha - log s^2 - 1) / 2,
// and for alpha ~ Gamma(ahat, bhat):
//   E[alpha]     = ahat / bhat,
//   E[log alpha] = psi(ahat) - log bhat,
// which gives
//   ((ahat/bhat)(m^2+s^2) - psi(ahat) + log bhat - log s^2 - 1) / 2.
Vec expected_kl_under_gamma(const DiagGaussian& q, const GammaParams& qalpha);

// Per-dimension KL( Gamma(ahat, bhat) || Gamma(a, b) )
//   = (ahat-a) psi(ahat) - log G(ahat) + log G(a)
//     + a (log bhat - log b) + ahat (b - bhat) / bhat.
Vec kl_gamma_gamma(const GammaParams& qalpha, const GammaParams& palpha);

// log density of the generalized Student-t t_f(z; 0, v), f = dof,
// v = shape_scale:
//   log G((f+1)/2) - log G(f/2) - log(f pi v)/2 - ((f+1)/2) log(1 + z^2/(f v)).
// This is the marginal of z | alpha ~ N(0, 1/alpha), alpha ~ Gamma(f/2, f v / 2).
Vec corrected_prior_logpdf(const Vec& z, const StudentT& t);

// Gamma hyper-prior induced by a relevance vector:
//   shape_j = (1 + 2 eps) / (r_j + eps),  rate_j = shape_j - 1.
// shape > 1 always, and Mode = (shape-1)/rate = 1 exactly by construction.
GammaParams gamma_prior_from_relevance(const RelevanceVector& rv);

// Binary entropy sum H(r) = -sum_j [ r log r + (1-r) log(1-r) ], with the
// convention 0 log 0 = 0 (arguments clamped at 1e-12). Range [0, d log 2].
double entropic_regularizer(const RelevanceVector& rv);

// --- Monte-Carlo oracle --------------------------------------------------

struct McEstimate {
  double estimate;
  double stderr_;
};

// Unbiased MC estimate of KL(q || p) = E_q[log q(z) - log p(z)] with its
// standard error. Deterministic for a fixed seed. Matching the sampler to
// logpdf_q is the caller's responsibility.
McEstimate mc_kl_oracle(const std::function<double(Rng&)>& sample_q,
                        const std::function<double(double)>& logpdf_q,
                        const std::function<double(double)>& logpdf_p,
                        int n_samples, uint64_t seed);

}  // namespace bfvae
