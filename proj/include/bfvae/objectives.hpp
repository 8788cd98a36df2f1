// SPDX-License-Identifier: Apache-2.0
//
// The training objectives: plain/beta VAE, Factor-VAE (standard-normal or
// mixture-of-Gaussians prior), and the three hierarchical-prior variants
// bfvae0 (learned precisions), bfvae1 (Gamma hyper-prior with a variational
// Gamma posterior) and bfvae2 (relevance-reparametrized hyper-prior with a
// masked total-correlation discriminator).
//
// Each objective builds its graph on a caller-supplied Tape and returns the
// 1x1 total Var plus a LossBreakdown of the parts. All randomness is derived
// from the explicit noise_seed, so an objective is a deterministic function
// of (parameters, x, noise_seed) -- which is what makes the central
// finite-difference gradient checks in the test suite possible.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bfvae/distributions.hpp"
#include "bfvae/nets.hpp"

namespace bfvae {

// Trainable prior state. Positivity is maintained by optimizing logs
// (alpha, ahat, bhat) and the a > 1 constraint via a = 1 + softplus(raw_a);
// r in [0,1] via r = sigmoid(rho).
struct PriorSpec {
  enum class Kind { StdNormal, Precision, GammaHier, Relevance, Mog };
  Kind kind = Kind::StdNormal;
  int dim = 0;

  Parameter log_alpha;             // Precision
  Parameter raw_a;                 // GammaHier: a = 1 + softplus(raw_a)
  Parameter log_ahat, log_bhat;    // GammaHier / Relevance posterior
  Parameter rho;                   // Relevance: r = sigmoid(rho)
  double epsilon = 1e-3;

  int mog_k = 0;                   // Mog
  Parameter mog_logits;            // 1 x K
  Parameter mog_means;             // K x d
  Parameter mog_logstd;            // K x d

  static PriorSpec std_normal(int d);
  static PriorSpec precision(int d, double alpha0 = 1.0);
  static PriorSpec precision_from(const Vec& alpha);
  static PriorSpec gamma_hier(int d, double a0 = 2.0, double ahat0 = 1.0,
                              double bhat0 = 1.0);
  static PriorSpec relevance(int d, double r0 = 0.5, double eps = 1e-3,
                             double ahat0 = 1.0, double bhat0 = 1.0);
  static PriorSpec mog(int d, int K, uint64_t seed);

  std::vector<Parameter*> parameters();

  // Current values (validated on access).
  Vec alpha() const;                  // Precision
  Vec a() const;                      // GammaHier prior shapes (> 1)
  GammaParams qalpha() const;         // GammaHier / Relevance
  RelevanceVector relevance_vector() const;  // Relevance
};

// Per-step decomposition of an objective. `rec`, `kl`, `tc_proxy` and
// `hyper_kl` are stored unweighted; regularizer entries are stored already
// weighted. The invariant
//   total == rec + beta*kl + gamma*tc_proxy + hyper_scale*hyper_kl
//            + sum(regularizers)
// holds to float rounding.
struct LossBreakdown {
  double rec = 0.0;
  double kl = 0.0;
  double tc_proxy = 0.0;
  double hyper_kl = 0.0;
  std::map<std::string, double> regularizers;
  double beta = 1.0;
  double gamma = 0.0;
  double hyper_scale = 0.0;
  double total = 0.0;

  double weighted_sum() const;
};

struct ObjectiveOut {
  LossBreakdown breakdown;
  Var total;
  Mat z_sample;  // the reparametrized latents used by this evaluation
};

// --- plumbing ops ----------------------------------------------------------

// z = mean + std .* xi, xi ~ N(0, I) drawn from `seed`.
Mat reparam_sample(const GaussianPosterior& q, uint64_t seed);

// Mean over the batch of the summed per-pixel Bernoulli cross entropy
// between x (in [0,1]) and the decoder's logits at z.
double rec_loss(const EncoderDecoder& model, const Mat& x, const Mat& z);

// Independently permutes each latent column across the batch (fresh uniform
// permutation per dimension). Batch of one is an error.
Mat permute_dims(const Mat& z, uint64_t seed);

// Mean discriminator logit = density-ratio estimate of the total
// correlation.
double tc_proxy(const Discriminator& disc, const Mat& z);

// Binary cross-entropy with z_joint labeled 1 and z_perm labeled 0
// (mean of the two per-example means).
double discriminator_loss(const Discriminator& disc, const Mat& z_joint,
                          const Mat& z_perm);

// Graph version used by the trainer's discriminator update.
Var discriminator_loss_vars(Tape& tape, const Discriminator& disc,
                            const Mat& z_joint, const Mat& z_perm);

// Per-dimension corrected prior t_{2*ahat}(0, bhat/ahat) for the
// hierarchical variants.
std::vector<StudentT> corrected_prior_report(const PriorSpec& prior);

// --- objectives -------------------------------------------------------------

// rec + beta * mean KL(q(z|x) || N(0,I)). beta = 1 is the plain VAE bound.
ObjectiveOut objective_vae(Tape& tape, const EncoderDecoder& model, const Mat& x,
                           double beta, uint64_t noise_seed);

// rec + mean KL(q||p) + gamma * tc. Prior is StdNormal (closed-form KL) or
// Mog (single-sample estimate E_q[log q - log p_mog]; mixture parameters
// receive gradients).
ObjectiveOut objective_fvae(Tape& tape, const EncoderDecoder& model,
                            const Discriminator& disc, const Mat& x,
                            double gamma, PriorSpec& prior, uint64_t noise_seed);

// rec + mean KL(q || N(0, 1/alpha)) + gamma * tc + eta * sum (1/alpha - 1)^2.
ObjectiveOut objective_bfvae0(Tape& tape, const EncoderDecoder& model,
                              const Discriminator& disc, const Mat& x,
                              PriorSpec& prior, double gamma, double eta,
                              uint64_t noise_seed);

// rec + hyper_scale * sum KL(q(alpha)||p(alpha)) + mean E_q(alpha) KL
// + gamma * tc. hyper_scale < 0 selects the default 1/n_dataset. The p(alpha)
// rate is tied to the shape (b = a - 1) so the prior mode stays at 1.
ObjectiveOut objective_bfvae1(Tape& tape, const EncoderDecoder& model,
                              const Discriminator& disc, const Mat& x,
                              PriorSpec& prior, double gamma, int n_dataset,
                              uint64_t noise_seed, double hyper_scale = -1.0);

// bfvae1 with the hyper-prior reparametrized by the relevance vector, the
// discriminator fed the masked latent r .* z, and the |r|_1 / entropy
// regularizers.
ObjectiveOut objective_bfvae2(Tape& tape, const EncoderDecoder& model,
                              const Discriminator& disc, const Mat& x,
                              PriorSpec& prior, double gamma, double eta_s,
                              double eta_h, int n_dataset, uint64_t noise_seed,
                              double hyper_scale = -1.0);

}  // namespace bfvae
