// SPDX-License-Identifier: Apache-2.0
#include "bfvae/objectives.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bfvae/special.hpp"

namespace bfvae {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // log(2*pi)/2

// Stream labels for deriving per-purpose seeds from noise_seed.
enum Stream : uint64_t { kXi = 1, kPerm = 2, kMogInit = 3 };

Mat gaussian_noise(Eigen::Index rows, Eigen::Index cols, uint64_t seed) {
  Rng rng(seed);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.gaussian();
  return m;
}

struct EncodedBatch {
  EncoderDecoder::EncOut enc;
  Var z;
  Mat xi;
};

EncodedBatch encode_and_sample(Tape& tape, const EncoderDecoder& model,
                               const Mat& x, uint64_t noise_seed) {
  EncodedBatch eb;
  eb.enc = model.encode_vars(tape, x);
  eb.xi = gaussian_noise(x.rows(), model.latent_dim(),
                         derive_seed(noise_seed, kXi));
  eb.z = ad::add(eb.enc.mean, ad::mul(eb.enc.std, tape.constant(eb.xi)));
  return eb;
}

Var rec_vars(Tape& tape, const EncoderDecoder& model, const Mat& x, const Var& z) {
  return ad::bernoulli_ce(model.decode_vars(tape, z), x);
}

// mean over batch of sum_j KL( N(m,s^2) || N(0,1) )
Var kl_std_vars(Tape& tape, const EncoderDecoder::EncOut& e) {
  (void)tape;
  Var t1 = ad::add(ad::square(e.mean), ad::square(e.std));
  Var t2 = ad::add_const(ad::scale(e.logstd, -2.0), -1.0);
  Var kl_mat = ad::add(t1, t2);
  return ad::scale(ad::sum(kl_mat), 0.5 / static_cast<double>(e.mean.rows()));
}

// mean over batch of sum_j KL( N(m,s^2) || N(0, 1/alpha_j) )
Var kl_precision_vars(Tape& tape, const EncoderDecoder::EncOut& e,
                      const Var& alpha, const Var& log_alpha) {
  (void)tape;
  Var t1 = ad::mul_rowvec(ad::add(ad::square(e.mean), ad::square(e.std)), alpha);
  Var t2 = ad::sub_rowvec(t1, log_alpha);
  Var kl_mat = ad::add(t2, ad::add_const(ad::scale(e.logstd, -2.0), -1.0));
  return ad::scale(ad::sum(kl_mat), 0.5 / static_cast<double>(e.mean.rows()));
}

// mean over batch of sum_j E_{alpha ~ Gamma(ahat, bhat)} KL;
// E[alpha] = ahat/bhat, E[log alpha] = psi(ahat) - log bhat.
Var kl_expected_vars(Tape& tape, const EncoderDecoder::EncOut& e,
                     const Var& log_ahat, const Var& log_bhat) {
  (void)tape;
  Var mean_alpha = ad::exp(ad::sub(log_ahat, log_bhat));
  Var mean_log_alpha = ad::sub(ad::digamma(ad::exp(log_ahat)), log_bhat);
  Var t1 = ad::mul_rowvec(ad::add(ad::square(e.mean), ad::square(e.std)), mean_alpha);
  Var t2 = ad::sub_rowvec(t1, mean_log_alpha);
  Var kl_mat = ad::add(t2, ad::add_const(ad::scale(e.logstd, -2.0), -1.0));
  return ad::scale(ad::sum(kl_mat), 0.5 / static_cast<double>(e.mean.rows()));
}

// sum_j KL( Gamma(ahat, bhat) || Gamma(a, b) ); all inputs 1 x d.
Var kl_gamma_vars(Tape& tape, const Var& log_ahat, const Var& log_bhat,
                  const Var& a, const Var& b, const Var& log_b) {
  (void)tape;
  Var ahat = ad::exp(log_ahat);
  Var term1 = ad::mul(ad::sub(ahat, a), ad::digamma(ahat));
  Var term2 = ad::sub(ad::lgamma(a), ad::lgamma(ahat));
  Var term3 = ad::mul(a, ad::sub(log_bhat, log_b));
  // ahat * (b - bhat) / bhat = b * ahat/bhat - ahat
  Var term4 = ad::sub(ad::mul(b, ad::exp(ad::sub(log_ahat, log_bhat))), ahat);
  return ad::sum(ad::add(ad::add(term1, term2), ad::add(term3, term4)));
}

Var tc_vars(Tape& tape, const Discriminator& disc, const Var& z) {
  Var logits = disc.logits_vars(tape, z);
  return ad::scale(ad::sum(logits), 1.0 / static_cast<double>(z.rows()));
}

// Single-sample estimate of mean_b [ log q(z|x) - log p_mog(z) ].
Var mog_kl_vars(Tape& tape, const EncodedBatch& eb, PriorSpec& prior) {
  const Eigen::Index B = eb.xi.rows();
  const int d = static_cast<int>(eb.xi.cols());
  // log q(z|x) at z = m + s xi reduces to sum_j [-log s_j - xi_j^2/2 - log(2pi)/2]
  Mat qconst = (-0.5 * eb.xi.array().square() - kHalfLog2Pi).matrix();
  Var lq = ad::rowsum(ad::add_constmat(ad::neg(eb.enc.logstd), qconst));

  Var logits = tape.param(prior.mog_logits);  // 1 x K
  // reduce the row: log sum_k exp(logit_k), max-stabilized
  const double lmax = logits.val().maxCoeff();
  Var lse = ad::add_const(
      ad::log(ad::sum(ad::exp(ad::add_const(logits, -lmax)))), lmax);

  Var means = tape.param(prior.mog_means);    // K x d
  Var logstd = tape.param(prior.mog_logstd);  // K x d
  std::vector<Var> items;
  items.reserve(prior.mog_k);
  for (int k = 0; k < prior.mog_k; ++k) {
    Var mu_k = ad::block(means, k, 0, 1, d);
    Var ls_k = ad::block(logstd, k, 0, 1, d);
    Var diff = ad::sub_rowvec(eb.z, mu_k);
    Var standardized = ad::mul_rowvec(diff, ad::exp(ad::neg(ls_k)));
    Var comp = ad::add_const(
        ad::sub_rowvec(ad::scale(ad::square(standardized), -0.5), ls_k),
        -kHalfLog2Pi);
    Var log_pi_k = ad::sub(ad::block(logits, 0, k, 1, 1), lse);
    items.push_back(ad::add_scalar_var(ad::rowsum(comp), log_pi_k));
  }
  Var lp = ad::logsumexp(items);
  return ad::scale(ad::sum(ad::sub(lq, lp)), 1.0 / static_cast<double>(B));
}

double scalar(const Var& v) { return v.val()(0, 0); }

}  // namespace

// --- PriorSpec ---------------------------------------------------------------

PriorSpec PriorSpec::std_normal(int d) {
  PriorSpec p;
  p.kind = Kind::StdNormal;
  p.dim = d;
  return p;
}

PriorSpec PriorSpec::precision(int d, double alpha0) {
  if (!(alpha0 > 0.0)) throw std::domain_error("PriorSpec: alpha0 must be > 0");
  PriorSpec p;
  p.kind = Kind::Precision;
  p.dim = d;
  p.log_alpha = Parameter("prior.log_alpha", Mat::Constant(1, d, std::log(alpha0)));
  return p;
}

PriorSpec PriorSpec::precision_from(const Vec& alpha) {
  if (!(alpha > 0.0).all()) throw std::domain_error("PriorSpec: alpha must be > 0");
  PriorSpec p;
  p.kind = Kind::Precision;
  p.dim = static_cast<int>(alpha.size());
  Mat la(1, p.dim);
  for (int j = 0; j < p.dim; ++j) la(0, j) = std::log(alpha[j]);
  p.log_alpha = Parameter("prior.log_alpha", la);
  return p;
}

namespace {
// inverse of a = 1 + softplus(raw)
double softplus_inverse(double y) {
  if (!(y > 0.0)) throw std::domain_error("softplus_inverse: y must be > 0");
  return y > 30.0 ? y : std::log(std::expm1(y));
}
}  // namespace

PriorSpec PriorSpec::gamma_hier(int d, double a0, double ahat0, double bhat0) {
  if (!(a0 > 1.0)) throw std::domain_error("PriorSpec: prior shape a must be > 1");
  if (!(ahat0 > 0.0) || !(bhat0 > 0.0))
    throw std::domain_error("PriorSpec: posterior params must be > 0");
  PriorSpec p;
  p.kind = Kind::GammaHier;
  p.dim = d;
  p.raw_a = Parameter("prior.raw_a", Mat::Constant(1, d, softplus_inverse(a0 - 1.0)));
  p.log_ahat = Parameter("prior.log_ahat", Mat::Constant(1, d, std::log(ahat0)));
  p.log_bhat = Parameter("prior.log_bhat", Mat::Constant(1, d, std::log(bhat0)));
  return p;
}

PriorSpec PriorSpec::relevance(int d, double r0, double eps, double ahat0,
                               double bhat0) {
  if (!(r0 > 0.0 && r0 < 1.0))
    throw std::domain_error("PriorSpec: initial relevance must lie in (0,1)");
  if (!(eps > 0.0)) throw std::domain_error("PriorSpec: epsilon must be > 0");
  PriorSpec p;
  p.kind = Kind::Relevance;
  p.dim = d;
  p.epsilon = eps;
  p.rho = Parameter("prior.rho", Mat::Constant(1, d, std::log(r0 / (1.0 - r0))));
  p.log_ahat = Parameter("prior.log_ahat", Mat::Constant(1, d, std::log(ahat0)));
  p.log_bhat = Parameter("prior.log_bhat", Mat::Constant(1, d, std::log(bhat0)));
  return p;
}

PriorSpec PriorSpec::mog(int d, int K, uint64_t seed) {
  if (K < 1) throw std::domain_error("PriorSpec: mixture order must be >= 1");
  PriorSpec p;
  p.kind = Kind::Mog;
  p.dim = d;
  p.mog_k = K;
  p.mog_logits = Parameter("prior.mog_logits", Mat::Zero(1, K));
  // small random spread so components are not degenerate copies
  p.mog_means = Parameter("prior.mog_means",
                          0.1 * gaussian_noise(K, d, derive_seed(seed, kMogInit)));
  p.mog_logstd = Parameter("prior.mog_logstd", Mat::Zero(K, d));
  return p;
}

std::vector<Parameter*> PriorSpec::parameters() {
  switch (kind) {
    case Kind::StdNormal:
      return {};
    case Kind::Precision:
      return {&log_alpha};
    case Kind::GammaHier:
      return {&raw_a, &log_ahat, &log_bhat};
    case Kind::Relevance:
      return {&rho, &log_ahat, &log_bhat};
    case Kind::Mog:
      return {&mog_logits, &mog_means, &mog_logstd};
  }
  return {};
}

Vec PriorSpec::alpha() const {
  if (kind != Kind::Precision) throw std::logic_error("PriorSpec: no alpha");
  return log_alpha.value.row(0).array().exp();
}

Vec PriorSpec::a() const {
  if (kind != Kind::GammaHier) throw std::logic_error("PriorSpec: no prior shape a");
  return 1.0 + raw_a.value.row(0).array().unaryExpr(
                   [](double x) { return bfvae::softplus(x); });
}

GammaParams PriorSpec::qalpha() const {
  if (kind != Kind::GammaHier && kind != Kind::Relevance)
    throw std::logic_error("PriorSpec: no Gamma posterior");
  return GammaParams(log_ahat.value.row(0).array().exp(),
                     log_bhat.value.row(0).array().exp());
}

RelevanceVector PriorSpec::relevance_vector() const {
  if (kind != Kind::Relevance) throw std::logic_error("PriorSpec: no relevance");
  return RelevanceVector(
      rho.value.row(0).array().unaryExpr([](double x) { return bfvae::sigmoid(x); }),
      epsilon);
}

// --- LossBreakdown ------------------------------------------------------------

double LossBreakdown::weighted_sum() const {
  double s = rec + beta * kl + gamma * tc_proxy + hyper_scale * hyper_kl;
  for (const auto& [name, v] : regularizers) s += v;
  return s;
}

// --- plumbing ops --------------------------------------------------------------

Mat reparam_sample(const GaussianPosterior& q, uint64_t seed) {
  if (q.mean.rows() != q.std.rows() || q.mean.cols() != q.std.cols())
    throw std::invalid_argument("reparam_sample: mean/std shape mismatch");
  if ((q.std.array() <= 0.0).any())
    throw std::domain_error("reparam_sample: std must be strictly positive");
  Mat xi = gaussian_noise(q.mean.rows(), q.mean.cols(), derive_seed(seed, kXi));
  return q.mean + q.std.cwiseProduct(xi);
}

double rec_loss(const EncoderDecoder& model, const Mat& x, const Mat& z) {
  Tape tape;
  return scalar(rec_vars(tape, model, x, tape.constant(z)));
}

Mat permute_dims(const Mat& z, uint64_t seed) {
  const Eigen::Index B = z.rows();
  if (B < 2) throw std::invalid_argument("permute_dims: batch must be >= 2");
  Mat out(B, z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    Rng rng(derive_seed(seed, kPerm, static_cast<uint64_t>(j)));
    auto p = rng.permutation(static_cast<size_t>(B));
    for (Eigen::Index i = 0; i < B; ++i)
      out(i, j) = z(static_cast<Eigen::Index>(p[static_cast<size_t>(i)]), j);
  }
  return out;
}

double tc_proxy(const Discriminator& disc, const Mat& z) {
  return disc.logits(z).mean();
}

Var discriminator_loss_vars(Tape& tape, const Discriminator& disc,
                            const Mat& z_joint, const Mat& z_perm) {
  if (z_joint.rows() == 0 || z_perm.rows() == 0)
    throw std::invalid_argument("discriminator_loss: both batches must be present");
  // one stacked pass keeps the GEMMs large
  Mat stacked(z_joint.rows() + z_perm.rows(), z_joint.cols());
  stacked.topRows(z_joint.rows()) = z_joint;
  stacked.bottomRows(z_perm.rows()) = z_perm;
  Var logits = disc.logits_vars(tape, tape.constant(stacked));
  Var a = ad::bernoulli_ce(ad::block(logits, 0, 0, z_joint.rows(), 1),
                           Mat::Ones(z_joint.rows(), 1));
  Var b = ad::bernoulli_ce(ad::block(logits, z_joint.rows(), 0, z_perm.rows(), 1),
                           Mat::Zero(z_perm.rows(), 1));
  return ad::scale(ad::add(a, b), 0.5);
}

double discriminator_loss(const Discriminator& disc, const Mat& z_joint,
                          const Mat& z_perm) {
  Tape tape;
  return scalar(discriminator_loss_vars(tape, disc, z_joint, z_perm));
}

std::vector<StudentT> corrected_prior_report(const PriorSpec& prior) {
  GammaParams q = prior.qalpha();
  std::vector<StudentT> out;
  out.reserve(static_cast<size_t>(q.dim()));
  for (Eigen::Index j = 0; j < q.dim(); ++j)
    out.emplace_back(2.0 * q.shape[j], q.rate[j] / q.shape[j]);
  return out;
}

// --- objectives -----------------------------------------------------------------

ObjectiveOut objective_vae(Tape& tape, const EncoderDecoder& model, const Mat& x,
                           double beta, uint64_t noise_seed) {
  if (beta < 0.0) throw std::domain_error("objective_vae: beta must be >= 0");
  auto eb = encode_and_sample(tape, model, x, noise_seed);
  Var rec = rec_vars(tape, model, x, eb.z);
  Var kl = kl_std_vars(tape, eb.enc);
  Var total = ad::add(rec, ad::scale(kl, beta));

  ObjectiveOut out;
  out.total = total;
  out.z_sample = eb.z.val();
  out.breakdown.rec = scalar(rec);
  out.breakdown.kl = scalar(kl);
  out.breakdown.beta = beta;
  out.breakdown.total = scalar(total);
  return out;
}

ObjectiveOut objective_fvae(Tape& tape, const EncoderDecoder& model,
                            const Discriminator& disc, const Mat& x,
                            double gamma, PriorSpec& prior, uint64_t noise_seed) {
  if (gamma < 0.0) throw std::domain_error("objective_fvae: gamma must be >= 0");
  if (prior.kind != PriorSpec::Kind::StdNormal && prior.kind != PriorSpec::Kind::Mog)
    throw std::invalid_argument("objective_fvae: prior must be std_normal or mog");
  auto eb = encode_and_sample(tape, model, x, noise_seed);
  Var rec = rec_vars(tape, model, x, eb.z);
  Var kl = prior.kind == PriorSpec::Kind::StdNormal
               ? kl_std_vars(tape, eb.enc)
               : mog_kl_vars(tape, eb, prior);
  Var tc = tc_vars(tape, disc, eb.z);
  Var total = ad::add(ad::add(rec, kl), ad::scale(tc, gamma));

  ObjectiveOut out;
  out.total = total;
  out.z_sample = eb.z.val();
  out.breakdown.rec = scalar(rec);
  out.breakdown.kl = scalar(kl);
  out.breakdown.tc_proxy = scalar(tc);
  out.breakdown.gamma = gamma;
  out.breakdown.total = scalar(total);
  return out;
}

ObjectiveOut objective_bfvae0(Tape& tape, const EncoderDecoder& model,
                              const Discriminator& disc, const Mat& x,
                              PriorSpec& prior, double gamma, double eta,
                              uint64_t noise_seed) {
  if (prior.kind != PriorSpec::Kind::Precision)
    throw std::invalid_argument("objective_bfvae0: prior must be precision");
  auto eb = encode_and_sample(tape, model, x, noise_seed);
  Var rec = rec_vars(tape, model, x, eb.z);
  Var log_alpha = tape.param(prior.log_alpha);
  Var alpha = ad::exp(log_alpha);
  Var kl = kl_precision_vars(tape, eb.enc, alpha, log_alpha);
  Var tc = tc_vars(tape, disc, eb.z);
  // eta * sum_j (1/alpha_j - 1)^2
  Var inv_alpha = ad::exp(ad::neg(log_alpha));
  Var reg = ad::scale(ad::sum(ad::square(ad::add_const(inv_alpha, -1.0))), eta);
  Var total = ad::add(ad::add(rec, kl), ad::add(ad::scale(tc, gamma), reg));

  ObjectiveOut out;
  out.total = total;
  out.z_sample = eb.z.val();
  out.breakdown.rec = scalar(rec);
  out.breakdown.kl = scalar(kl);
  out.breakdown.tc_proxy = scalar(tc);
  out.breakdown.gamma = gamma;
  out.breakdown.regularizers["eta_precision"] = scalar(reg);
  out.breakdown.total = scalar(total);
  return out;
}

ObjectiveOut objective_bfvae1(Tape& tape, const EncoderDecoder& model,
                              const Discriminator& disc, const Mat& x,
                              PriorSpec& prior, double gamma, int n_dataset,
                              uint64_t noise_seed, double hyper_scale) {
  if (prior.kind != PriorSpec::Kind::GammaHier)
    throw std::invalid_argument("objective_bfvae1: prior must be gamma_hier");
  if (n_dataset < 1) throw std::invalid_argument("objective_bfvae1: n_dataset < 1");
  (void)prior.a();  // validates a > 1
  const double hscale = hyper_scale < 0.0 ? 1.0 / n_dataset : hyper_scale;

  auto eb = encode_and_sample(tape, model, x, noise_seed);
  Var rec = rec_vars(tape, model, x, eb.z);
  Var log_ahat = tape.param(prior.log_ahat);
  Var log_bhat = tape.param(prior.log_bhat);
  Var kl = kl_expected_vars(tape, eb.enc, log_ahat, log_bhat);

  Var a = ad::add_const(ad::softplus(tape.param(prior.raw_a)), 1.0);
  Var b = ad::add_const(a, -1.0);  // rate tied to shape: mode stays at 1
  Var log_b = ad::log(b);
  Var hyper = kl_gamma_vars(tape, log_ahat, log_bhat, a, b, log_b);

  Var tc = tc_vars(tape, disc, eb.z);
  Var total = ad::add(ad::add(rec, kl),
                      ad::add(ad::scale(hyper, hscale), ad::scale(tc, gamma)));

  ObjectiveOut out;
  out.total = total;
  out.z_sample = eb.z.val();
  out.breakdown.rec = scalar(rec);
  out.breakdown.kl = scalar(kl);
  out.breakdown.tc_proxy = scalar(tc);
  out.breakdown.hyper_kl = scalar(hyper);
  out.breakdown.gamma = gamma;
  out.breakdown.hyper_scale = hscale;
  out.breakdown.total = scalar(total);
  return out;
}

ObjectiveOut objective_bfvae2(Tape& tape, const EncoderDecoder& model,
                              const Discriminator& disc, const Mat& x,
                              PriorSpec& prior, double gamma, double eta_s,
                              double eta_h, int n_dataset, uint64_t noise_seed,
                              double hyper_scale) {
  if (prior.kind != PriorSpec::Kind::Relevance)
    throw std::invalid_argument("objective_bfvae2: prior must be relevance");
  if (n_dataset < 1) throw std::invalid_argument("objective_bfvae2: n_dataset < 1");
  const double hscale = hyper_scale < 0.0 ? 1.0 / n_dataset : hyper_scale;
  const double eps = prior.epsilon;

  auto eb = encode_and_sample(tape, model, x, noise_seed);
  Var rec = rec_vars(tape, model, x, eb.z);
  Var log_ahat = tape.param(prior.log_ahat);
  Var log_bhat = tape.param(prior.log_bhat);
  Var kl = kl_expected_vars(tape, eb.enc, log_ahat, log_bhat);

  Var r = ad::sigmoid(tape.param(prior.rho));  // 1 x d in (0,1)
  // hyper prior induced by r: shape g = (1+2eps)/(r+eps), rate g-1
  Var g = ad::scale(ad::exp(ad::neg(ad::log(ad::add_const(r, eps)))), 1.0 + 2.0 * eps);
  Var gb = ad::add_const(g, -1.0);
  Var hyper = kl_gamma_vars(tape, log_ahat, log_bhat, g, gb, ad::log(gb));

  Var masked = ad::mul_rowvec(eb.z, r);
  Var tc = tc_vars(tape, disc, masked);

  Var l1 = ad::scale(ad::sum(r), eta_s);  // r >= 0, so |r|_1 = sum r
  Var rc = ad::clamp_st(r, 1e-12, 1.0 - 1e-12);
  Var one_minus = ad::add_const(ad::neg(rc), 1.0);
  Var ent_mat = ad::neg(ad::add(ad::mul(rc, ad::log(rc)),
                                ad::mul(one_minus, ad::log(one_minus))));
  Var ent = ad::scale(ad::sum(ent_mat), eta_h);

  Var total = ad::add(ad::add(ad::add(rec, kl), ad::scale(hyper, hscale)),
                      ad::add(ad::scale(tc, gamma), ad::add(l1, ent)));

  ObjectiveOut out;
  out.total = total;
  out.z_sample = eb.z.val();
  out.breakdown.rec = scalar(rec);
  out.breakdown.kl = scalar(kl);
  out.breakdown.tc_proxy = scalar(tc);
  out.breakdown.hyper_kl = scalar(hyper);
  out.breakdown.gamma = gamma;
  out.breakdown.hyper_scale = hscale;
  out.breakdown.regularizers["eta_s_l1"] = scalar(l1);
  out.breakdown.regularizers["eta_h_entropy"] = scalar(ent);
  out.breakdown.total = scalar(total);
  return out;
}

}  // namespace bfvae
