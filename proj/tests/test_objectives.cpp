// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bfvae/distributions.hpp"
#include "bfvae/objectives.hpp"
#include "bfvae/rng.hpp"
#include "oracle_utils.hpp"

using namespace bfvae;
using ad::Mat;
using ad::Parameter;
using ad::Tape;
using ad::Var;

namespace {

Mat random_obs(int b, int dim, uint64_t seed) {
  Rng rng(seed);
  Mat x(b, dim);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < dim; ++j) x(i, j) = rng.uniform();
  return x;
}

// toy model family for gradient checks: 3-pixel observations, d = 2,
// width-2 tanh trunks, width-2 discriminator (about 50 parameters total)
struct Toy {
  EncoderDecoder model{ArchSpec::mlp(3, 2, 2), 7};
  Discriminator disc{2, 2, 1, 9, Activation::Tanh};
  Mat x = random_obs(4, 3, 13);
};

std::vector<Parameter*> gather(Toy& t, PriorSpec& prior) {
  std::vector<Parameter*> ps = t.model.parameters();
  for (auto* p : t.disc.parameters()) ps.push_back(p);
  for (auto* p : prior.parameters()) ps.push_back(p);
  return ps;
}

template <typename BuildFn>
double objective_fd(std::vector<Parameter*> params, BuildFn build) {
  {
    Tape tape;
    ObjectiveOut out = build(tape);
    for (auto* p : params) p->zero_grad();
    tape.backward(out.total);
  }
  auto value = [&]() {
    Tape tape;
    return build(tape).breakdown.total;
  };
  return oracle::check_gradients(params, value, 1e-3, 1e-3).max_rel;
}

}  // namespace

TEST_CASE("encode: contract, determinism, batch independence") {
  EncoderDecoder model(ArchSpec::mlp(5, 8, 3), 1);
  Mat x = random_obs(6, 5, 2);
  GaussianPosterior q = model.encode(x);
  CHECK(q.mean.rows() == 6);
  CHECK(q.mean.cols() == 3);
  CHECK((q.std.array() > 0.0).all());

  GaussianPosterior q2 = model.encode(x);
  CHECK((q.mean - q2.mean).cwiseAbs().maxCoeff() == 0.0);

  Mat xp = x;
  xp(2, 0) = std::min(1.0, xp(2, 0) + 0.3);
  GaussianPosterior qp = model.encode(xp);
  for (int i = 0; i < 6; ++i) {
    const double diff = (qp.mean.row(i) - q.mean.row(i)).cwiseAbs().maxCoeff();
    if (i == 2)
      CHECK(diff > 0.0);
    else
      CHECK(diff == 0.0);
  }

  CHECK_THROWS_AS(model.encode(random_obs(2, 4, 3)), std::invalid_argument);
  CHECK_THROWS_AS(model.encode(Mat::Constant(2, 5, 1.5)), std::invalid_argument);
}

TEST_CASE("reparam_sample: mean recovery and determinism") {
  GaussianPosterior q{Mat::Constant(100000, 1, 0.7), Mat::Constant(100000, 1, 2.0)};
  Mat z = reparam_sample(q, 5);
  CHECK(z.col(0).mean() == doctest::Approx(0.7).epsilon(0.05));
  const double sd = std::sqrt((z.col(0).array() - z.col(0).mean()).square().mean());
  CHECK(sd == doctest::Approx(2.0).epsilon(0.02));
  Mat z2 = reparam_sample(q, 5);
  CHECK((z - z2).cwiseAbs().maxCoeff() == 0.0);
  GaussianPosterior bad{Mat::Zero(1, 1), Mat::Zero(1, 1)};
  CHECK_THROWS_AS(reparam_sample(bad, 1), std::domain_error);
}

TEST_CASE("rec_loss: attainable minimum and the log-2 logit-zero case") {
  // decoder-free check via bernoulli_ce is covered in autograd tests; here
  // exercise the op end to end on a tiny identity-ish model
  EncoderDecoder model(ArchSpec::mlp(3, 2, 2), 7);
  Mat x = random_obs(4, 3, 17);
  Mat z = Mat::Zero(4, 2);
  const double loss = rec_loss(model, x, z);
  CHECK(std::isfinite(loss));
  CHECK(loss >= 0.0);
  CHECK_THROWS_AS(rec_loss(model, Mat::Constant(4, 3, -0.1), z), std::invalid_argument);

  // per-pixel entropy是 the minimum: compare against the entropy of x
  // using a direct bernoulli_ce evaluation at logits = logit(x)
  Tape tape;
  Mat xc = x.unaryExpr([](double v) { return std::clamp(v, 0.05, 0.95); });
  Mat logits = xc.unaryExpr([](double v) { return std::log(v / (1.0 - v)); });
  const double at_logit = ad::bernoulli_ce(tape.constant(logits), xc).val()(0, 0);
  Mat other = logits.array() + 0.3;
  const double at_other = ad::bernoulli_ce(tape.constant(other), xc).val()(0, 0);
  CHECK(at_logit < at_other);
}

TEST_CASE("permute_dims: marginals preserved, batch=1 rejected, decorrelation") {
  Rng rng(23);
  Mat z(64, 3);
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 3; ++j) z(i, j) = rng.gaussian();
  Mat p = permute_dims(z, 99);
  for (int j = 0; j < 3; ++j) {
    std::vector<double> a(z.col(j).data(), z.col(j).data() + 64);
    std::vector<double> b(p.col(j).data(), p.col(j).data() + 64);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
  CHECK_THROWS_AS(permute_dims(Mat::Zero(1, 3), 1), std::invalid_argument);

  // perfectly correlated input decorrelates at B = 4096
  Mat corr(4096, 2);
  for (int i = 0; i < 4096; ++i) {
    const double g = rng.gaussian();
    corr(i, 0) = g;
    corr(i, 1) = g;
  }
  Mat pc = permute_dims(corr, 7);
  const double c01 =
      (pc.col(0).array() - pc.col(0).mean()).cwiseProduct(pc.col(1).array() - pc.col(1).mean()).mean() /
      (std::sqrt((pc.col(0).array() - pc.col(0).mean()).square().mean()) *
       std::sqrt((pc.col(1).array() - pc.col(1).mean()).square().mean()));
  CHECK(std::fabs(c01) < 0.1);
}

TEST_CASE("tc_proxy and discriminator_loss calibration points") {
  Discriminator disc(2, 4, 2, 3);
  // zero all parameters -> logit identically 0 -> chance
  for (auto* p : disc.parameters()) p->value.setZero();
  Mat z = random_obs(16, 2, 29);
  CHECK(tc_proxy(disc, z) == doctest::Approx(0.0));
  CHECK(discriminator_loss(disc, z, z) == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // saturated separation drives the loss toward 0: bias the output head
  Discriminator sep(1, 2, 1, 4);
  for (auto* p : sep.parameters()) p->value.setZero();
  // output = w * h + b with h = activation(0) = 0, so craft via bias only
  sep.parameters().back()->value.setConstant(30.0);   // out bias -> logit 30
  Mat joint = random_obs(8, 1, 31);
  Discriminator sep0(1, 2, 1, 4);
  for (auto* p : sep0.parameters()) p->value.setZero();
  sep0.parameters().back()->value.setConstant(-30.0);
  // loss with joint batch scored +30 (prob ~ 1): that half contributes ~0
  const double l = discriminator_loss(sep, joint, joint);
  const double l0 = discriminator_loss(sep0, joint, joint);
  // one half saturates correct, the other wrong; average of the two setups
  // with labels (1 on +30) and (0 on -30) approaches zero loss
  CHECK(0.5 * (l + l0) == doctest::Approx(15.0 + std::exp(-30.0)).epsilon(1e-6));

  Tape tape;
  CHECK_THROWS_AS(discriminator_loss_vars(tape, disc, Mat(0, 2), z),
                  std::invalid_argument);
}

TEST_CASE("objective_vae: beta wiring and breakdown identity") {
  Toy toy;
  Tape tape;
  ObjectiveOut b0 = objective_vae(tape, toy.model, toy.x, 0.0, 42);
  CHECK(b0.breakdown.total == doctest::Approx(b0.breakdown.rec).epsilon(1e-12));
  ObjectiveOut b1 = objective_vae(tape, toy.model, toy.x, 1.0, 42);
  CHECK(b1.breakdown.total ==
        doctest::Approx(b1.breakdown.rec + b1.breakdown.kl).epsilon(1e-9));
  ObjectiveOut b4 = objective_vae(tape, toy.model, toy.x, 4.0, 42);
  CHECK(b4.breakdown.total ==
        doctest::Approx(b4.breakdown.rec + 4.0 * b4.breakdown.kl).epsilon(1e-9));
  CHECK(b4.breakdown.weighted_sum() == doctest::Approx(b4.breakdown.total).epsilon(1e-9));
  // the kl part matches the closed form on the encoded posterior
  GaussianPosterior q = toy.model.encode(toy.x);
  double kl = 0.0;
  for (int i = 0; i < q.mean.rows(); ++i)
    kl += kl_gaussian_std(DiagGaussian(q.mean.row(i).array(), q.std.row(i).array())).sum();
  kl /= q.mean.rows();
  CHECK(b1.breakdown.kl == doctest::Approx(kl).epsilon(1e-9));
  CHECK_THROWS_AS(objective_vae(tape, toy.model, toy.x, -1.0, 1), std::domain_error);
}

TEST_CASE("reduction chain: bfvae0(alpha=1, eta=0) == fvae == vae + gamma tc") {
  Toy toy;
  const double gamma = 3.0;
  PriorSpec std_prior = PriorSpec::std_normal(2);
  PriorSpec prec = PriorSpec::precision(2, 1.0);

  Tape t1, t2, t3;
  ObjectiveOut fv = objective_fvae(t1, toy.model, toy.disc, toy.x, gamma, std_prior, 77);
  ObjectiveOut b0 = objective_bfvae0(t2, toy.model, toy.disc, toy.x, prec, gamma, 0.0, 77);
  ObjectiveOut va = objective_vae(t3, toy.model, toy.x, 1.0, 77);

  CHECK(b0.breakdown.total == doctest::Approx(fv.breakdown.total).epsilon(1e-9));
  CHECK(fv.breakdown.total ==
        doctest::Approx(va.breakdown.total + gamma * fv.breakdown.tc_proxy).epsilon(1e-9));
  CHECK(b0.breakdown.regularizers.at("eta_precision") == 0.0);
}

TEST_CASE("objective_fvae mog: K=1 standard mixture degenerates to closed form") {
  Toy toy;
  PriorSpec mog = PriorSpec::mog(2, 1, 5);
  mog.mog_means.value.setZero();
  mog.mog_logstd.value.setZero();
  PriorSpec std_prior = PriorSpec::std_normal(2);
  Tape t1, t2;
  ObjectiveOut m = objective_fvae(t1, toy.model, toy.disc, toy.x, 2.0, mog, 55);
  ObjectiveOut s = objective_fvae(t2, toy.model, toy.disc, toy.x, 2.0, std_prior, 55);
  // single-sample estimate vs closed form: same z, so compare rec/tc exactly
  CHECK(m.breakdown.rec == doctest::Approx(s.breakdown.rec).epsilon(1e-12));
  CHECK(m.breakdown.tc_proxy == doctest::Approx(s.breakdown.tc_proxy).epsilon(1e-12));
  // the KL estimate is unbiased for the closed form; on one batch allow slack
  CHECK(m.breakdown.kl == doctest::Approx(s.breakdown.kl).epsilon(1.0));
  PriorSpec wrong = PriorSpec::precision(2, 1.0);
  CHECK_THROWS_AS(objective_fvae(t1, toy.model, toy.disc, toy.x, 2.0, wrong, 1),
                  std::invalid_argument);
}

TEST_CASE("mog prior normalizes: 1-d K=3 quadrature") {
  PriorSpec mog = PriorSpec::mog(1, 3, 8);
  mog.mog_logits.value << 0.3, -0.2, 1.0;
  mog.mog_means.value << -1.0, 0.5, 2.0;
  mog.mog_logstd.value << 0.1, -0.3, 0.4;
  // evaluate log p_mog via the objective's own machinery: build a graph that
  // computes it for probe z values, using a tiny direct reimplementation
  Vec pis(3);
  double lse = 0.0;
  {
    double m = mog.mog_logits.value.maxCoeff();
    double s = 0.0;
    for (int k = 0; k < 3; ++k) s += std::exp(mog.mog_logits.value(0, k) - m);
    lse = m + std::log(s);
  }
  for (int k = 0; k < 3; ++k) pis[k] = std::exp(mog.mog_logits.value(0, k) - lse);
  const double mass = oracle::simpson(
      [&](double z) {
        double p = 0.0;
        for (int k = 0; k < 3; ++k)
          p += pis[k] * std::exp(oracle::log_normal_pdf(
                   z, mog.mog_means.value(k, 0), std::exp(mog.mog_logstd.value(k, 0))));
        return p;
      },
      -30.0, 30.0, 40000);
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(pis.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("objective_bfvae1: hyper term vanishes when q(alpha) equals the prior") {
  Toy toy;
  PriorSpec prior = PriorSpec::gamma_hier(2, 2.0, 2.0, 1.0);  // q = Gamma(2,1) = p
  Tape tape;
  ObjectiveOut out = objective_bfvae1(tape, toy.model, toy.disc, toy.x, prior, 1.0, 500, 3);
  CHECK(out.breakdown.hyper_kl == doctest::Approx(0.0).epsilon(1e-10));
  CHECK(out.breakdown.hyper_scale == doctest::Approx(1.0 / 500).epsilon(1e-15));
  CHECK(out.breakdown.weighted_sum() == doctest::Approx(out.breakdown.total).epsilon(1e-9));

  // concentrating posterior at alpha = 1 approaches the fvae KL term
  PriorSpec wide = PriorSpec::gamma_hier(2, 2.0, 1e6, 1e6);
  Tape t2;
  ObjectiveOut big = objective_bfvae1(t2, toy.model, toy.disc, toy.x, wide, 1.0, 500, 3);
  PriorSpec std_prior = PriorSpec::std_normal(2);
  Tape t3;
  ObjectiveOut fv = objective_fvae(t3, toy.model, toy.disc, toy.x, 1.0, std_prior, 3);
  CHECK(big.breakdown.kl == doctest::Approx(fv.breakdown.kl).epsilon(1e-5));
}

TEST_CASE("objective_bfvae2: relevance wiring") {
  Toy toy;
  // r ~ 1 with eta_s = eta_h = 0 recovers bfvae1 under the near-flat prior
  PriorSpec rel = PriorSpec::relevance(2, 1.0 - 1e-9, 1e-3, 1.0, 1.0);
  PriorSpec hier = PriorSpec::gamma_hier(2, 1.0 + 1e-3 / (1.0 + 1e-3), 1.0, 1.0);
  Tape t1, t2;
  ObjectiveOut a = objective_bfvae2(t1, toy.model, toy.disc, toy.x, rel, 2.0, 0.0, 0.0,
                                    400, 9);
  ObjectiveOut b = objective_bfvae1(t2, toy.model, toy.disc, toy.x, hier, 2.0, 400, 9);
  CHECK(a.breakdown.total == doctest::Approx(b.breakdown.total).epsilon(1e-3));

  // r = 0: the masked latent is the zero vector, tc = logit(D(0))
  PriorSpec rel0 = PriorSpec::relevance(2, 1e-12, 1e-3, 1.0, 1.0);
  rel0.rho.value.setConstant(-40.0);  // sigmoid -> ~0
  Tape t3;
  ObjectiveOut z = objective_bfvae2(t3, toy.model, toy.disc, toy.x, rel0, 2.0, 0.1, 0.1,
                                    400, 9);
  const double d0 = toy.disc.logits(Mat::Zero(1, 2))(0, 0);
  CHECK(z.breakdown.tc_proxy == doctest::Approx(d0).epsilon(1e-9));

  // regularizer entries match |r|_1 and the entropy exactly
  PriorSpec rel_half = PriorSpec::relevance(2, 0.5, 1e-3, 1.0, 1.0);
  Tape t4;
  ObjectiveOut h = objective_bfvae2(t4, toy.model, toy.disc, toy.x, rel_half, 2.0, 3.0,
                                    5.0, 400, 9);
  const Vec r = rel_half.relevance_vector().r;
  CHECK(h.breakdown.regularizers.at("eta_s_l1") ==
        doctest::Approx(3.0 * r.sum()).epsilon(1e-12));
  CHECK(h.breakdown.regularizers.at("eta_h_entropy") ==
        doctest::Approx(5.0 * entropic_regularizer(rel_half.relevance_vector()))
            .epsilon(1e-9));
}

TEST_CASE("masking consistency: r_j = 0 kills the discriminator path for z_j") {
  Discriminator disc(3, 4, 2, 11);
  Tape tape;
  Mat zval = random_obs(5, 3, 33);
  Var z = tape.leaf(zval);
  Mat rv(1, 3);
  rv << 0.0, 0.7, 0.3;
  Var masked = ad::mul_rowvec(z, tape.constant(rv));
  Var tc = ad::scale(ad::sum(disc.logits_vars(tape, masked)), 1.0 / 5.0);
  tape.backward(tc);
  const Mat& g = z.grad();
  CHECK(g.col(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(g.col(1).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("corrected_prior_report: mapping and length") {
  PriorSpec prior = PriorSpec::gamma_hier(3, 2.0, 1.0, 1.0);
  auto rep = corrected_prior_report(prior);
  CHECK(rep.size() == 3);
  CHECK(rep[0].dof == doctest::Approx(2.0));
  CHECK(rep[0].shape_scale == doctest::Approx(1.0));
  prior.log_ahat.value.setConstant(std::log(1e6));
  prior.log_bhat.value.setConstant(std::log(1e6));
  rep = corrected_prior_report(prior);
  CHECK(rep[1].dof == doctest::Approx(2e6));
  CHECK(rep[1].shape_scale == doctest::Approx(1.0));
}

TEST_CASE("gradient suite: all objectives pass central differences on toy models") {
  Toy toy;

  SUBCASE("vae beta=1") {
    auto ps = toy.model.parameters();
    CHECK(objective_fd(ps, [&](Tape& t) {
            return objective_vae(t, toy.model, toy.x, 1.0, 101);
          }) < 1e-3);
  }
  SUBCASE("beta-vae beta=4") {
    auto ps = toy.model.parameters();
    CHECK(objective_fd(ps, [&](Tape& t) {
            return objective_vae(t, toy.model, toy.x, 4.0, 102);
          }) < 1e-3);
  }
  SUBCASE("fvae std prior") {
    PriorSpec prior = PriorSpec::std_normal(2);
    Toy t2;
    auto ps = gather(t2, prior);
    CHECK(objective_fd(ps, [&](Tape& t) {
            return objective_fvae(t, t2.model, t2.disc, t2.x, 1.5, prior, 103);
          }) < 1e-3);
  }
  SUBCASE("fvae mog prior") {
    Toy t2;
    PriorSpec prior = PriorSpec::mog(2, 3, 6);
    auto ps = gather(t2, prior);
    CHECK(objective_fd(ps, [&](Tape& t) {
            return objective_fvae(t, t2.model, t2.disc, t2.x, 1.5, prior, 104);
          }) < 1e-3);
  }
  SUBCASE("bfvae0") {
    Toy t2;
    PriorSpec prior = PriorSpec::precision(2, 1.3);
    auto ps = gather(t2, prior);
    CHECK(objective_fd(ps, [&](Tape& t) {
            return objective_bfvae0(t, t2.model, t2.disc, t2.x, prior, 1.5, 0.7, 105);
          }) < 1e-3);
  }
  SUBCASE("bfvae1") {
    Toy t2;
    PriorSpec prior = PriorSpec::gamma_hier(2, 2.5, 1.7, 0.9);
    auto ps = gather(t2, prior);
    CHECK(objective_fd(ps, [&](Tape& t) {
            return objective_bfvae1(t, t2.model, t2.disc, t2.x, prior, 1.5, 37, 106);
          }) < 1e-3);
  }
  SUBCASE("bfvae2") {
    Toy t2;
    PriorSpec prior = PriorSpec::relevance(2, 0.6, 1e-3, 1.4, 1.1);
    auto ps = gather(t2, prior);
    CHECK(objective_fd(ps, [&](Tape& t) {
            return objective_bfvae2(t, t2.model, t2.disc, t2.x, prior, 1.5, 0.3, 0.4,
                                    37, 107);
          }) < 1e-3);
  }
}

TEST_CASE("property: objectives stay finite over random configurations") {
  Rng rng(71);
  for (int i = 0; i < 1000; ++i) {
    const uint64_t seed = 1000 + static_cast<uint64_t>(i);
    EncoderDecoder model(ArchSpec::mlp(3, 2, 2), seed);
    Discriminator disc(2, 2, 1, seed + 1);
    Mat x = random_obs(3, 3, seed + 2);
    Tape tape;
    ObjectiveOut out;
    // the prior must outlive backward(): its Parameters are bound to the tape
    PriorSpec prior = PriorSpec::std_normal(2);
    switch (i % 6) {
      case 0: out = objective_vae(tape, model, x, rng.uniform(0, 5), seed); break;
      case 1:
        out = objective_fvae(tape, model, disc, x, rng.uniform(0, 8), prior, seed);
        break;
      case 2:
        prior = PriorSpec::mog(2, 1 + static_cast<int>(rng.index(4)), seed);
        out = objective_fvae(tape, model, disc, x, rng.uniform(0, 8), prior, seed);
        break;
      case 3:
        prior = PriorSpec::precision(2, rng.uniform(0.2, 5));
        out = objective_bfvae0(tape, model, disc, x, prior, rng.uniform(0, 8),
                               rng.uniform(0, 20), seed);
        break;
      case 4:
        prior = PriorSpec::gamma_hier(2, rng.uniform(1.1, 8), rng.uniform(0.3, 8),
                                      rng.uniform(0.3, 8));
        out = objective_bfvae1(tape, model, disc, x, prior, rng.uniform(0, 8), 200, seed);
        break;
      default:
        prior = PriorSpec::relevance(2, rng.uniform(0.05, 0.95), 1e-3,
                                     rng.uniform(0.3, 8), rng.uniform(0.3, 8));
        out = objective_bfvae2(tape, model, disc, x, prior, rng.uniform(0, 8),
                               rng.uniform(0, 2), rng.uniform(0, 2), 200, seed);
        break;
    }
    REQUIRE(std::isfinite(out.breakdown.total));
    tape.backward(out.total);
    for (auto* p : model.parameters()) REQUIRE(p->grad.allFinite());
  }
}
