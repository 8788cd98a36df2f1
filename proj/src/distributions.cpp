// SPDX-License-Identifier: Apache-2.0
#include "bfvae/distributions.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "bfvae/special.hpp"

namespace bfvae {

namespace {

void require(bool ok, const char* msg) {
  if (!ok) throw std::domain_error(msg);
}

void require_same_dim(Eigen::Index a, Eigen::Index b, const char* msg) {
  if (a != b) throw std::invalid_argument(msg);
}

}  // namespace

DiagGaussian::DiagGaussian(Vec m, Vec s) : mean(std::move(m)), std(std::move(s)) {
  require_same_dim(mean.size(), std.size(), "DiagGaussian: mean/std length mismatch");
  require((std > 0.0).all() && std.isFinite().all() && mean.isFinite().all(),
          "DiagGaussian: std must be strictly positive and finite");
}

GammaParams::GammaParams(Vec shape_, Vec rate_)
    : shape(std::move(shape_)), rate(std::move(rate_)) {
  require_same_dim(shape.size(), rate.size(), "GammaParams: shape/rate length mismatch");
  require((shape > 0.0).all() && (rate > 0.0).all() && shape.isFinite().all() &&
              rate.isFinite().all(),
          "GammaParams: shape and rate must be strictly positive");
}

StudentT::StudentT(double dof_, double shape_scale_) : dof(dof_), shape_scale(shape_scale_) {
  require(dof > 0.0 && std::isfinite(dof), "StudentT: dof must be > 0");
  require(shape_scale > 0.0 && std::isfinite(shape_scale), "StudentT: shape_scale must be > 0");
}

RelevanceVector::RelevanceVector(Vec r_, double epsilon_) : r(std::move(r_)), epsilon(epsilon_) {
  require((r >= 0.0).all() && (r <= 1.0).all(), "RelevanceVector: r entries must lie in [0,1]");
  require(epsilon > 0.0, "RelevanceVector: epsilon must be > 0");
}

Vec kl_gaussian_std(const DiagGaussian& q) {
  const Vec s2 = q.std.square();
  return 0.5 * (q.mean.square() + s2 - s2.log() - 1.0);
}

Vec kl_gaussian_precision(const DiagGaussian& q, const Vec& alpha) {
  require_same_dim(q.dim(), alpha.size(), "kl_gaussian_precision: alpha length mismatch");
  require((alpha > 0.0).all(), "kl_gaussian_precision: alpha must be > 0");
  const Vec s2 = q.std.square();
  return 0.5 * (alpha * (q.mean.square() + s2) - alpha.log() - s2.log() - 1.0);
}

Vec expected_kl_under_gamma(const DiagGaussian& q, const GammaParams& qalpha) {
  require_same_dim(q.dim(), qalpha.dim(), "expected_kl_under_gamma: dim mismatch");
  const Vec s2 = q.std.square();
  const Vec mean_alpha = qalpha.shape / qalpha.rate;
  Vec mean_log_alpha(qalpha.dim());
  for (Eigen::Index j = 0; j < qalpha.dim(); ++j)
    mean_log_alpha[j] = digamma(qalpha.shape[j]) - std::log(qalpha.rate[j]);
  return 0.5 * (mean_alpha * (q.mean.square() + s2) - mean_log_alpha - s2.log() - 1.0);
}

Vec kl_gamma_gamma(const GammaParams& qalpha, const GammaParams& palpha) {
  require_same_dim(qalpha.dim(), palpha.dim(), "kl_gamma_gamma: dim mismatch");
  Vec out(qalpha.dim());
  for (Eigen::Index j = 0; j < qalpha.dim(); ++j) {
    const double ah = qalpha.shape[j], bh = qalpha.rate[j];
    const double a = palpha.shape[j], b = palpha.rate[j];
    out[j] = (ah - a) * digamma(ah) - log_gamma(ah) + log_gamma(a) +
             a * (std::log(bh) - std::log(b)) + ah * (b - bh) / bh;
  }
  return out;
}

Vec corrected_prior_logpdf(const Vec& z, const StudentT& t) {
  const double f = t.dof, v = t.shape_scale;
  const double norm = log_gamma(0.5 * (f + 1.0)) - log_gamma(0.5 * f) -
                      0.5 * std::log(f * std::numbers::pi * v);
  return norm - 0.5 * (f + 1.0) * (1.0 + z.square() / (f * v)).log();
}

GammaParams gamma_prior_from_relevance(const RelevanceVector& rv) {
  const Vec shape = (1.0 + 2.0 * rv.epsilon) / (rv.r + rv.epsilon);
  return GammaParams(shape, shape - 1.0);
}

double entropic_regularizer(const RelevanceVector& rv) {
  constexpr double kFloor = 1e-12;
  double h = 0.0;
  for (Eigen::Index j = 0; j < rv.dim(); ++j) {
    const double r = std::fmin(std::fmax(rv.r[j], kFloor), 1.0 - kFloor);
    h -= r * std::log(r) + (1.0 - r) * std::log(1.0 - r);
  }
  return h;
}

McEstimate mc_kl_oracle(const std::function<double(Rng&)>& sample_q,
                        const std::function<double(double)>& logpdf_q,
                        const std::function<double(double)>& logpdf_p,
                        int n_samples, uint64_t seed) {
  if (n_samples < 1000)
    throw std::invalid_argument("mc_kl_oracle: n_samples must be >= 1000");
  Rng rng(seed);
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const double z = sample_q(rng);
    const double w = logpdf_q(z) - logpdf_p(z);
    sum += w;
    sumsq += w * w;
  }
  const double n = static_cast<double>(n_samples);
  const double mean = sum / n;
  const double var = std::fmax(0.0, (sumsq - n * mean * mean) / (n - 1.0));
  return {mean, std::sqrt(var / n)};
}

}  // namespace bfvae
