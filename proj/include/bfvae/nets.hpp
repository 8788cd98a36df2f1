// SPDX-License-Identifier: Apache-2.0
//
// Encoder/decoder pairs and the density-ratio discriminator. Two
// architecture families:
//   - mlp: dense trunk with tanh activations (smooth everywhere; all
//     finite-difference gradient tests run on this family),
//   - conv: stride-2 convolutions + dense trunk with leaky rectifiers
//     (the desk-scale and 64x64 presets).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bfvae/autograd.hpp"
#include "bfvae/rng.hpp"

namespace bfvae {

using ad::Mat;
using ad::Parameter;
using ad::Tape;
using ad::Var;

// Per-sample diagonal Gaussian posterior parameters, one row per sample.
struct GaussianPosterior {
  Mat mean;  // B x d
  Mat std;   // B x d, strictly positive
};

enum class Activation { Tanh, LeakyRelu };

struct DenseLayer {
  Parameter w;  // in x out
  Parameter b;  // 1 x out

  DenseLayer() = default;
  DenseLayer(const std::string& name, int in, int out, Rng& rng,
             double weight_scale = -1.0);
  Var forward(Tape& tape, const Var& x) const;
};

struct ArchSpec {
  enum class Kind { Mlp, Conv } kind = Kind::Mlp;
  int obs_c = 1, obs_h = 1, obs_w = 1;  // conv geometry; mlp flattens
  int latent_dim = 2;
  int hidden = 128;
  std::vector<int> conv_channels;  // encoder channel progression
  int kernel = 4, stride = 2, pad = 1;
  Activation act = Activation::Tanh;

  int obs_dim() const { return obs_c * obs_h * obs_w; }

  static ArchSpec mlp(int obs_dim, int hidden, int latent_dim);
  // Desk-scale conv preset: 2 stride-2 convs + 2 dense layers.
  static ArchSpec conv_desk(int obs_c, int image_size, int latent_dim);
  // Full-scale 64x64 preset (provided for completeness; not used by the
  // desk-scale experiments).
  static ArchSpec conv64(int obs_c, int latent_dim);
};

// Maps observations to diagonal-Gaussian posteriors and latents back to
// per-pixel Bernoulli logits. The std head emits log s, exponentiated and
// clamped to [-6, 4] in log space.
class EncoderDecoder {
 public:
  EncoderDecoder(const ArchSpec& spec, uint64_t seed);

  const ArchSpec& spec() const { return spec_; }
  int latent_dim() const { return spec_.latent_dim; }
  int obs_dim() const { return spec_.obs_dim(); }

  struct EncOut {
    Var mean;
    Var logstd;  // clamped
    Var std;
  };
  EncOut encode_vars(Tape& tape, const Mat& x) const;
  Var decode_vars(Tape& tape, const Var& z) const;

  // Deterministic eval-mode passes (no gradient tracking).
  GaussianPosterior encode(const Mat& x) const;
  Mat decode(const Mat& z) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

 private:
  Var trunk(Tape& tape, const Var& x) const;

  ArchSpec spec_;
  // encoder
  std::vector<DenseLayer> enc_conv_;  // conv weights stored as dense params
  std::vector<ad::ConvPlan> enc_plans_;
  DenseLayer enc_hidden_;
  DenseLayer head_mean_, head_logstd_;
  // decoder
  DenseLayer dec_in_, dec_hidden_;
  std::vector<DenseLayer> dec_conv_;
  std::vector<ad::ConvPlan> dec_plans_;
};

// Scalar-logit classifier over latent batches; logit(D(z)) is the
// density-ratio estimate log D / (1 - D).
class Discriminator {
 public:
  Discriminator(int latent_dim, int width, int depth, uint64_t seed,
                Activation act = Activation::LeakyRelu);

  Var logits_vars(Tape& tape, const Var& z) const;
  Mat logits(const Mat& z) const;

  int latent_dim() const { return in_dim_; }
  std::vector<Parameter*> parameters();

 private:
  int in_dim_;
  Activation act_;
  std::vector<DenseLayer> layers_;
  DenseLayer out_;
};

}  // namespace bfvae
