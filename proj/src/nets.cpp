// SPDX-License-Identifier: Apache-2.0
#include "bfvae/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace bfvae {

namespace {

constexpr double kLogStdLo = -6.0;
constexpr double kLogStdHi = 4.0;

Mat gaussian_mat(int rows, int cols, double scale, Rng& rng) {
  Mat m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = scale * rng.gaussian();
  return m;
}

Var activate(Tape& tape, const Var& x, Activation act) {
  (void)tape;
  return act == Activation::Tanh ? ad::tanh(x) : ad::leaky_relu(x, 0.2);
}

}  // namespace

DenseLayer::DenseLayer(const std::string& name, int in, int out, Rng& rng,
                       double weight_scale) {
  const double scale = weight_scale > 0.0 ? weight_scale : 1.0 / std::sqrt(in);
  w = Parameter(name + ".w", gaussian_mat(in, out, scale, rng));
  b = Parameter(name + ".b", Mat::Zero(1, out));
}

Var DenseLayer::forward(Tape& tape, const Var& x) const {
  auto& self = const_cast<DenseLayer&>(*this);
  return ad::dense(x, tape.param(self.w), tape.param(self.b));
}

ArchSpec ArchSpec::mlp(int obs_dim, int hidden, int latent_dim) {
  ArchSpec s;
  s.kind = Kind::Mlp;
  s.obs_c = 1;
  s.obs_h = 1;
  s.obs_w = obs_dim;
  s.latent_dim = latent_dim;
  s.hidden = hidden;
  s.act = Activation::Tanh;
  return s;
}

ArchSpec ArchSpec::conv_desk(int obs_c, int image_size, int latent_dim) {
  ArchSpec s;
  s.kind = Kind::Conv;
  s.obs_c = obs_c;
  s.obs_h = image_size;
  s.obs_w = image_size;
  s.latent_dim = latent_dim;
  s.hidden = 128;
  s.conv_channels = {8, 16};
  s.act = Activation::LeakyRelu;
  return s;
}

ArchSpec ArchSpec::conv64(int obs_c, int latent_dim) {
  ArchSpec s;
  s.kind = Kind::Conv;
  s.obs_c = obs_c;
  s.obs_h = 64;
  s.obs_w = 64;
  s.latent_dim = latent_dim;
  s.hidden = 256;
  s.conv_channels = {32, 32, 64, 64};
  s.act = Activation::LeakyRelu;
  return s;
}

EncoderDecoder::EncoderDecoder(const ArchSpec& spec, uint64_t seed) : spec_(spec) {
  Rng rng(derive_seed(seed, 0xE0C0DE));
  const int d = spec_.latent_dim;
  int flat = spec_.obs_dim();

  if (spec_.kind == ArchSpec::Kind::Conv) {
    int c = spec_.obs_c, h = spec_.obs_h, w = spec_.obs_w;
    for (size_t i = 0; i < spec_.conv_channels.size(); ++i) {
      const int co = spec_.conv_channels[i];
      auto plan = ad::make_conv_plan(c, h, w, co, spec_.kernel, spec_.stride, spec_.pad);
      enc_plans_.push_back(plan);
      DenseLayer l;
      const double scale = std::sqrt(2.0 / plan.patch());
      l.w = Parameter("enc.conv" + std::to_string(i) + ".w",
                      gaussian_mat(plan.patch(), co, scale, rng));
      l.b = Parameter("enc.conv" + std::to_string(i) + ".b", Mat::Zero(1, co));
      enc_conv_.push_back(std::move(l));
      c = co;
      h = plan.out_h;
      w = plan.out_w;
    }
    flat = c * h * w;
    // decoder mirrors: dense back to the conv stack's flat size, then
    // transposed convs walking the channel list in reverse.
    int dc = c, dh = h, dw = w;
    dec_in_ = DenseLayer("dec.in", d, spec_.hidden, rng);
    dec_hidden_ = DenseLayer("dec.hidden", spec_.hidden, flat, rng);
    for (int i = static_cast<int>(spec_.conv_channels.size()) - 1; i >= 0; --i) {
      const int co = i == 0 ? spec_.obs_c : spec_.conv_channels[i - 1];
      // plan for the conv mapping the layer OUTPUT geometry back to input
      auto plan = ad::make_conv_plan(co, dh * spec_.stride, dw * spec_.stride, dc,
                                     spec_.kernel, spec_.stride, spec_.pad);
      if (plan.out_h != dh || plan.out_w != dw)
        throw std::logic_error("EncoderDecoder: transposed conv geometry mismatch");
      dec_plans_.push_back(plan);
      DenseLayer l;
      const double scale = std::sqrt(2.0 / plan.patch());
      l.w = Parameter("dec.convt" + std::to_string(i) + ".w",
                      gaussian_mat(plan.patch(), dc, scale, rng));
      l.b = Parameter("dec.convt" + std::to_string(i) + ".b", Mat::Zero(1, co));
      dec_conv_.push_back(std::move(l));
      dc = co;
      dh *= spec_.stride;
      dw *= spec_.stride;
    }
  } else {
    dec_in_ = DenseLayer("dec.in", d, spec_.hidden, rng);
    dec_hidden_ = DenseLayer("dec.hidden", spec_.hidden, flat, rng);
  }

  enc_hidden_ = DenseLayer("enc.hidden", flat, spec_.hidden, rng);
  head_mean_ = DenseLayer("enc.mean", spec_.hidden, d, rng);
  head_logstd_ = DenseLayer("enc.logstd", spec_.hidden, d, rng, 0.01 / std::sqrt(spec_.hidden));
}

Var EncoderDecoder::trunk(Tape& tape, const Var& x) const {
  Var h = x;
  for (size_t i = 0; i < enc_conv_.size(); ++i) {
    auto& l = const_cast<DenseLayer&>(enc_conv_[i]);
    h = ad::conv2d(h, tape.param(l.w), tape.param(l.b), enc_plans_[i]);
    h = activate(tape, h, spec_.act);
  }
  h = enc_hidden_.forward(tape, h);
  return activate(tape, h, spec_.act);
}

EncoderDecoder::EncOut EncoderDecoder::encode_vars(Tape& tape, const Mat& x) const {
  if (x.cols() != obs_dim())
    throw std::invalid_argument("encode: observation size mismatch");
  if ((x.array() < 0.0).any() || (x.array() > 1.0).any())
    throw std::invalid_argument("encode: observations must lie in [0,1]");
  Var h = trunk(tape, tape.constant(x));
  EncOut out;
  out.mean = head_mean_.forward(tape, h);
  out.logstd = ad::clamp_st(head_logstd_.forward(tape, h), kLogStdLo, kLogStdHi);
  out.std = ad::exp(out.logstd);
  return out;
}

Var EncoderDecoder::decode_vars(Tape& tape, const Var& z) const {
  if (z.cols() != spec_.latent_dim)
    throw std::invalid_argument("decode: latent size mismatch");
  Var h = dec_in_.forward(tape, z);
  h = activate(tape, h, spec_.act);
  h = dec_hidden_.forward(tape, h);
  if (spec_.kind == ArchSpec::Kind::Mlp) return h;  // logits
  h = activate(tape, h, spec_.act);
  for (size_t i = 0; i < dec_conv_.size(); ++i) {
    auto& l = const_cast<DenseLayer&>(dec_conv_[i]);
    h = ad::conv2d_transpose(h, tape.param(l.w), tape.param(l.b), dec_plans_[i]);
    if (i + 1 < dec_conv_.size()) h = activate(tape, h, spec_.act);
  }
  return h;
}

GaussianPosterior EncoderDecoder::encode(const Mat& x) const {
  Tape tape;
  EncOut e = encode_vars(tape, x);
  return {e.mean.val(), e.std.val()};
}

Mat EncoderDecoder::decode(const Mat& z) const {
  Tape tape;
  return decode_vars(tape, tape.constant(z)).val();
}

std::vector<Parameter*> EncoderDecoder::parameters() {
  std::vector<Parameter*> ps;
  auto push = [&ps](DenseLayer& l) {
    ps.push_back(&l.w);
    ps.push_back(&l.b);
  };
  for (auto& l : enc_conv_) push(l);
  push(enc_hidden_);
  push(head_mean_);
  push(head_logstd_);
  push(dec_in_);
  push(dec_hidden_);
  for (auto& l : dec_conv_) push(l);
  return ps;
}

std::vector<const Parameter*> EncoderDecoder::parameters() const {
  auto ps = const_cast<EncoderDecoder*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

Discriminator::Discriminator(int latent_dim, int width, int depth, uint64_t seed,
                             Activation act)
    : in_dim_(latent_dim), act_(act) {
  Rng rng(derive_seed(seed, 0xD15C));
  int in = latent_dim;
  for (int i = 0; i < depth; ++i) {
    layers_.emplace_back("disc.l" + std::to_string(i), in, width, rng);
    in = width;
  }
  out_ = DenseLayer("disc.out", in, 1, rng);
}

Var Discriminator::logits_vars(Tape& tape, const Var& z) const {
  if (z.cols() != in_dim_)
    throw std::invalid_argument("Discriminator: latent size mismatch");
  Var h = z;
  for (const auto& l : layers_) h = activate(tape, l.forward(tape, h), act_);
  return out_.forward(tape, h);
}

Mat Discriminator::logits(const Mat& z) const {
  Tape tape;
  return logits_vars(tape, tape.constant(z)).val();
}

std::vector<Parameter*> Discriminator::parameters() {
  std::vector<Parameter*> ps;
  for (auto& l : layers_) {
    ps.push_back(&l.w);
    ps.push_back(&l.b);
  }
  ps.push_back(&out_.w);
  ps.push_back(&out_.b);
  return ps;
}

}  // namespace bfvae
