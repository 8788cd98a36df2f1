// SPDX-License-Identifier: Apache-2.0
#include "bfvae/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "bfvae/npz.hpp"
#include "bfvae/special.hpp"

namespace bfvae {

namespace {

enum Stream : uint64_t {
  kModelInit = 31,
  kDiscInit = 32,
  kPriorInit = 33,
  kBatch = 34,
  kNoise = 35,
  kDiscBatch = 36,
  kDiscNoise = 37,
  kDiscPerm = 38
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    if (!tok.empty()) out.push_back(std::stoi(tok));
  }
  return out;
}

bool uses_discriminator(const std::string& model) {
  return model != "vae";
}

}  // namespace

// --- RunConfig -----------------------------------------------------------------

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "model") model = value;
  else if (key == "latent_dim") latent_dim = std::stoi(value);
  else if (key == "beta") beta = std::stod(value);
  else if (key == "gamma") gamma = std::stod(value);
  else if (key == "eta") eta = std::stod(value);
  else if (key == "eta_s") eta_s = std::stod(value);
  else if (key == "eta_h") eta_h = std::stod(value);
  else if (key == "epsilon") epsilon = std::stod(value);
  else if (key == "mog_k") mog_k = std::stoi(value);
  else if (key == "lr") lr = std::stod(value);
  else if (key == "disc_lr") disc_lr = std::stod(value);
  else if (key == "adam_beta1") adam_beta1 = std::stod(value);
  else if (key == "adam_beta2") adam_beta2 = std::stod(value);
  else if (key == "batch") batch = std::stoi(value);
  else if (key == "disc_steps") disc_steps = std::stoi(value);
  else if (key == "steps") steps = std::stol(value);
  else if (key == "seed") seed = std::stoull(value);
  else if (key == "arch") arch = value;
  else if (key == "hidden") hidden = std::stoi(value);
  else if (key == "disc_width") disc_width = std::stoi(value);
  else if (key == "disc_depth") disc_depth = std::stoi(value);
  else if (key == "dataset") dataset = value;
  else if (key == "bars_grid") bars_grid = value;
  else if (key == "image_size") image_size = std::stoi(value);
  else if (key == "noise_channels") noise_channels = std::stoi(value);
  else if (key == "out_dir") out_dir = value;
  else if (key == "hyper_kl_scale") hyper_kl_scale = std::stod(value);
  else if (key == "log_every") log_every = std::stol(value);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

std::string RunConfig::canonical() const {
  std::map<std::string, std::string> kv;
  kv["model"] = model;
  kv["latent_dim"] = std::to_string(latent_dim);
  kv["beta"] = fmt_double(beta);
  kv["gamma"] = fmt_double(gamma);
  kv["eta"] = fmt_double(eta);
  kv["eta_s"] = fmt_double(eta_s);
  kv["eta_h"] = fmt_double(eta_h);
  kv["epsilon"] = fmt_double(epsilon);
  kv["mog_k"] = std::to_string(mog_k);
  kv["lr"] = fmt_double(lr);
  kv["disc_lr"] = fmt_double(disc_lr);
  kv["adam_beta1"] = fmt_double(adam_beta1);
  kv["adam_beta2"] = fmt_double(adam_beta2);
  kv["batch"] = std::to_string(batch);
  kv["disc_steps"] = std::to_string(disc_steps);
  kv["steps"] = std::to_string(steps);
  kv["seed"] = std::to_string(seed);
  kv["arch"] = arch;
  kv["hidden"] = std::to_string(hidden);
  kv["disc_width"] = std::to_string(disc_width);
  kv["disc_depth"] = std::to_string(disc_depth);
  kv["dataset"] = dataset;
  kv["bars_grid"] = bars_grid;
  kv["image_size"] = std::to_string(image_size);
  kv["noise_channels"] = std::to_string(noise_channels);
  kv["out_dir"] = out_dir;
  kv["hyper_kl_scale"] = fmt_double(hyper_kl_scale);
  kv["log_every"] = std::to_string(log_every);
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::hash() const {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << fnv1a64(canonical());
  return os.str();
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const size_t hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line = line.substr(0, hash_pos);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

RunConfig RunConfig::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  RunConfig cfg = from_text(ss.str());
  if (const char* od = std::getenv("BFVAE_OUT_DIR"); od && *od) cfg.out_dir = od;
  if (const char* dev = std::getenv("BFVAE_DEVICE"); dev && *dev) {
    if (std::string(dev) != "cpu")
      throw std::runtime_error("BFVAE_DEVICE: only 'cpu' is available");
  }
  return cfg;
}

FactorDataset make_dataset(const RunConfig& cfg) {
  if (cfg.dataset == "synth_bars")
    return synth_bars(parse_int_list(cfg.bars_grid), cfg.image_size,
                      cfg.noise_channels, cfg.seed);
  return load_grid_archive(cfg.dataset);
}

// --- model shell -----------------------------------------------------------------

namespace {

PriorSpec make_prior(const RunConfig& cfg) {
  const int d = cfg.latent_dim;
  if (cfg.model == "vae" || cfg.model == "fvae") return PriorSpec::std_normal(d);
  if (cfg.model == "fvae_mog") return PriorSpec::mog(d, cfg.mog_k, derive_seed(cfg.seed, kPriorInit));
  if (cfg.model == "bfvae0") return PriorSpec::precision(d);
  if (cfg.model == "bfvae1") return PriorSpec::gamma_hier(d);
  if (cfg.model == "bfvae2") return PriorSpec::relevance(d, 0.5, cfg.epsilon);
  throw std::invalid_argument("config: unknown model '" + cfg.model + "'");
}

ArchSpec make_arch(const RunConfig& cfg, int obs_c, int obs_h, int obs_w) {
  if (cfg.arch == "mlp") {
    ArchSpec s = ArchSpec::mlp(obs_c * obs_h * obs_w, cfg.hidden, cfg.latent_dim);
    // keep the image geometry so traversal tiles render correctly
    s.obs_c = obs_c;
    s.obs_h = obs_h;
    s.obs_w = obs_w;
    return s;
  }
  if (cfg.arch == "conv_desk") {
    if (obs_h != obs_w) throw std::invalid_argument("conv_desk: square images required");
    return ArchSpec::conv_desk(obs_c, obs_h, cfg.latent_dim);
  }
  if (cfg.arch == "conv64") {
    if (obs_h != 64 || obs_w != 64)
      throw std::invalid_argument("conv64: 64x64 input required");
    return ArchSpec::conv64(obs_c, cfg.latent_dim);
  }
  throw std::invalid_argument("config: unknown arch '" + cfg.arch + "'");
}

}  // namespace

TrainedModel make_model_shell(const RunConfig& cfg, int obs_c, int obs_h, int obs_w) {
  return TrainedModel{
      cfg,
      EncoderDecoder(make_arch(cfg, obs_c, obs_h, obs_w), derive_seed(cfg.seed, kModelInit)),
      Discriminator(cfg.latent_dim, cfg.disc_width, cfg.disc_depth,
                    derive_seed(cfg.seed, kDiscInit)),
      make_prior(cfg)};
}

LossBreakdown TrainedModel::objective_on(const Mat& x, uint64_t noise_seed,
                                         int n_dataset) {
  Tape tape;
  const RunConfig& c = config;
  if (c.model == "vae")
    return objective_vae(tape, model, x, c.beta, noise_seed).breakdown;
  if (c.model == "fvae" || c.model == "fvae_mog")
    return objective_fvae(tape, model, disc, x, c.gamma, prior, noise_seed).breakdown;
  if (c.model == "bfvae0")
    return objective_bfvae0(tape, model, disc, x, prior, c.gamma, c.eta, noise_seed)
        .breakdown;
  if (c.model == "bfvae1")
    return objective_bfvae1(tape, model, disc, x, prior, c.gamma, n_dataset, noise_seed,
                            c.hyper_kl_scale)
        .breakdown;
  if (c.model == "bfvae2")
    return objective_bfvae2(tape, model, disc, x, prior, c.gamma, c.eta_s, c.eta_h,
                            n_dataset, noise_seed, c.hyper_kl_scale)
        .breakdown;
  throw std::invalid_argument("unknown model '" + c.model + "'");
}

// --- history / diagnostics --------------------------------------------------------

namespace {

void write_history(const std::string& path,
                   const std::vector<std::pair<long, LossBreakdown>>& hist) {
  std::ofstream f(path);
  f << "step,rec,kl,tc_proxy,hyper_kl,reg_eta_precision,reg_eta_s_l1,reg_eta_h_entropy,"
       "total\n";
  auto reg = [](const LossBreakdown& b, const char* k) {
    auto it = b.regularizers.find(k);
    return it == b.regularizers.end() ? 0.0 : it->second;
  };
  f.precision(10);
  for (const auto& [step, b] : hist) {
    f << step << ',' << b.rec << ',' << b.kl << ',' << b.tc_proxy << ',' << b.hyper_kl
      << ',' << reg(b, "eta_precision") << ',' << reg(b, "eta_s_l1") << ','
      << reg(b, "eta_h_entropy") << ',' << b.total << '\n';
  }
}

struct ParamSnapshot {
  std::vector<Mat> values;
  void capture(const std::vector<Parameter*>& ps) {
    values.clear();
    for (auto* p : ps) values.push_back(p->value);
  }
  void restore(const std::vector<Parameter*>& ps) const {
    for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = values[i];
  }
};

}  // namespace

// --- training loop -----------------------------------------------------------------

TrainedModel train(const RunConfig& cfg, const FactorDataset& ds, TrainResult* result) {
  if (cfg.latent_dim < ds.num_factors())
    throw std::invalid_argument(
        "train: latent_dim must be at least the number of ground-truth factors");
  if (cfg.batch < 2) throw std::invalid_argument("train: batch must be >= 2");

  TrainedModel tm = make_model_shell(cfg, ds.channels, ds.height, ds.width);
  const int n_dataset = static_cast<int>(ds.n());

  std::vector<Parameter*> vae_params = tm.model.parameters();
  for (auto* p : tm.prior.parameters()) vae_params.push_back(p);
  std::vector<Parameter*> disc_params = tm.disc.parameters();
  std::vector<Parameter*> all_params = vae_params;
  for (auto* p : disc_params) all_params.push_back(p);

  Adam vae_opt(vae_params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
  Adam disc_opt(disc_params, cfg.disc_lr, cfg.adam_beta1, cfg.adam_beta2);

  const bool with_disc = uses_discriminator(cfg.model);
  std::filesystem::create_directories(cfg.out_dir);

  Rng batch_rng(derive_seed(cfg.seed, kBatch));
  Rng disc_batch_rng(derive_seed(cfg.seed, kDiscBatch));

  TrainResult local;
  TrainResult& res = result ? *result : local;
  res.history.clear();
  ParamSnapshot last_good;
  last_good.capture(all_params);
  long last_good_step = -1;

  auto draw_rows = [&](Rng& rng) {
    std::vector<size_t> rows(static_cast<size_t>(cfg.batch));
    for (auto& r : rows) r = rng.index(ds.n());
    return rows;
  };

  for (long step = 0; step < cfg.steps; ++step) {
    const Mat x = ds.batch(draw_rows(batch_rng));
    Tape tape;
    ObjectiveOut out;
    const uint64_t nseed = derive_seed(cfg.seed, kNoise, static_cast<uint64_t>(step));
    if (cfg.model == "vae")
      out = objective_vae(tape, tm.model, x, cfg.beta, nseed);
    else if (cfg.model == "fvae" || cfg.model == "fvae_mog")
      out = objective_fvae(tape, tm.model, tm.disc, x, cfg.gamma, tm.prior, nseed);
    else if (cfg.model == "bfvae0")
      out = objective_bfvae0(tape, tm.model, tm.disc, x, tm.prior, cfg.gamma, cfg.eta, nseed);
    else if (cfg.model == "bfvae1")
      out = objective_bfvae1(tape, tm.model, tm.disc, x, tm.prior, cfg.gamma, n_dataset,
                             nseed, cfg.hyper_kl_scale);
    else if (cfg.model == "bfvae2")
      out = objective_bfvae2(tape, tm.model, tm.disc, x, tm.prior, cfg.gamma, cfg.eta_s,
                             cfg.eta_h, n_dataset, nseed, cfg.hyper_kl_scale);
    else
      throw std::invalid_argument("train: unknown model '" + cfg.model + "'");

    if (!std::isfinite(out.breakdown.total)) {
      // dump diagnostics and the last logged parameters, then abort
      last_good.restore(all_params);
      save_checkpoint(tm, cfg.out_dir + "/last_good.npz");
      std::ofstream diag(cfg.out_dir + "/diagnostics.txt");
      diag << "non-finite loss at step " << step << "\n"
           << "rec " << out.breakdown.rec << "\nkl " << out.breakdown.kl << "\ntc "
           << out.breakdown.tc_proxy << "\nhyper " << out.breakdown.hyper_kl << "\n"
           << "last_good_step " << last_good_step << "\n";
      write_history(cfg.out_dir + "/history.csv", res.history);
      throw std::runtime_error("train: non-finite loss at step " + std::to_string(step) +
                               "; wrote " + cfg.out_dir + "/last_good.npz");
    }

    for (auto* p : all_params) p->zero_grad();
    tape.backward(out.total);
    vae_opt.step();

    if (with_disc) {
      // independent halves: the model update consumed one batch; its latents
      // (detached) are the discriminator's positives, a fresh batch supplies
      // the permuted negatives
      for (int j = 0; j < cfg.disc_steps; ++j) {
        const uint64_t dseed =
            derive_seed(cfg.seed, kDiscNoise, static_cast<uint64_t>(step * 977 + j));
        Mat za;
        if (j == 0) {
          za = out.z_sample;
        } else {
          const Mat xa = ds.batch(draw_rows(disc_batch_rng));
          za = reparam_sample(tm.model.encode(xa), derive_seed(dseed, 1));
        }
        const Mat xb = ds.batch(draw_rows(disc_batch_rng));
        Mat zb = reparam_sample(tm.model.encode(xb), derive_seed(dseed, 2));
        if (cfg.model == "bfvae2") {
          // the discriminator stays a pure density-ratio estimator on the
          // masked latents; r is a constant here
          const Vec r = tm.prior.relevance_vector().r;
          for (Eigen::Index c = 0; c < za.cols(); ++c) {
            za.col(c) *= r[c];
            zb.col(c) *= r[c];
          }
        }
        const Mat zperm = permute_dims(zb, derive_seed(cfg.seed, kDiscPerm,
                                                       static_cast<uint64_t>(step * 977 + j)));
        Tape dtape;
        Var dloss = discriminator_loss_vars(dtape, tm.disc, za, zperm);
        disc_opt.zero_grad();
        dtape.backward(dloss);
        disc_opt.step();
      }
    }

    if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
      res.history.emplace_back(step, out.breakdown);
      last_good.capture(all_params);
      last_good_step = step;
    }
  }

  res.steps_done = cfg.steps;
  res.checkpoint_path = cfg.out_dir + "/checkpoint.npz";
  save_checkpoint(tm, res.checkpoint_path);
  write_history(cfg.out_dir + "/history.csv", res.history);
  return tm;
}

TrainedModel train(const RunConfig& cfg, TrainResult* result) {
  return train(cfg, make_dataset(cfg), result);
}

// --- checkpoints ---------------------------------------------------------------------

namespace {

constexpr const char* kCkptFormat = "bfvae-ckpt-v1";

std::vector<Parameter*> all_model_params(TrainedModel& tm) {
  std::vector<Parameter*> ps = tm.model.parameters();
  for (auto* p : tm.disc.parameters()) ps.push_back(p);
  for (auto* p : tm.prior.parameters()) ps.push_back(p);
  return ps;
}

}  // namespace

void save_checkpoint(const TrainedModel& tm, const std::string& path) {
  npz::Archive ar;
  ar["format"] = npz::Array::from_string(kCkptFormat);
  ar["config_text"] = npz::Array::from_string(tm.config.canonical());
  ar["config_hash"] = npz::Array::from_string(tm.config.hash());
  const ArchSpec& as = tm.model.spec();
  ar["obs_shape"] = npz::Array::from_int64(
      {3}, std::vector<int64_t>{as.obs_c, as.obs_h, as.obs_w});
  auto& self = const_cast<TrainedModel&>(tm);
  for (auto* p : all_model_params(self)) {
    std::vector<double> v(p->value.data(), p->value.data() + p->value.size());
    ar["param/" + p->name] = npz::Array::from_doubles(
        {static_cast<size_t>(p->value.rows()), static_cast<size_t>(p->value.cols())}, v);
  }
  npz::save(path, ar);
}

TrainedModel load_checkpoint(const std::string& path) {
  npz::Archive ar = npz::load(path);
  auto need = [&](const char* key) -> const npz::Array& {
    auto it = ar.find(key);
    if (it == ar.end())
      throw std::runtime_error("checkpoint '" + path + "': missing '" + key + "'");
    return it->second;
  };
  if (need("format").to_string() != kCkptFormat)
    throw std::runtime_error("checkpoint '" + path + "': unsupported format tag");
  RunConfig cfg = RunConfig::from_text(need("config_text").to_string());
  if (cfg.hash() != need("config_hash").to_string())
    throw std::runtime_error("checkpoint '" + path + "': config hash mismatch");
  const auto shape = need("obs_shape").to_int64();
  TrainedModel tm = make_model_shell(cfg, static_cast<int>(shape[0]),
                                     static_cast<int>(shape[1]), static_cast<int>(shape[2]));
  for (auto* p : all_model_params(tm)) {
    const npz::Array& a = need(("param/" + p->name).c_str());
    if (a.shape.size() != 2 ||
        a.shape[0] != static_cast<size_t>(p->value.rows()) ||
        a.shape[1] != static_cast<size_t>(p->value.cols()))
      throw std::runtime_error("checkpoint: shape mismatch for parameter " + p->name);
    const auto v = a.to_doubles();
    std::copy(v.begin(), v.end(), p->value.data());
  }
  return tm;
}

// --- traversal ----------------------------------------------------------------------

TraversalGrid traverse(const TrainedModel& tm, const Mat& anchor_obs, double lo,
                       double hi, int steps) {
  if (steps < 1) throw std::invalid_argument("traverse: steps must be >= 1");
  if (anchor_obs.rows() != 1)
    throw std::invalid_argument("traverse: one anchor observation per call");
  const int d = tm.model.latent_dim();
  GaussianPosterior q = tm.model.encode(anchor_obs);

  TraversalGrid grid;
  grid.d = d;
  grid.steps = steps;
  grid.tile_h = tm.model.spec().obs_h;
  grid.tile_w = tm.model.spec().obs_w;
  grid.anchor_mean = q.mean;
  grid.sweep_values.resize(static_cast<size_t>(steps));
  for (int s = 0; s < steps; ++s)
    grid.sweep_values[static_cast<size_t>(s)] =
        steps == 1 ? lo : lo + (hi - lo) * s / (steps - 1);

  Mat zs(d * steps, d);
  for (int j = 0; j < d; ++j)
    for (int s = 0; s < steps; ++s) {
      zs.row(j * steps + s) = q.mean.row(0);
      zs(j * steps + s, j) = grid.sweep_values[static_cast<size_t>(s)];
    }
  Mat logits = tm.model.decode(zs);
  grid.decoded = logits.unaryExpr([](double v) { return sigmoid(v); });
  return grid;
}

void write_pgm(const std::string& path, const Mat& image01, int h, int w) {
  if (image01.size() != h * w) throw std::invalid_argument("write_pgm: size mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pgm: cannot open '" + path + "'");
  f << "P5\n" << w << " " << h << "\n255\n";
  const bool shaped = image01.rows() == h && image01.cols() == w;
  for (int i = 0; i < h * w; ++i) {
    const double raw = shaped ? image01(i / w, i % w) : image01(0, i);
    f.put(static_cast<char>(std::lround(std::clamp(raw, 0.0, 1.0) * 255.0)));
  }
}

void write_traversal_pgm(const TraversalGrid& grid, int channels,
                         const std::string& path) {
  const int th = grid.tile_h, tw = grid.tile_w;
  const int H = grid.d * th, W = grid.steps * tw;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_traversal_pgm: cannot open '" + path + "'");
  f << "P5\n" << W << " " << H << "\n255\n";
  (void)channels;
  for (int row = 0; row < H; ++row) {
    const int j = row / th, y = row % th;
    for (int col = 0; col < W; ++col) {
      const int s = col / tw, x = col % tw;
      // channel 0 of the decoded tile
      const double v =
          std::clamp(grid.decoded(j * grid.steps + s, y * tw + x), 0.0, 1.0);
      f.put(static_cast<char>(std::lround(v * 255.0)));
    }
  }
}

// --- relevance -----------------------------------------------------------------------

int RelevanceReport::num_relevant() const {
  int n = 0;
  for (bool b : relevant) n += b ? 1 : 0;
  return n;
}

std::string RelevanceReport::to_text() const {
  std::ostringstream os;
  os << "applicable: " << (applicable ? "yes" : "no") << "\n";
  os << "variant: " << variant << "\n";
  if (!applicable) {
    os << "note: " << note << "\n";
    return os.str();
  }
  os << "evidence: " << evidence_name << "\n";
  os << "threshold_alpha_dev: " << thresholds.alpha_dev << "\n";
  os << "threshold_dof: " << thresholds.dof << "\n";
  os << "threshold_r: " << thresholds.r << "\n";
  for (Eigen::Index j = 0; j < evidence.size(); ++j)
    os << "dim" << j << ": " << evidence[j] << " "
       << (relevant[static_cast<size_t>(j)] ? "relevant" : "nuisance") << "\n";
  os << "num_relevant: " << num_relevant() << "\n";
  return os.str();
}

RelevanceReport relevance_report(const TrainedModel& tm,
                                 const RelevanceThresholds& thresholds) {
  RelevanceReport rep;
  rep.thresholds = thresholds;
  rep.variant = tm.config.model;
  const auto& prior = tm.prior;
  if (prior.kind == PriorSpec::Kind::Precision) {
    rep.applicable = true;
    rep.evidence_name = "abs(1/alpha - 1)";
    const Vec alpha = prior.alpha();
    rep.evidence = (1.0 / alpha - 1.0).abs();
    for (Eigen::Index j = 0; j < rep.evidence.size(); ++j)
      rep.relevant.push_back(rep.evidence[j] > thresholds.alpha_dev);
  } else if (prior.kind == PriorSpec::Kind::GammaHier) {
    rep.applicable = true;
    rep.evidence_name = "corrected prior dof (2*ahat)";
    const GammaParams q = prior.qalpha();
    rep.evidence = 2.0 * q.shape;
    for (Eigen::Index j = 0; j < rep.evidence.size(); ++j)
      rep.relevant.push_back(rep.evidence[j] < thresholds.dof);
  } else if (prior.kind == PriorSpec::Kind::Relevance) {
    rep.applicable = true;
    rep.evidence_name = "relevance r";
    rep.evidence = prior.relevance_vector().r;
    for (Eigen::Index j = 0; j < rep.evidence.size(); ++j)
      rep.relevant.push_back(rep.evidence[j] > thresholds.r);
  } else {
    rep.applicable = false;
    rep.note = "not applicable: model variant has no relevance indicator";
  }
  return rep;
}

// --- sweep ---------------------------------------------------------------------------

std::vector<SweepRow> cardinality_sweep(const RunConfig& base,
                                        const std::vector<double>& etas,
                                        const RelevanceThresholds& thresholds) {
  if (base.model != "bfvae0" && base.model != "bfvae2")
    throw std::invalid_argument("cardinality_sweep: variant must be bfvae0 or bfvae2");
  if (etas.empty()) throw std::invalid_argument("cardinality_sweep: no eta values");

  const FactorDataset ds = make_dataset(base);
  std::vector<SweepRow> rows;
  for (double eta : etas) {
    RunConfig cfg = base;
    if (cfg.model == "bfvae0") {
      cfg.eta = eta;
    } else {
      cfg.eta_s = eta;
      cfg.eta_h = eta;
    }
    std::ostringstream sub;
    sub << base.out_dir << "/eta_" << eta;
    cfg.out_dir = sub.str();
    TrainedModel tm = train(cfg, ds);
    RelevanceReport rep = relevance_report(tm, thresholds);
    rows.push_back({eta, rep.num_relevant(), rep.evidence});
  }

  std::filesystem::create_directories(base.out_dir);
  std::ofstream f(base.out_dir + "/sweep.csv");
  f << "eta,num_relevant";
  for (Eigen::Index j = 0; j < rows[0].evidence.size(); ++j) f << ",evidence_dim" << j;
  f << "\n";
  f.precision(10);
  for (const auto& r : rows) {
    f << r.eta << ',' << r.n_relevant;
    for (Eigen::Index j = 0; j < r.evidence.size(); ++j) f << ',' << r.evidence[j];
    f << "\n";
  }
  return rows;
}

// --- metric bundle ----------------------------------------------------------------------

namespace {

void write_csv_matrix(const std::string& path, const Eigen::MatrixXd& m,
                      const std::string& row_prefix, const std::string& col_prefix) {
  std::ofstream f(path);
  f << row_prefix;
  for (Eigen::Index c = 0; c < m.cols(); ++c) f << ',' << col_prefix << c;
  f << "\n";
  f.precision(10);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    f << row_prefix << r;
    for (Eigen::Index c = 0; c < m.cols(); ++c) f << ',' << m(r, c);
    f << "\n";
  }
}

}  // namespace

MetricBundle run_metric_bundle(const TrainedModel& tm, const FactorDataset& ds,
                               int votes, int batch_per_vote, uint64_t seed,
                               const std::string& out_dir) {
  EncodeFn enc = [&tm](const Mat& x) { return tm.model.encode(x).mean; };
  PosteriorFn post = [&tm](const Mat& x) { return tm.model.encode(x); };

  MetricBundle mb;
  mb.metric1 = metric_one(enc, ds, votes, batch_per_vote, derive_seed(seed, 1));
  mb.metric2 = metric_two(enc, ds, votes, batch_per_vote, derive_seed(seed, 2));

  LatentCodes codes = collect_codes(enc, ds);
  mb.dci_lasso = metric_three(codes, ds.factor_values, Regressor::Lasso,
                              derive_seed(seed, 3));
  mb.dci_forest = metric_three(codes, ds.factor_values, Regressor::RandomForest,
                               derive_seed(seed, 4));
  mb.diagnostics =
      aggregate_posterior_diagnostics(post, ds, 4096, derive_seed(seed, 5));

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::ofstream f(out_dir + "/report.txt");
    f.precision(6);
    f << "metric1_score: " << mb.metric1.score << "\n";
    f << "metric2_score: " << mb.metric2.score << "\n";
    f << "dci_lasso_disentanglement: " << mb.dci_lasso.disentanglement << "\n";
    f << "dci_lasso_completeness: " << mb.dci_lasso.completeness << "\n";
    f << "dci_lasso_informativeness: " << mb.dci_lasso.informativeness << "\n";
    f << "dci_forest_disentanglement: " << mb.dci_forest.disentanglement << "\n";
    f << "dci_forest_completeness: " << mb.dci_forest.completeness << "\n";
    f << "dci_forest_informativeness: " << mb.dci_forest.informativeness << "\n";
    f << "diag_tc: " << mb.diagnostics.tc << "\n";
    f << "diag_kl_z: " << mb.diagnostics.kl_z << "\n";
    f << "diag_sum_per_dim_kl: " << mb.diagnostics.per_dim_kl.sum() << "\n";
    f << "diag_residual: " << mb.diagnostics.residual << "\n";
    write_csv_matrix(out_dir + "/votes_metric1.csv", mb.metric1.details, "dim", "factor");
    write_csv_matrix(out_dir + "/votes_metric2.csv", mb.metric2.details, "dim", "factor");
    write_csv_matrix(out_dir + "/importance_lasso.csv", mb.dci_lasso.details, "dim",
                     "factor");
    write_csv_matrix(out_dir + "/importance_forest.csv", mb.dci_forest.details, "dim",
                     "factor");
  }
  return mb;
}

}  // namespace bfvae
