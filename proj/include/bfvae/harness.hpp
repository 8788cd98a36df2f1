// SPDX-License-Identifier: Apache-2.0
//
// Training loop, run configuration, checkpointing and the reporting
// surfaces: latent traversal grids, per-dimension relevance reports, the
// eta cardinality sweep and the metric bundle.
//
// Runs are bit-reproducible on one platform: every random stream is derived
// from config.seed, training is single-threaded, and checkpoints carry the
// canonical config text plus its hash.
#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bfvae/adam.hpp"
#include "bfvae/data.hpp"
#include "bfvae/metrics.hpp"
#include "bfvae/objectives.hpp"

namespace bfvae {

struct RunConfig {
  std::string model = "vae";  // vae|fvae|fvae_mog|bfvae0|bfvae1|bfvae2
  int latent_dim = 6;
  double beta = 1.0;
  double gamma = 6.0;
  double eta = 5.0;
  double eta_s = 10.0;
  double eta_h = 10.0;
  double epsilon = 1e-3;
  int mog_k = 5;
  double lr = 1e-4;
  double disc_lr = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  int batch = 64;
  int disc_steps = 1;
  long steps = 30000;
  uint64_t seed = 0;
  std::string arch = "conv_desk";  // mlp|conv_desk|conv64
  int hidden = 128;
  int disc_width = 256;
  int disc_depth = 4;
  std::string dataset = "synth_bars";  // or a grid-archive path
  std::string bars_grid = "8,8,6";
  int image_size = 16;
  int noise_channels = 1;
  std::string out_dir = "runs/out";
  double hyper_kl_scale = -1.0;  // < 0 selects 1/N_dataset
  long log_every = 100;

  // Flat key = value text. Unknown keys are an error. load_file applies the
  // BFVAE_OUT_DIR / BFVAE_DEVICE environment overrides; from_text does not
  // (it is used to restore checkpointed configs verbatim).
  static RunConfig from_text(const std::string& text);
  static RunConfig load_file(const std::string& path);

  std::string canonical() const;  // sorted key = value lines
  std::string hash() const;       // fnv1a-64 of canonical(), hex
  void set(const std::string& key, const std::string& value);
};

FactorDataset make_dataset(const RunConfig& cfg);

// Model + prior + discriminator for a config, freshly initialized from
// config.seed. Observation geometry comes from the dataset.
struct TrainedModel {
  RunConfig config;
  EncoderDecoder model;
  Discriminator disc;
  PriorSpec prior;

  LossBreakdown objective_on(const Mat& x, uint64_t noise_seed, int n_dataset);
};

TrainedModel make_model_shell(const RunConfig& cfg, int obs_c, int obs_h, int obs_w);

struct TrainResult {
  std::vector<std::pair<long, LossBreakdown>> history;
  std::string checkpoint_path;
  long steps_done = 0;
};

// Alternating updates: one model step, then disc_steps discriminator steps
// on fresh batches (variants without a TC term skip the discriminator).
// Writes <out_dir>/checkpoint.npz and <out_dir>/history.csv. A non-finite
// loss aborts: the parameters from the last logged step are written to
// <out_dir>/last_good.npz next to a diagnostics dump, then a runtime_error
// propagates.
TrainedModel train(const RunConfig& cfg, const FactorDataset& ds,
                   TrainResult* result = nullptr);
TrainedModel train(const RunConfig& cfg, TrainResult* result = nullptr);

// --- checkpoints (archive of named dense arrays, tag "bfvae-ckpt-v1") -------

void save_checkpoint(const TrainedModel& tm, const std::string& path);
TrainedModel load_checkpoint(const std::string& path);

// --- traversal ---------------------------------------------------------------

struct TraversalGrid {
  int d = 0, steps = 0, tile_h = 0, tile_w = 0;
  std::vector<double> sweep_values;
  Mat decoded;  // (d*steps) x obs_dim, probabilities in [0,1]
  Mat anchor_mean;  // 1 x d
};

// Encodes the anchor, then for each latent dimension sweeps z_j over
// [lo, hi] (steps points) holding the other coordinates at the anchor mean.
TraversalGrid traverse(const TrainedModel& tm, const Mat& anchor_obs, double lo = -3.0,
                       double hi = 3.0, int steps = 8);

void write_pgm(const std::string& path, const Mat& image01, int h, int w);
// Mosaic with one row per latent dimension, channel 0 of each decode.
void write_traversal_pgm(const TraversalGrid& grid, int channels,
                         const std::string& path);

// --- relevance ---------------------------------------------------------------

struct RelevanceThresholds {
  double alpha_dev = 0.2;  // bfvae0: |1/alpha - 1| above -> relevant
  double dof = 100.0;      // bfvae1: corrected-prior dof below -> relevant
  double r = 0.5;          // bfvae2: relevance above -> relevant
};

struct RelevanceReport {
  bool applicable = false;
  std::string variant;
  std::string evidence_name;
  Vec evidence;
  std::vector<bool> relevant;
  RelevanceThresholds thresholds;
  std::string note;

  int num_relevant() const;
  std::string to_text() const;  // flat key: value report
};

RelevanceReport relevance_report(const TrainedModel& tm,
                                 const RelevanceThresholds& thresholds = {});

// --- eta sweep -----------------------------------------------------------------

struct SweepRow {
  double eta = 0.0;
  int n_relevant = 0;
  Vec evidence;
};

// Trains one run per eta (bfvae0: eta; bfvae2: eta_s = eta_h = eta), shared
// seed, isolated subdirectories; emits <out_dir>/sweep.csv.
std::vector<SweepRow> cardinality_sweep(const RunConfig& base,
                                        const std::vector<double>& etas,
                                        const RelevanceThresholds& thresholds = {});

// --- metric bundle ---------------------------------------------------------------

struct MetricBundle {
  MetricResult metric1, metric2;
  MetricResult dci_lasso, dci_forest;
  AggregateDiagnostics diagnostics;
};

// Runs all three metrics plus diagnostics for a trained model; writes
// report.txt and the vote/importance CSV tables under out_dir when not
// empty.
MetricBundle run_metric_bundle(const TrainedModel& tm, const FactorDataset& ds,
                               int votes, int batch_per_vote, uint64_t seed,
                               const std::string& out_dir = "");

}  // namespace bfvae
