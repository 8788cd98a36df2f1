// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. Subcommands:
//   train     -- run one training job from a config file
//   traverse  -- latent traversal grids from a checkpoint
//   report    -- per-dimension relevance report from a checkpoint
//   sweep     -- eta sweep (relevant-factor cardinality) from a base config
//   metrics   -- disentanglement metrics + diagnostics for a checkpoint
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "bfvae/harness.hpp"

using namespace bfvae;

namespace {

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::istringstream is(csv);
  std::string tok;
  while (std::getline(is, tok, ','))
    if (!tok.empty()) out.push_back(std::stod(tok));
  return out;
}

int cmd_train(const std::string& config_path, const std::string& out_dir,
              long seed_override) {
  RunConfig cfg = RunConfig::load_file(config_path);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
  TrainResult result;
  train(cfg, &result);
  std::cout << "checkpoint: " << result.checkpoint_path << "\n";
  if (!result.history.empty()) {
    const auto& [s0, b0] = result.history.front();
    const auto& [s1, b1] = result.history.back();
    std::cout << "loss " << b0.total << " (step " << s0 << ") -> " << b1.total
              << " (step " << s1 << ")\n";
  }
  return 0;
}

int cmd_traverse(const std::string& ckpt, const std::string& out_dir, double lo,
                 double hi, int steps, int anchors) {
  TrainedModel tm = load_checkpoint(ckpt);
  FactorDataset ds = make_dataset(tm.config);
  std::filesystem::create_directories(out_dir);
  RelevanceReport rep = relevance_report(tm);
  Rng rng(derive_seed(tm.config.seed, 0xA2C4));
  for (int a = 0; a < anchors; ++a) {
    const size_t row = rng.index(ds.n());
    TraversalGrid grid = traverse(tm, ds.observation(row), lo, hi, steps);
    const std::string path = out_dir + "/traversal_anchor" + std::to_string(a) + ".pgm";
    write_traversal_pgm(grid, ds.channels, path);
    std::cout << "wrote " << path << " (anchor row " << row << ")\n";
  }
  if (rep.applicable) {
    std::ofstream f(out_dir + "/relevance.txt");
    f << rep.to_text();
  }
  return 0;
}

int cmd_report(const std::string& ckpt, double alpha_dev, double dof, double r) {
  TrainedModel tm = load_checkpoint(ckpt);
  RelevanceThresholds th;
  th.alpha_dev = alpha_dev;
  th.dof = dof;
  th.r = r;
  std::cout << relevance_report(tm, th).to_text();
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& etas_csv,
              const std::string& out_dir) {
  RunConfig base = RunConfig::load_file(config_path);
  if (!out_dir.empty()) base.out_dir = out_dir;
  const auto etas = parse_doubles(etas_csv);
  auto rows = cardinality_sweep(base, etas);
  std::cout << "eta,num_relevant\n";
  for (const auto& row : rows) std::cout << row.eta << "," << row.n_relevant << "\n";
  std::cout << "table: " << base.out_dir << "/sweep.csv\n";
  return 0;
}

int cmd_metrics(const std::string& ckpt, const std::string& out_dir, int votes,
                int batch_per_vote, long seed) {
  TrainedModel tm = load_checkpoint(ckpt);
  FactorDataset ds = make_dataset(tm.config);
  MetricBundle mb = run_metric_bundle(tm, ds, votes, batch_per_vote,
                                      seed >= 0 ? static_cast<uint64_t>(seed)
                                                : tm.config.seed,
                                      out_dir);
  std::cout << "metric1: " << mb.metric1.score << "\n";
  std::cout << "metric2: " << mb.metric2.score << "\n";
  std::cout << "dci(lasso) D/C/I: " << mb.dci_lasso.disentanglement << " / "
            << mb.dci_lasso.completeness << " / " << mb.dci_lasso.informativeness
            << "\n";
  std::cout << "dci(forest) D/C/I: " << mb.dci_forest.disentanglement << " / "
            << mb.dci_forest.completeness << " / " << mb.dci_forest.informativeness
            << "\n";
  std::cout << "tc estimate: " << mb.diagnostics.tc << "\n";
  if (!out_dir.empty()) std::cout << "report: " << out_dir << "/report.txt\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical-Bayesian factor-disentanglement VAEs"};
  app.require_subcommand(1);

  std::string config_path, ckpt, out_dir, etas_csv;
  long seed_override = -1;
  double lo = -3.0, hi = 3.0;
  int steps = 8, anchors = 4, votes = 800, batch_per_vote = 64;
  double th_alpha = 0.2, th_dof = 100.0, th_r = 0.5;

  auto* t = app.add_subcommand("train", "train a model from a config file");
  t->add_option("--config", config_path, "key = value config file")->required();
  t->add_option("--out", out_dir, "output directory override");
  t->add_option("--seed", seed_override, "seed override");

  auto* tr = app.add_subcommand("traverse", "latent traversal image grids");
  tr->add_option("--checkpoint", ckpt, "checkpoint archive")->required();
  tr->add_option("--out", out_dir, "output directory")->required();
  tr->add_option("--lo", lo, "sweep lower bound");
  tr->add_option("--hi", hi, "sweep upper bound");
  tr->add_option("--steps", steps, "sweep points per dimension");
  tr->add_option("--anchors", anchors, "number of anchor images");

  auto* rp = app.add_subcommand("report", "relevance indicator report");
  rp->add_option("--checkpoint", ckpt, "checkpoint archive")->required();
  rp->add_option("--alpha-dev", th_alpha, "bfvae0 threshold on |1/alpha - 1|");
  rp->add_option("--dof", th_dof, "bfvae1 threshold on corrected-prior dof");
  rp->add_option("--r", th_r, "bfvae2 threshold on relevance");

  auto* sw = app.add_subcommand("sweep", "eta sweep of relevant-factor counts");
  sw->add_option("--config", config_path, "base config file")->required();
  sw->add_option("--etas", etas_csv, "comma-separated eta values")->required();
  sw->add_option("--out", out_dir, "output directory override");

  auto* me = app.add_subcommand("metrics", "disentanglement metrics for a checkpoint");
  me->add_option("--checkpoint", ckpt, "checkpoint archive")->required();
  me->add_option("--out", out_dir, "output directory for reports/CSVs");
  me->add_option("--votes", votes, "votes per phase for metric I/II");
  me->add_option("--batch-per-vote", batch_per_vote, "samples per vote");
  me->add_option("--seed", seed_override, "metric sampling seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (t->parsed()) return cmd_train(config_path, out_dir, seed_override);
    if (tr->parsed()) return cmd_traverse(ckpt, out_dir, lo, hi, steps, anchors);
    if (rp->parsed()) return cmd_report(ckpt, th_alpha, th_dof, th_r);
    if (sw->parsed()) return cmd_sweep(config_path, etas_csv, out_dir);
    if (me->parsed())
      return cmd_metrics(ckpt, out_dir, votes, batch_per_vote, seed_override);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
