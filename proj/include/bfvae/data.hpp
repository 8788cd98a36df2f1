// SPDX-License-Identifier: Apache-2.0
//
// Ground-truth-factor datasets: the deterministic synthetic soft-rectangle
// generator, the grid-archive loader (public sprites array layout), and the
// factor-conditioned samplers used by the vote-based metrics.
//
// Datasets are immutable after construction; samplers are pure given seeds.
// Pixels are held as 8-bit values and exposed as doubles in [0,1]; the
// generator quantizes to the same 8-bit grid so a save/load round trip is
// exact.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bfvae/autograd.hpp"  // for Mat

namespace bfvae {

using ad::Mat;

struct FactorDataset {
  std::string name;
  int channels = 1, height = 0, width = 0;
  std::vector<uint8_t> pixels;       // N * channels*height*width, row-major
  Mat factor_values;                 // N x K, real settings in [0,1]
  Eigen::MatrixXi classes;           // N x K, grid indices
  std::vector<int> factor_sizes;     // K grid sizes
  std::vector<std::string> factor_names;
  std::vector<std::string> notes;    // loader warnings (dropped factors, ...)

  size_t n() const { return static_cast<size_t>(factor_values.rows()); }
  int num_factors() const { return static_cast<int>(factor_sizes.size()); }
  int obs_dim() const { return channels * height * width; }

  Mat batch(const std::vector<size_t>& rows) const;
  Mat observation(size_t row) const;  // 1 x obs_dim

  // Row index of a grid cell (requires the complete-grid invariant).
  size_t row_of(const std::vector<int>& class_idx) const;

  void validate_grid() const;  // throws on incomplete/duplicated grids

  std::vector<size_t> grid_lookup;  // linear class index -> row
};

// Renders soft (box-filtered) rectangles on an image_size^2 canvas, one
// image per cell of the factor grid, plus `noise_channels` channels of
// i.i.d. uniform 8-bit noise regenerated per image. Factors are drawn, in
// order, from {x, y, scale, intensity}; grid.size() selects how many.
FactorDataset synth_bars(const std::vector<int>& grid, int image_size,
                         int noise_channels, uint64_t seed);

// Grid-archive layout: named dense arrays `imgs` (u1, N x H x W or
// N x C x H x W), `latents_values` (f8, N x K), `latents_classes`
// (i8, N x K, optional -- derived from values when absent) and optional
// `metadata` (JSON text). Constant factors are dropped with a warning;
// a non-grid factor table is an error.
FactorDataset load_grid_archive(const std::string& path);
void save_grid_archive(const FactorDataset& ds, const std::string& path);

// Restriction to one value of one factor (the factor is removed from the
// result). The restriction of a complete grid is again a complete grid.
FactorDataset filter_factor(const FactorDataset& ds, int factor_index,
                            int class_value);

struct SampleBatch {
  Mat obs;            // batch x obs_dim
  Mat factor_values;  // batch x K
  std::vector<size_t> rows;
  bool with_replacement = false;  // batch exceeded the distinct combinations
};

// One uniformly chosen value of factor k shared by the whole batch; all
// other factors i.i.d. uniform over their grids.
SampleBatch sample_fixed_factor(const FactorDataset& ds, int factor_index,
                                int batch, uint64_t seed);

// Dual: factor k sweeps >= min(batch, grid_k) distinct values; the other
// factors are frozen at one random value.
SampleBatch sample_varied_factor(const FactorDataset& ds, int factor_index,
                                 int batch, uint64_t seed);

}  // namespace bfvae
