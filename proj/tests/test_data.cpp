// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "bfvae/data.hpp"
#include "bfvae/distributions.hpp"
#include "bfvae/npz.hpp"
#include "bfvae/rng.hpp"

using namespace bfvae;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) {
    path = (std::filesystem::temp_directory_path() / name).string();
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("npz: round trip of doubles, int64 and bytes") {
  TempFile tf("bfvae_npz_rt.npz");
  npz::Archive ar;
  ar["a"] = npz::Array::from_doubles({2, 3}, {1.5, -2.0, 3.25, 0.0, 1e300, -4.5});
  ar["b"] = npz::Array::from_int64({4}, {1, -7, 1LL << 40, 0});
  ar["c"] = npz::Array::from_string("hello archive");
  npz::save(tf.path, ar);
  npz::Archive back = npz::load(tf.path);
  CHECK(back.size() == 3);
  CHECK(back["a"].shape == std::vector<size_t>{2, 3});
  CHECK(back["a"].to_doubles() == ar["a"].to_doubles());
  CHECK(back["b"].to_int64() == ar["b"].to_int64());
  CHECK(back["c"].to_string() == "hello archive");
}

TEST_CASE("npz: truncated archives fail loudly, never partially load") {
  TempFile tf("bfvae_npz_trunc.npz");
  npz::Archive ar;
  std::vector<double> big(4096, 1.0);
  ar["payload"] = npz::Array::from_doubles({4096}, big);
  npz::save(tf.path, ar);
  const auto full = std::filesystem::file_size(tf.path);
  std::filesystem::resize_file(tf.path, full / 2);
  CHECK_THROWS_AS(npz::load(tf.path), std::runtime_error);
  CHECK_THROWS_AS(npz::load("/nonexistent/definitely_missing.npz"), std::runtime_error);
}

TEST_CASE("synth_bars: geometry, determinism, blank at zero intensity") {
  FactorDataset ds = synth_bars({8, 8}, 16, 0, 3);
  CHECK(ds.n() == 64);
  CHECK(ds.obs_dim() == 256);
  CHECK(ds.num_factors() == 2);
  ds.validate_grid();

  // identical config + seed -> byte-identical
  FactorDataset ds2 = synth_bars({8, 8}, 16, 0, 3);
  CHECK(ds.pixels == ds2.pixels);
  FactorDataset ds3 = synth_bars({8, 8}, 16, 0, 4);
  CHECK(ds.pixels == ds3.pixels);  // no noise channels -> seed has no effect

  // two images differing only in x: row sums agree, column sums differ
  const size_t r1 = ds.row_of({2, 5});
  const size_t r2 = ds.row_of({6, 5});
  Mat im1 = ds.observation(r1), im2 = ds.observation(r2);
  Vec rowsum1 = Vec::Zero(16), rowsum2 = Vec::Zero(16);
  Vec colsum1 = Vec::Zero(16), colsum2 = Vec::Zero(16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      rowsum1[y] += im1(0, y * 16 + x);
      rowsum2[y] += im2(0, y * 16 + x);
      colsum1[x] += im1(0, y * 16 + x);
      colsum2[x] += im2(0, y * 16 + x);
    }
  CHECK((rowsum1 - rowsum2).abs().maxCoeff() < 0.05);  // 8-bit quantization slack
  CHECK((colsum1 - colsum2).abs().maxCoeff() > 0.5);

  // intensity = 0 renders a blank canvas
  FactorDataset di = synth_bars({3, 3, 2, 4}, 16, 0, 9);
  const size_t blank = di.row_of({1, 1, 1, 0});
  CHECK(di.observation(blank).cwiseAbs().maxCoeff() == 0.0);

  CHECK_THROWS_AS(synth_bars({8, 8}, 4, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(synth_bars({8}, 16, 0, 1), std::invalid_argument);
  CHECK_THROWS_WITH_AS(synth_bars({2000, 2000, 10}, 256, 0, 1),
                       doctest::Contains("budget"), std::invalid_argument);
}

TEST_CASE("synth_bars: factor rows form the exact Cartesian product") {
  FactorDataset ds = synth_bars({4, 3, 2}, 16, 1, 7);
  CHECK(ds.n() == 24);
  CHECK(ds.channels == 2);
  std::set<std::tuple<int, int, int>> combos;
  for (size_t r = 0; r < ds.n(); ++r)
    combos.insert({ds.classes(static_cast<Eigen::Index>(r), 0),
                   ds.classes(static_cast<Eigen::Index>(r), 1),
                   ds.classes(static_cast<Eigen::Index>(r), 2)});
  CHECK(combos.size() == 24);
  // noise channels vary across rows even at equal rendered content
  const Mat a = ds.observation(0), b = ds.observation(1);
  CHECK((a.rightCols(256) - b.rightCols(256)).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("grid archive: save / load round trip is exact") {
  TempFile tf("bfvae_grid_rt.npz");
  FactorDataset ds = synth_bars({5, 4, 3}, 16, 1, 11);
  save_grid_archive(ds, tf.path);
  FactorDataset back = load_grid_archive(tf.path);
  CHECK(back.n() == ds.n());
  CHECK(back.pixels == ds.pixels);
  CHECK(back.factor_sizes == ds.factor_sizes);
  CHECK(back.factor_names == ds.factor_names);
  CHECK((back.factor_values - ds.factor_values).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.classes == ds.classes);
  CHECK(back.name == "synth_bars");
}

TEST_CASE("grid archive: loader validation") {
  TempFile tf("bfvae_grid_bad.npz");

  SUBCASE("missing arrays") {
    npz::Archive ar;
    ar["imgs"] = npz::Array::from_bytes({2, 4, 4}, std::vector<uint8_t>(32, 0));
    npz::save(tf.path, ar);
    CHECK_THROWS_WITH_AS(load_grid_archive(tf.path),
                         doctest::Contains("latents_values"), std::runtime_error);
  }
  SUBCASE("non-grid structure") {
    npz::Archive ar;
    ar["imgs"] = npz::Array::from_bytes({3, 2, 2}, std::vector<uint8_t>(12, 0));
    // duplicated combination (0,0) and missing (1,1)
    ar["latents_values"] = npz::Array::from_doubles({3, 2}, {0, 0, 0, 0, 1, 0});
    ar["latents_classes"] = npz::Array::from_int64({3, 2}, {0, 0, 0, 0, 1, 0});
    npz::save(tf.path, ar);
    CHECK_THROWS_AS(load_grid_archive(tf.path), std::runtime_error);
  }
  SUBCASE("constant factors dropped with a note") {
    FactorDataset ds = synth_bars({4, 3}, 16, 0, 1);
    // append a constant factor column by writing the archive manually
    npz::Archive ar;
    ar["imgs"] = npz::Array::from_bytes(
        {ds.n(), 16, 16}, std::vector<uint8_t>(ds.pixels.begin(), ds.pixels.end()));
    std::vector<double> lv;
    std::vector<int64_t> lc;
    for (size_t r = 0; r < ds.n(); ++r) {
      lv.push_back(0.5);  // constant first factor, like sprite color
      lc.push_back(0);
      for (int k = 0; k < 2; ++k) {
        lv.push_back(ds.factor_values(static_cast<Eigen::Index>(r), k));
        lc.push_back(ds.classes(static_cast<Eigen::Index>(r), k));
      }
    }
    ar["latents_values"] = npz::Array::from_doubles({ds.n(), 3}, lv);
    ar["latents_classes"] = npz::Array::from_int64({ds.n(), 3}, lc);
    npz::save(tf.path, ar);
    FactorDataset back = load_grid_archive(tf.path);
    CHECK(back.num_factors() == 2);
    REQUIRE(!back.notes.empty());
    CHECK(back.notes[0].find("dropped constant factor") != std::string::npos);
  }
}

TEST_CASE("filter_factor restricts to a sub-grid") {
  FactorDataset ds = synth_bars({4, 3, 2}, 16, 0, 5);
  FactorDataset sub = filter_factor(ds, 2, 1);
  CHECK(sub.n() == 12);
  CHECK(sub.num_factors() == 2);
  sub.validate_grid();
  CHECK_THROWS_AS(filter_factor(ds, 5, 0), std::invalid_argument);
  CHECK_THROWS_AS(filter_factor(ds, 2, 7), std::invalid_argument);
}

TEST_CASE("sample_fixed_factor: contract") {
  FactorDataset ds = synth_bars({8, 8, 6}, 16, 0, 13);
  SampleBatch sb = sample_fixed_factor(ds, 1, 64, 21);
  CHECK(sb.obs.rows() == 64);
  // fixed column constant
  CHECK((sb.factor_values.col(1).array() == sb.factor_values(0, 1)).all());
  // other columns non-constant for batch >= 16
  for (int k : {0, 2}) {
    CHECK((sb.factor_values.col(k).array() != sb.factor_values(0, k)).any());
  }
  // deterministic under fixed seed
  SampleBatch sb2 = sample_fixed_factor(ds, 1, 64, 21);
  CHECK(sb.rows == sb2.rows);
  CHECK(sb.with_replacement);  // 8*6 = 48 distinct combos < batch 64
}

TEST_CASE("sample_fixed_factor: replacement flag") {
  FactorDataset ds = synth_bars({8, 8, 6}, 16, 0, 13);
  // fixing factor 0 leaves 8*6 = 48 combos; batch 64 needs replacement
  CHECK(sample_fixed_factor(ds, 0, 64, 2).with_replacement);
  CHECK(!sample_fixed_factor(ds, 0, 32, 2).with_replacement);
}

TEST_CASE("sample_varied_factor: contract") {
  FactorDataset ds = synth_bars({8, 8, 6}, 16, 0, 13);
  SampleBatch sb = sample_varied_factor(ds, 2, 64, 23);
  // varied column spans all 6 distinct values
  std::set<double> vals;
  for (int i = 0; i < 64; ++i) vals.insert(sb.factor_values(i, 2));
  CHECK(vals.size() == 6);
  // other columns constant
  for (int k : {0, 1})
    CHECK((sb.factor_values.col(k).array() == sb.factor_values(0, k)).all());
  CHECK(sb.with_replacement);  // 64 > 6
  SampleBatch small = sample_varied_factor(ds, 2, 4, 23);
  std::set<double> vals4;
  for (int i = 0; i < 4; ++i) vals4.insert(small.factor_values(i, 2));
  CHECK(vals4.size() == 4);
  CHECK(!small.with_replacement);
}

TEST_CASE("sampler marginals: random factors are uniform (chi-square at 1%)") {
  FactorDataset ds = synth_bars({8, 8}, 16, 0, 17);
  // fix factor 0; factor 1 should be uniform over its 8 values
  std::vector<int> counts(8, 0);
  const int draws = 10000;
  int total = 0;
  for (int i = 0; i < draws / 10; ++i) {
    SampleBatch sb = sample_fixed_factor(ds, 0, 10, 1000 + static_cast<uint64_t>(i));
    for (int b = 0; b < 10; ++b) {
      const int cls = static_cast<int>(std::lround(sb.factor_values(b, 1) * 7));
      counts[static_cast<size_t>(cls)]++;
      ++total;
    }
  }
  const double expect = static_cast<double>(total) / 8.0;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expect) * (c - expect) / expect;
  CHECK(chi2 < 18.475);  // chi-square critical value, 7 dof, 1%
}

TEST_CASE("dataset batch access validates rows") {
  FactorDataset ds = synth_bars({3, 3}, 16, 0, 1);
  CHECK_THROWS_AS(ds.batch({100}), std::out_of_range);
  CHECK_THROWS_AS(ds.row_of({5, 0}), std::out_of_range);
  CHECK_THROWS_AS(ds.row_of({0}), std::invalid_argument);
}
