// SPDX-License-Identifier: Apache-2.0
#include "bfvae/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "bfvae/npz.hpp"
#include "bfvae/rng.hpp"

namespace bfvae {

namespace {

constexpr size_t kMemoryBudgetBytes = 2'000'000'000;

enum Stream : uint64_t { kNoise = 11, kFixed = 12, kVaried = 13 };

uint8_t quantize(double v) {
  return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// box-filtered coverage of pixel u (of S) by the interval [c-h, c+h]
double coverage(int u, int s, double c, double h) {
  const double lo = static_cast<double>(u) / s;
  const double hi = static_cast<double>(u + 1) / s;
  const double overlap = std::min(hi, c + h) - std::max(lo, c - h);
  return std::clamp(overlap * s, 0.0, 1.0);
}

}  // namespace

Mat FactorDataset::batch(const std::vector<size_t>& rows) const {
  const int od = obs_dim();
  Mat out(static_cast<Eigen::Index>(rows.size()), od);
  for (size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n()) throw std::out_of_range("FactorDataset::batch: row out of range");
    const uint8_t* src = pixels.data() + rows[i] * static_cast<size_t>(od);
    for (int j = 0; j < od; ++j)
      out(static_cast<Eigen::Index>(i), j) = src[j] / 255.0;
  }
  return out;
}

Mat FactorDataset::observation(size_t row) const { return batch({row}); }

size_t FactorDataset::row_of(const std::vector<int>& class_idx) const {
  if (class_idx.size() != factor_sizes.size())
    throw std::invalid_argument("row_of: wrong number of indices");
  size_t linear = 0;
  for (size_t k = 0; k < class_idx.size(); ++k) {
    if (class_idx[k] < 0 || class_idx[k] >= factor_sizes[k])
      throw std::out_of_range("row_of: class index out of range");
    linear = linear * static_cast<size_t>(factor_sizes[k]) +
             static_cast<size_t>(class_idx[k]);
  }
  return grid_lookup[linear];
}

void FactorDataset::validate_grid() const {
  size_t expect = 1;
  for (int g : factor_sizes) {
    if (g < 1) throw std::runtime_error("dataset: factor size must be >= 1");
    expect *= static_cast<size_t>(g);
  }
  if (expect != n()) {
    std::ostringstream os;
    os << "dataset '" << name << "': " << n() << " rows but the factor grid has "
       << expect << " cells; not a complete Cartesian product";
    throw std::runtime_error(os.str());
  }
  std::vector<uint8_t> seen(expect, 0);
  for (size_t r = 0; r < n(); ++r) {
    size_t linear = 0;
    for (int k = 0; k < num_factors(); ++k) {
      const int c = classes(static_cast<Eigen::Index>(r), k);
      if (c < 0 || c >= factor_sizes[k])
        throw std::runtime_error("dataset: class index outside its grid");
      linear = linear * static_cast<size_t>(factor_sizes[k]) + static_cast<size_t>(c);
    }
    if (seen[linear]++)
      throw std::runtime_error("dataset: duplicated factor combination; not a grid");
  }
}

namespace {

void build_lookup(FactorDataset& ds) {
  ds.validate_grid();
  ds.grid_lookup.assign(ds.n(), 0);
  for (size_t r = 0; r < ds.n(); ++r) {
    size_t linear = 0;
    for (int k = 0; k < ds.num_factors(); ++k)
      linear = linear * static_cast<size_t>(ds.factor_sizes[k]) +
               static_cast<size_t>(ds.classes(static_cast<Eigen::Index>(r), k));
    ds.grid_lookup[linear] = r;
  }
}

}  // namespace

FactorDataset synth_bars(const std::vector<int>& grid, int image_size,
                         int noise_channels, uint64_t seed) {
  if (image_size < 8) throw std::invalid_argument("synth_bars: image_size must be >= 8");
  if (grid.size() < 2 || grid.size() > 4)
    throw std::invalid_argument("synth_bars: between 2 and 4 factors supported");
  if (noise_channels < 0) throw std::invalid_argument("synth_bars: noise_channels < 0");

  static const std::vector<std::string> kFactorNames = {"x", "y", "scale", "intensity"};
  const int K = static_cast<int>(grid.size());
  size_t n = 1;
  for (int g : grid) {
    if (g < 1) throw std::invalid_argument("synth_bars: grid sizes must be >= 1");
    n *= static_cast<size_t>(g);
  }
  const int channels = 1 + noise_channels;
  const size_t bytes = n * static_cast<size_t>(channels) *
                       static_cast<size_t>(image_size) * static_cast<size_t>(image_size);
  if (bytes > kMemoryBudgetBytes) {
    std::ostringstream os;
    os << "synth_bars: grid needs " << bytes << " bytes of pixel storage (budget "
       << kMemoryBudgetBytes << "); shrink the grid or image size";
    throw std::invalid_argument(os.str());
  }

  FactorDataset ds;
  ds.name = "synth_bars";
  ds.channels = channels;
  ds.height = image_size;
  ds.width = image_size;
  ds.factor_sizes = grid;
  ds.factor_names.assign(kFactorNames.begin(), kFactorNames.begin() + K);
  ds.factor_values.resize(static_cast<Eigen::Index>(n), K);
  ds.classes.resize(static_cast<Eigen::Index>(n), K);
  ds.pixels.assign(bytes, 0);

  // geometry: centres keep the largest rectangle fully inside the canvas
  constexpr double kMargin = 0.25;
  constexpr double kHalfMin = 0.06;
  constexpr double kHalfMax = 0.20;

  Rng noise_rng(derive_seed(seed, kNoise));
  const int hw = image_size * image_size;

  std::vector<int> idx(K, 0);
  for (size_t r = 0; r < n; ++r) {
    double vx = 0.5, vy = 0.5, vs = 0.5, vi = 1.0;
    for (int k = 0; k < K; ++k) {
      const double v = grid[k] == 1 ? 0.5
                                    : static_cast<double>(idx[k]) / (grid[k] - 1);
      ds.factor_values(static_cast<Eigen::Index>(r), k) = v;
      ds.classes(static_cast<Eigen::Index>(r), k) = idx[k];
      switch (k) {
        case 0: vx = v; break;
        case 1: vy = v; break;
        case 2: vs = v; break;
        case 3: vi = v; break;
      }
    }
    const double cx = kMargin + vx * (1.0 - 2.0 * kMargin);
    const double cy = kMargin + vy * (1.0 - 2.0 * kMargin);
    const double h = kHalfMin + vs * (kHalfMax - kHalfMin);

    uint8_t* img = ds.pixels.data() + r * static_cast<size_t>(channels) * hw;
    for (int y = 0; y < image_size; ++y) {
      const double cyv = coverage(y, image_size, cy, h);
      if (cyv == 0.0) continue;
      for (int x = 0; x < image_size; ++x)
        img[y * image_size + x] = quantize(vi * cyv * coverage(x, image_size, cx, h));
    }
    for (int c = 1; c < channels; ++c) {
      uint8_t* chan = img + c * hw;
      for (int p = 0; p < hw; ++p)
        chan[p] = static_cast<uint8_t>(noise_rng.index(256));
    }

    // advance the grid (last factor fastest)
    for (int k = K - 1; k >= 0; --k) {
      if (++idx[k] < grid[k]) break;
      idx[k] = 0;
    }
  }
  build_lookup(ds);
  return ds;
}

void save_grid_archive(const FactorDataset& ds, const std::string& path) {
  npz::Archive ar;
  std::vector<size_t> img_shape;
  if (ds.channels == 1)
    img_shape = {ds.n(), static_cast<size_t>(ds.height), static_cast<size_t>(ds.width)};
  else
    img_shape = {ds.n(), static_cast<size_t>(ds.channels),
                 static_cast<size_t>(ds.height), static_cast<size_t>(ds.width)};
  ar["imgs"] = npz::Array::from_bytes(img_shape, ds.pixels);

  const size_t N = ds.n();
  const size_t K = static_cast<size_t>(ds.num_factors());
  std::vector<double> lv(N * K);
  std::vector<int64_t> lc(N * K);
  for (size_t r = 0; r < N; ++r)
    for (size_t k = 0; k < K; ++k) {
      lv[r * K + k] = ds.factor_values(static_cast<Eigen::Index>(r), static_cast<int>(k));
      lc[r * K + k] = ds.classes(static_cast<Eigen::Index>(r), static_cast<int>(k));
    }
  ar["latents_values"] = npz::Array::from_doubles({N, K}, lv);
  ar["latents_classes"] = npz::Array::from_int64({N, K}, lc);

  nlohmann::json meta;
  meta["name"] = ds.name;
  meta["factor_names"] = ds.factor_names;
  meta["factor_sizes"] = ds.factor_sizes;
  meta["channels"] = ds.channels;
  ar["metadata"] = npz::Array::from_string(meta.dump());
  npz::save(path, ar);
}

FactorDataset load_grid_archive(const std::string& path) {
  npz::Archive ar = npz::load(path);
  auto need = [&](const char* key) -> const npz::Array& {
    auto it = ar.find(key);
    if (it == ar.end())
      throw std::runtime_error("grid archive '" + path + "': missing array '" +
                               std::string(key) + "'");
    return it->second;
  };

  const npz::Array& imgs = need("imgs");
  const npz::Array& lv = need("latents_values");

  FactorDataset ds;
  ds.name = path;
  if (imgs.shape.size() == 3) {
    ds.channels = 1;
    ds.height = static_cast<int>(imgs.shape[1]);
    ds.width = static_cast<int>(imgs.shape[2]);
  } else if (imgs.shape.size() == 4) {
    ds.channels = static_cast<int>(imgs.shape[1]);
    ds.height = static_cast<int>(imgs.shape[2]);
    ds.width = static_cast<int>(imgs.shape[3]);
  } else {
    throw std::runtime_error("grid archive: imgs must be N x H x W or N x C x H x W");
  }
  const size_t N = imgs.shape[0];
  if (lv.shape.size() != 2 || lv.shape[0] != N)
    throw std::runtime_error("grid archive: latents_values must be N x K");
  const size_t K_all = lv.shape[1];

  if (imgs.descr == "|u1") {
    ds.pixels = imgs.data;
  } else {
    const auto v = imgs.to_doubles();
    // accept binary {0,1} or [0,1] float images, e.g. 64x64 sprites variants
    ds.pixels.resize(v.size());
    const double scale = *std::max_element(v.begin(), v.end()) <= 1.0 ? 255.0 : 1.0;
    for (size_t i = 0; i < v.size(); ++i) ds.pixels[i] = quantize(v[i] * scale / 255.0);
  }
  if (ds.pixels.size() != N * static_cast<size_t>(ds.obs_dim()))
    throw std::runtime_error("grid archive: imgs payload size mismatch");

  const auto values = lv.to_doubles();
  std::vector<int64_t> cls;
  if (ar.count("latents_classes")) {
    const npz::Array& lc = ar.at("latents_classes");
    if (lc.shape.size() != 2 || lc.shape[0] != N || lc.shape[1] != K_all)
      throw std::runtime_error("grid archive: latents_classes shape mismatch");
    cls = lc.to_int64();
  } else {
    // derive classes by ranking the distinct values in each column
    cls.resize(values.size());
    for (size_t k = 0; k < K_all; ++k) {
      std::set<double> uniq;
      for (size_t r = 0; r < N; ++r) uniq.insert(values[r * K_all + k]);
      std::map<double, int64_t> rank;
      int64_t i = 0;
      for (double v : uniq) rank[v] = i++;
      for (size_t r = 0; r < N; ++r) cls[r * K_all + k] = rank[values[r * K_all + k]];
    }
  }

  std::vector<std::string> names(K_all);
  for (size_t k = 0; k < K_all; ++k) names[k] = "factor" + std::to_string(k);
  if (ar.count("metadata")) {
    try {
      auto meta = nlohmann::json::parse(ar.at("metadata").to_string());
      if (meta.contains("name")) ds.name = meta["name"].get<std::string>();
      if (meta.contains("factor_names")) {
        auto mn = meta["factor_names"].get<std::vector<std::string>>();
        if (mn.size() == K_all) names = mn;
      }
    } catch (const nlohmann::json::exception&) {
      ds.notes.push_back("metadata present but not parseable; ignored");
    }
  }

  // keep non-constant factors; drop constants with a warning
  std::vector<size_t> keep;
  for (size_t k = 0; k < K_all; ++k) {
    int64_t mx = 0;
    for (size_t r = 0; r < N; ++r) mx = std::max(mx, cls[r * K_all + k]);
    if (mx > 0) {
      keep.push_back(k);
    } else {
      ds.notes.push_back("dropped constant factor '" + names[k] + "'");
    }
  }
  if (keep.empty()) throw std::runtime_error("grid archive: all factors are constant");

  const int K = static_cast<int>(keep.size());
  ds.factor_values.resize(static_cast<Eigen::Index>(N), K);
  ds.classes.resize(static_cast<Eigen::Index>(N), K);
  ds.factor_sizes.assign(K, 0);
  ds.factor_names.clear();
  for (int k = 0; k < K; ++k) ds.factor_names.push_back(names[keep[static_cast<size_t>(k)]]);
  for (size_t r = 0; r < N; ++r)
    for (int k = 0; k < K; ++k) {
      const size_t src = keep[static_cast<size_t>(k)];
      ds.factor_values(static_cast<Eigen::Index>(r), k) = values[r * K_all + src];
      const int c = static_cast<int>(cls[r * K_all + src]);
      ds.classes(static_cast<Eigen::Index>(r), k) = c;
      ds.factor_sizes[static_cast<size_t>(k)] =
          std::max(ds.factor_sizes[static_cast<size_t>(k)], c + 1);
    }

  build_lookup(ds);  // throws a descriptive error on non-grid structure
  return ds;
}

FactorDataset filter_factor(const FactorDataset& ds, int factor_index, int class_value) {
  if (factor_index < 0 || factor_index >= ds.num_factors())
    throw std::invalid_argument("filter_factor: bad factor index");
  if (class_value < 0 || class_value >= ds.factor_sizes[static_cast<size_t>(factor_index)])
    throw std::invalid_argument("filter_factor: bad class value");

  FactorDataset out;
  out.name = ds.name + "[" + ds.factor_names[static_cast<size_t>(factor_index)] + "=" +
             std::to_string(class_value) + "]";
  out.channels = ds.channels;
  out.height = ds.height;
  out.width = ds.width;
  const int K = ds.num_factors() - 1;
  std::vector<size_t> rows;
  for (size_t r = 0; r < ds.n(); ++r)
    if (ds.classes(static_cast<Eigen::Index>(r), factor_index) == class_value)
      rows.push_back(r);

  out.factor_values.resize(static_cast<Eigen::Index>(rows.size()), K);
  out.classes.resize(static_cast<Eigen::Index>(rows.size()), K);
  for (int k = 0, o = 0; k < ds.num_factors(); ++k) {
    if (k == factor_index) continue;
    out.factor_sizes.push_back(ds.factor_sizes[static_cast<size_t>(k)]);
    out.factor_names.push_back(ds.factor_names[static_cast<size_t>(k)]);
    for (size_t i = 0; i < rows.size(); ++i) {
      out.factor_values(static_cast<Eigen::Index>(i), o) =
          ds.factor_values(static_cast<Eigen::Index>(rows[i]), k);
      out.classes(static_cast<Eigen::Index>(i), o) =
          ds.classes(static_cast<Eigen::Index>(rows[i]), k);
    }
    ++o;
  }
  const size_t od = static_cast<size_t>(ds.obs_dim());
  out.pixels.resize(rows.size() * od);
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(ds.pixels.data() + rows[i] * od, od, out.pixels.data() + i * od);
  build_lookup(out);
  return out;
}

namespace {

SampleBatch gather(const FactorDataset& ds, const std::vector<std::vector<int>>& combos) {
  SampleBatch sb;
  sb.rows.reserve(combos.size());
  for (const auto& c : combos) sb.rows.push_back(ds.row_of(c));
  sb.obs = ds.batch(sb.rows);
  sb.factor_values.resize(static_cast<Eigen::Index>(sb.rows.size()), ds.num_factors());
  for (size_t i = 0; i < sb.rows.size(); ++i)
    sb.factor_values.row(static_cast<Eigen::Index>(i)) =
        ds.factor_values.row(static_cast<Eigen::Index>(sb.rows[i]));
  return sb;
}

}  // namespace

SampleBatch sample_fixed_factor(const FactorDataset& ds, int factor_index, int batch,
                                uint64_t seed) {
  if (factor_index < 0 || factor_index >= ds.num_factors())
    throw std::invalid_argument("sample_fixed_factor: bad factor index");
  if (batch < 1) throw std::invalid_argument("sample_fixed_factor: batch must be >= 1");
  Rng rng(derive_seed(seed, kFixed));
  const int K = ds.num_factors();
  const int fixed_value =
      static_cast<int>(rng.index(static_cast<size_t>(ds.factor_sizes[static_cast<size_t>(factor_index)])));
  std::vector<std::vector<int>> combos(static_cast<size_t>(batch), std::vector<int>(K));
  for (auto& c : combos) {
    for (int k = 0; k < K; ++k)
      c[static_cast<size_t>(k)] =
          k == factor_index
              ? fixed_value
              : static_cast<int>(rng.index(static_cast<size_t>(ds.factor_sizes[static_cast<size_t>(k)])));
  }
  SampleBatch sb = gather(ds, combos);
  size_t others = 1;
  for (int k = 0; k < K; ++k)
    if (k != factor_index) others *= static_cast<size_t>(ds.factor_sizes[static_cast<size_t>(k)]);
  sb.with_replacement = static_cast<size_t>(batch) > others;
  return sb;
}

SampleBatch sample_varied_factor(const FactorDataset& ds, int factor_index, int batch,
                                 uint64_t seed) {
  if (factor_index < 0 || factor_index >= ds.num_factors())
    throw std::invalid_argument("sample_varied_factor: bad factor index");
  if (batch < 1) throw std::invalid_argument("sample_varied_factor: batch must be >= 1");
  Rng rng(derive_seed(seed, kVaried));
  const int K = ds.num_factors();
  const int gk = ds.factor_sizes[static_cast<size_t>(factor_index)];
  std::vector<int> frozen(static_cast<size_t>(K));
  for (int k = 0; k < K; ++k)
    frozen[static_cast<size_t>(k)] =
        static_cast<int>(rng.index(static_cast<size_t>(ds.factor_sizes[static_cast<size_t>(k)])));
  // cycle a fresh permutation of factor k's grid so every value appears
  auto perm = rng.permutation(static_cast<size_t>(gk));
  std::vector<std::vector<int>> combos(static_cast<size_t>(batch), frozen);
  for (int i = 0; i < batch; ++i)
    combos[static_cast<size_t>(i)][static_cast<size_t>(factor_index)] =
        static_cast<int>(perm[static_cast<size_t>(i) % perm.size()]);
  SampleBatch sb = gather(ds, combos);
  sb.with_replacement = batch > gk;
  return sb;
}

}  // namespace bfvae
