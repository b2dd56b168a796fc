#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tsbn/errors.hpp"
#include "tsbn/gsim.hpp"
#include "tsbn/png_io.hpp"
#include "tsbn/rng.hpp"

namespace tsbn {

struct LabeledSample {
  std::string id;
  GrayImage image;
  ClassLabel label;
};

struct Dataset {
  std::string name;
  std::vector<LabeledSample> samples;

  long positive_count() const {
    long n = 0;
    for (const auto& s : samples) n += s.label.a;
    return n;
  }

  // Training requires at least two samples and both classes present.
  void validate_for_training() const {
    if (samples.size() < 2)
      throw InvalidInput("dataset '" + name + "' has fewer than 2 samples");
    long pos = positive_count();
    if (pos == 0 || pos == static_cast<long>(samples.size()))
      throw InvalidInput("dataset '" + name + "' is missing one class");
  }

  Dataset subset(const std::vector<std::string>& ids,
                 const std::string& sub_name) const {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < samples.size(); ++i) index[samples[i].id] = i;
    Dataset out;
    out.name = sub_name;
    for (const auto& id : ids) {
      auto it = index.find(id);
      if (it == index.end())
        throw InvalidInput("subset: unknown sample id '" + id + "'");
      out.samples.push_back(samples[it->second]);
    }
    return out;
  }
};

struct SynthParams {
  int n_samples = 200;
  int height = 96;
  int width = 48;
  double positive_fraction = 100.0 / 387.0;
  double separability = 0.7;
  double noise_sigma = 0.08;
  std::uint64_t seed = 0;
};

// Stratified k-fold assignment over sample ids. Test sets partition the
// id set; every fold's positive count is within one sample of the
// globally proportional share.
struct FoldSplit {
  struct Fold {
    std::vector<std::string> train_ids;
    std::vector<std::string> test_ids;
  };
  int k = 0;
  std::vector<Fold> folds;
};

// Bilinear resampling with half-pixel centers. Downscaling by exactly 2x
// averages each 2x2 block; identity sizes reproduce the input. Output is
// clamped back to [0, 1].
inline GrayImage resize_image(const GrayImage& image, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1)
    throw InvalidInput("resize_image: target size must be >= 1");
  if (image.pixels.empty()) throw InvalidInput("resize_image: empty image");
  const int h = image.height, w = image.width;
  GrayImage out(out_h, out_w);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (int r = 0; r < out_h; ++r) {
    double fy = (r + 0.5) * sy - 0.5;
    int y0 = static_cast<int>(std::floor(fy));
    double wy = fy - y0;
    int y1 = y0 + 1;
    y0 = std::clamp(y0, 0, h - 1);
    y1 = std::clamp(y1, 0, h - 1);
    for (int c = 0; c < out_w; ++c) {
      double fx = (c + 0.5) * sx - 0.5;
      int x0 = static_cast<int>(std::floor(fx));
      double wx = fx - x0;
      int x1 = x0 + 1;
      x0 = std::clamp(x0, 0, w - 1);
      x1 = std::clamp(x1, 0, w - 1);
      double v = (1 - wy) * ((1 - wx) * image.at(y0, x0) + wx * image.at(y0, x1)) +
                 wy * ((1 - wx) * image.at(y1, x0) + wx * image.at(y1, x1));
      out.at(r, c) = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

// Phantom dataset: smooth low-frequency background plus Gaussian noise;
// positives additionally carry a bright elliptical mass whose peak
// intensity scales with `separability`. Pure function of its params.
inline Dataset make_synthetic(const SynthParams& params) {
  if (params.n_samples < 1) throw InvalidInput("make_synthetic: n_samples < 1");
  if (params.height < 16 || params.width < 16)
    throw InvalidInput("make_synthetic: dimensions must be >= 16");
  if (params.positive_fraction <= 0.0 || params.positive_fraction >= 1.0)
    throw InvalidInput("make_synthetic: positive_fraction must be in (0,1)");
  if (params.separability < 0.0 || params.separability > 1.0)
    throw InvalidInput("make_synthetic: separability must be in [0,1]");
  if (params.noise_sigma < 0.0)
    throw InvalidInput("make_synthetic: noise_sigma must be >= 0");

  const int h = params.height, w = params.width;
  const long n_pos = std::lround(params.n_samples * params.positive_fraction);
  Rng rng(params.seed);

  int digits = 1;
  for (int v = params.n_samples - 1; v >= 10; v /= 10) ++digits;

  Dataset out;
  out.name = "synthetic_n" + std::to_string(params.n_samples) + "_seed" +
             std::to_string(params.seed);
  out.samples.reserve(static_cast<std::size_t>(params.n_samples));
  for (int i = 0; i < params.n_samples; ++i) {
    // low-frequency background: coarse random grid, bilinearly upsampled
    const int gh = std::max(2, h / 16), gw = std::max(2, w / 16);
    GrayImage grid(gh, gw);
    for (double& v : grid.pixels) v = rng.uniform(0.40, 0.48);
    GrayImage img = resize_image(grid, h, w);

    const bool positive = i < n_pos;
    if (positive) {
      const double cy = rng.uniform(0.30, 0.70) * h;
      const double cx = rng.uniform(0.30, 0.70) * w;
      const double a = rng.uniform(0.16, 0.26) * h;
      const double b = rng.uniform(0.16, 0.26) * w;
      const double theta = rng.uniform(0.0, 3.14159265358979323846);
      const double ct = std::cos(theta), st = std::sin(theta);
      const double peak = 0.55 * params.separability;
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          double dy = r - cy, dx = c - cx;
          double u = (ct * dy + st * dx) / a;
          double v = (-st * dy + ct * dx) / b;
          double r2 = u * u + v * v;
          if (r2 < 4.0) img.at(r, c) += peak * std::exp(-3.0 * r2);
        }
      }
    }
    for (double& v : img.pixels)
      v = std::clamp(v + rng.normal(0.0, params.noise_sigma), 0.0, 1.0);

    std::ostringstream id;
    id << "s";
    std::string num = std::to_string(i);
    id << std::string(static_cast<std::size_t>(digits) - num.size(), '0') << num;
    out.samples.push_back({id.str(), std::move(img), ClassLabel(positive ? 1 : 0)});
  }
  return out;
}

// Shuffles each class with the given seed and deals ids round-robin into
// k test folds; train = complement, in dataset order.
inline FoldSplit stratified_kfold(const Dataset& dataset, int k,
                                  std::uint64_t seed) {
  if (k < 2) throw InvalidSplit("stratified_kfold: k must be >= 2");
  std::vector<std::string> by_class[2];
  for (const auto& s : dataset.samples)
    by_class[s.label.a].push_back(s.id);
  for (int c = 0; c < 2; ++c)
    if (static_cast<int>(by_class[c].size()) < k)
      throw InvalidSplit("stratified_kfold: class " + std::to_string(c) +
                         " has " + std::to_string(by_class[c].size()) +
                         " members, fewer than k=" + std::to_string(k));

  Rng rng(seed);
  FoldSplit split;
  split.k = k;
  split.folds.resize(static_cast<std::size_t>(k));
  std::vector<std::set<std::string>> test_sets(static_cast<std::size_t>(k));
  for (int c = 0; c < 2; ++c) {
    rng.shuffle(by_class[c]);
    for (std::size_t i = 0; i < by_class[c].size(); ++i)
      test_sets[i % static_cast<std::size_t>(k)].insert(by_class[c][i]);
  }
  for (int f = 0; f < k; ++f) {
    auto& fold = split.folds[static_cast<std::size_t>(f)];
    for (const auto& s : dataset.samples) {
      if (test_sets[static_cast<std::size_t>(f)].count(s.id))
        fold.test_ids.push_back(s.id);
      else
        fold.train_ids.push_back(s.id);
    }
  }
  return split;
}

// Single stratified train/held-out split; test share is rounded per
// class and kept strictly inside (0, n_c).
inline std::pair<std::vector<std::string>, std::vector<std::string>>
stratified_holdout(const Dataset& dataset, double fraction,
                   std::uint64_t seed) {
  if (fraction <= 0.0 || fraction >= 1.0)
    throw InvalidSplit("stratified_holdout: fraction must be in (0,1)");
  std::vector<std::string> by_class[2];
  for (const auto& s : dataset.samples) by_class[s.label.a].push_back(s.id);
  for (int c = 0; c < 2; ++c)
    if (by_class[c].size() < 2)
      throw InvalidSplit("stratified_holdout: class " + std::to_string(c) +
                         " needs at least 2 members");
  Rng rng(seed);
  std::set<std::string> test_set;
  for (int c = 0; c < 2; ++c) {
    rng.shuffle(by_class[c]);
    long n_c = static_cast<long>(by_class[c].size());
    long n_test = std::clamp(std::lround(fraction * n_c), 1L, n_c - 1);
    for (long i = 0; i < n_test; ++i)
      test_set.insert(by_class[c][static_cast<std::size_t>(i)]);
  }
  std::vector<std::string> train_ids, test_ids;
  for (const auto& s : dataset.samples) {
    if (test_set.count(s.id))
      test_ids.push_back(s.id);
    else
      train_ids.push_back(s.id);
  }
  return {train_ids, test_ids};
}

// ---- manifest CSV: header `id,path,label`, paths relative to the
// manifest's directory ----

inline Dataset load_manifest(const std::string& path, int target_h,
                             int target_w) {
  namespace fs = std::filesystem;
  std::ifstream f(path);
  if (!f) throw IoError("cannot open manifest: " + path);
  fs::path base = fs::path(path).parent_path();

  std::string line;
  if (!std::getline(f, line)) throw InvalidManifest("empty manifest: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,path,label")
    throw InvalidManifest("manifest header must be 'id,path,label', got '" +
                          line + "'");

  Dataset out;
  out.name = fs::path(path).stem().string();
  std::set<std::string> seen;
  long line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t p1 = line.find(',');
    std::size_t p2 = line.rfind(',');
    if (p1 == std::string::npos || p2 == p1)
      throw InvalidManifest("manifest line " + std::to_string(line_no) +
                            ": expected 'id,path,label'");
    std::string id = line.substr(0, p1);
    std::string rel = line.substr(p1 + 1, p2 - p1 - 1);
    std::string label_str = line.substr(p2 + 1);
    if (id.empty())
      throw InvalidManifest("manifest line " + std::to_string(line_no) +
                            ": empty id");
    if (!seen.insert(id).second)
      throw InvalidManifest("duplicate id '" + id + "' in manifest");
    if (label_str != "0" && label_str != "1")
      throw InvalidManifest("manifest line " + std::to_string(line_no) +
                            ": label must be 0 or 1, got '" + label_str + "'");
    GrayImage img = read_png_gray8((base / rel).string());
    img = normalize_image(img);
    if (img.height != target_h || img.width != target_w)
      img = resize_image(img, target_h, target_w);
    out.samples.push_back({id, std::move(img), ClassLabel(label_str == "1")});
  }
  if (out.samples.empty())
    throw InvalidManifest("manifest has no data rows: " + path);
  return out;
}

// Writes `<id>.png` per sample plus `manifest.csv`; returns the manifest
// path. The layout round-trips through load_manifest.
inline std::string save_dataset_png(const Dataset& dataset,
                                    const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  for (const auto& s : dataset.samples)
    write_png_gray8((fs::path(dir) / (s.id + ".png")).string(), s.image);
  std::string manifest = (fs::path(dir) / "manifest.csv").string();
  std::ofstream f(manifest, std::ios::binary);
  if (!f) throw IoError("cannot write manifest: " + manifest);
  f << "id,path,label\n";
  for (const auto& s : dataset.samples)
    f << s.id << "," << s.id << ".png," << s.label.a << "\n";
  return manifest;
}

}  // namespace tsbn
