#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsbn/errors.hpp"
#include "tsbn/metrics.hpp"
#include "tsbn/nets.hpp"
#include "tsbn/trainer.hpp"

namespace tsbn {

using json = nlohmann::ordered_json;

// ---- checkpoint: named-parameter archive ----
// magic, version, count, then per parameter: name, rank, dims, and the
// values as little-endian 32-bit floats. Loading fails loudly on any
// missing, extra, or reshaped parameter.

namespace ser_detail {

constexpr char kMagic[8] = {'T', 'S', 'B', 'N', 'C', 'K', 'P', 'T'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw IoError("truncated checkpoint: " + path);
  return v;
}

}  // namespace ser_detail

inline void save_checkpoint(const std::string& path,
                            const std::vector<Param*>& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(ser_detail::kMagic, 8);
  ser_detail::write_pod<std::uint32_t>(os, 1);  // version
  ser_detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const Param* p : params) {
    ser_detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    ser_detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.rank()));
    for (long d : p->value.shape)
      ser_detail::write_pod<std::int64_t>(os, static_cast<std::int64_t>(d));
    for (double v : p->value.data)
      ser_detail::write_pod<float>(os, static_cast<float>(v));
  }
  if (!os) throw IoError("write failed: " + path);
}

inline void load_checkpoint(const std::string& path,
                            const std::vector<Param*>& params) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, ser_detail::kMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + path);
  auto version = ser_detail::read_pod<std::uint32_t>(is, path);
  if (version != 1)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  auto count = ser_detail::read_pod<std::uint32_t>(is, path);

  struct Entry {
    std::vector<long> shape;
    std::vector<float> data;
  };
  std::map<std::string, Entry> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name_len = ser_detail::read_pod<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len))
      throw IoError("truncated checkpoint: " + path);
    auto rank = ser_detail::read_pod<std::uint32_t>(is, path);
    Entry e;
    long numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      long d = static_cast<long>(ser_detail::read_pod<std::int64_t>(is, path));
      if (d <= 0) throw IoError("bad dimension in checkpoint: " + path);
      e.shape.push_back(d);
      numel *= d;
    }
    e.data.resize(static_cast<std::size_t>(numel));
    if (!is.read(reinterpret_cast<char*>(e.data.data()),
                 static_cast<std::streamsize>(numel * sizeof(float))))
      throw IoError("truncated checkpoint: " + path);
    if (!entries.emplace(std::move(name), std::move(e)).second)
      throw IoError("duplicate parameter in checkpoint: " + path);
  }

  if (entries.size() != params.size())
    throw IoError("checkpoint holds " + std::to_string(entries.size()) +
                  " parameters, model expects " + std::to_string(params.size()));
  for (Param* p : params) {
    auto it = entries.find(p->name);
    if (it == entries.end())
      throw IoError("checkpoint is missing parameter '" + p->name + "'");
    if (it->second.shape != p->value.shape)
      throw IoError("shape mismatch for parameter '" + p->name + "'");
    for (std::size_t i = 0; i < it->second.data.size(); ++i)
      p->value.data[i] = static_cast<double>(it->second.data[i]);
  }
}

// ---- JSON configs ----

inline json arch_to_json(const ArchConfig& a) {
  return json{{"variant", a.variant},   {"in_h", a.in_h},
              {"in_w", a.in_w},         {"unet_base", a.unet_base},
              {"rdn_g0", a.rdn_g0},     {"rdn_growth", a.rdn_growth},
              {"rdn_blocks", a.rdn_blocks}, {"rdn_layers", a.rdn_layers},
              {"clf_base", a.clf_base}, {"embed_dim", a.embed_dim}};
}

inline ArchConfig arch_from_json(const json& j) {
  ArchConfig a;
  a.variant = j.value("variant", a.variant);
  a.in_h = j.value("in_h", a.in_h);
  a.in_w = j.value("in_w", a.in_w);
  a.unet_base = j.value("unet_base", a.unet_base);
  a.rdn_g0 = j.value("rdn_g0", a.rdn_g0);
  a.rdn_growth = j.value("rdn_growth", a.rdn_growth);
  a.rdn_blocks = j.value("rdn_blocks", a.rdn_blocks);
  a.rdn_layers = j.value("rdn_layers", a.rdn_layers);
  a.clf_base = j.value("clf_base", a.clf_base);
  a.embed_dim = j.value("embed_dim", a.embed_dim);
  return a;
}

inline json train_config_to_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"weight_decay", c.weight_decay},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"pretrain_epochs", c.pretrain_epochs},
              {"d", c.d},
              {"alpha", c.alpha},
              {"w", c.w},
              {"embed_dim", c.embed_dim},
              {"seed", c.seed},
              {"variant", c.variant},
              {"schedule", c.schedule},
              {"height", c.height},
              {"width", c.width}};
}

inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.pretrain_epochs = j.value("pretrain_epochs", c.pretrain_epochs);
  c.d = j.value("d", c.d);
  c.alpha = j.value("alpha", c.alpha);
  c.w = j.value("w", c.w);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.seed = j.value("seed", c.seed);
  c.variant = j.value("variant", c.variant);
  c.schedule = j.value("schedule", c.schedule);
  c.height = j.value("height", c.height);
  c.width = j.value("width", c.width);
  return c;
}

// ---- text emitters (fixed formatting so reruns are byte-identical) ----

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

inline void write_history_csv(const std::string& path, const TrainHistory& h) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write history: " + path);
  f << "epoch";
  for (const auto& c : h.columns) f << "," << c;
  f << "\n";
  for (std::size_t e = 0; e < h.rows.size(); ++e) {
    f << e;
    for (double v : h.rows[e]) f << "," << format_double(v);
    f << "\n";
  }
}

inline void write_roc_csv(const std::string& path,
                          const std::vector<std::pair<double, double>>& roc) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write roc: " + path);
  f << "fpr,tpr\n";
  for (const auto& [fpr, tpr] : roc)
    f << format_double(fpr) << "," << format_double(tpr) << "\n";
}

inline json metrics_to_json(const MetricsReport& r) {
  auto opt = [](const std::optional<double>& v) {
    return v ? json(*v) : json(nullptr);  // undefined metrics stay null
  };
  return json{{"accuracy", opt(r.accuracy)},
              {"sensitivity", opt(r.sensitivity)},
              {"specificity", opt(r.specificity)},
              {"youden", opt(r.youden)},
              {"f1", opt(r.f1)},
              {"auc", opt(r.auc)},
              {"n_samples", r.labels.size()}};
}

inline json cv_to_json(const CvReport& cv) {
  json folds = json::array();
  for (const auto& f : cv.folds) folds.push_back(metrics_to_json(f));
  json stats;
  for (const auto& [name, st] : cv.stats)
    stats[name] = json{{"mean", st.mean},
                       {"std", st.stddev},
                       {"defined_folds", st.defined_folds}};
  return json{{"folds", folds},
              {"aggregate", stats},
              {"pooled", metrics_to_json(cv.pooled)}};
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write json: " + path);
  f << j.dump(2) << "\n";
}

inline json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open json: " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw IoError("bad json in " + path + ": " + e.what());
  }
  return j;
}

}  // namespace tsbn
