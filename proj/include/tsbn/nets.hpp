#pragma once

#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "tsbn/errors.hpp"
#include "tsbn/graph.hpp"
#include "tsbn/gsim.hpp"
#include "tsbn/rng.hpp"
#include "tsbn/tensor.hpp"

namespace tsbn {

// Architecture knobs for the small model zoo. Input sizes must be
// multiples of 8: the classifier and the U-Net bottleneck sit three
// 2x-downsamplings below the input.
struct ArchConfig {
  std::string variant = "unet_small";  // unet_small | rdn_small
  int in_h = 96;
  int in_w = 48;
  int unet_base = 8;    // channels at the first U-Net level, doubling per level
  int rdn_g0 = 16;      // RDN base feature width
  int rdn_growth = 8;   // channels added by each dense layer
  int rdn_blocks = 3;   // residual dense blocks
  int rdn_layers = 4;   // dense layers per block
  int clf_base = 8;     // classifier stem width, doubling per stage
  int embed_dim = 64;   // shared embedding dimension K of the transfer branches

  void validate() const {
    if (variant != "unet_small" && variant != "rdn_small")
      throw ConfigError("unknown variant '" + variant + "'");
    if (in_h < 8 || in_w < 8 || in_h % 8 != 0 || in_w % 8 != 0)
      throw ConfigError("input size must be a positive multiple of 8, got " +
                        std::to_string(in_h) + "x" + std::to_string(in_w));
    if (unet_base < 1 || rdn_g0 < 1 || rdn_growth < 1 || rdn_blocks < 1 ||
        rdn_layers < 1 || clf_base < 1 || embed_dim < 1)
      throw ConfigError("all architecture dimensions must be positive");
  }
};

// ---- layers ----

struct Conv2d {
  Param w, b;
  int stride = 1;
  int pad = 1;

  Conv2d() = default;
  // He fan-in init for the weight, zero bias.
  Conv2d(const std::string& name, int in_c, int out_c, int k, Rng& rng,
         int stride_ = 1, int pad_ = 1)
      : stride(stride_), pad(pad_) {
    w.name = name + ".weight";
    w.value = Tensor({out_c, in_c, k, k});
    const double std_dev = std::sqrt(2.0 / (in_c * k * k));
    for (double& v : w.value.data) v = rng.normal(0.0, std_dev);
    b.name = name + ".bias";
    b.value = Tensor({static_cast<long>(out_c)});
  }

  Var forward(Graph& g, Var x) {
    return g.conv2d(x, g.param(w), g.param(b), stride, pad);
  }
  void collect(std::vector<Param*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

struct Linear {
  Param w, b;

  Linear() = default;
  Linear(const std::string& name, int in_dim, int out_dim, Rng& rng) {
    w.name = name + ".weight";
    w.value = Tensor({out_dim, in_dim});
    const double std_dev = std::sqrt(2.0 / in_dim);
    for (double& v : w.value.data) v = rng.normal(0.0, std_dev);
    b.name = name + ".bias";
    b.value = Tensor({static_cast<long>(out_dim)});
  }

  Var forward(Graph& g, Var x) { return g.linear(x, g.param(w), g.param(b)); }
  void collect(std::vector<Param*>& out) {
    out.push_back(&w);
    out.push_back(&b);
  }
};

// ---- restoration networks ----

struct RestorationOut {
  Var restored;     // image-shaped, linear final activation
  Var encoder_tap;  // deepest pre-decoder feature map e(x)
};

class RestorationNet {
 public:
  virtual ~RestorationNet() = default;
  virtual RestorationOut forward(Graph& g, Var x) = 0;
  // Encoder-only pass producing just e(x); skips decoder work when the
  // decoder output is not needed.
  virtual Var encode(Graph& g, Var x) = 0;
  virtual std::vector<Param*> parameters() = 0;
  virtual int encoder_channels() const = 0;
  virtual const std::string& variant() const = 0;
};

// Three-level U-Net: two convs per level (base channels doubling), max
// pooling between levels, a two-conv bottleneck whose output is the
// encoder tap e(x), and a mirrored decoder with skip connections. The
// final 1x1 conv is linear so restored values may leave [0, 1].
class UnetSmall final : public RestorationNet {
 public:
  UnetSmall(const ArchConfig& cfg, Rng& rng, const std::string& prefix) {
    const int b = cfg.unet_base;
    enc_.reserve(3);
    int in_c = 1;
    for (int lvl = 0; lvl < 3; ++lvl) {
      int c = b << lvl;
      std::string nm = prefix + "enc" + std::to_string(lvl + 1);
      enc_.push_back({Conv2d(nm + ".conv1", in_c, c, 3, rng),
                      Conv2d(nm + ".conv2", c, c, 3, rng)});
      in_c = c;
    }
    const int bc = b << 3;
    bottleneck_ = {Conv2d(prefix + "bottleneck.conv1", b << 2, bc, 3, rng),
                   Conv2d(prefix + "bottleneck.conv2", bc, bc, 3, rng)};
    for (int lvl = 2; lvl >= 0; --lvl) {
      int c = b << lvl;
      std::string nm = prefix + "dec" + std::to_string(lvl + 1);
      up_.push_back(Conv2d(nm + ".up", c * 2, c, 3, rng));
      dec_.push_back({Conv2d(nm + ".conv1", c * 2, c, 3, rng),
                      Conv2d(nm + ".conv2", c, c, 3, rng)});
    }
    out_conv_ = Conv2d(prefix + "out", b, 1, 1, rng, 1, 0);
    channels_ = bc;
  }

  Var encode(Graph& g, Var x) override {
    Var cur = x;
    for (auto& level : enc_) {
      cur = g.relu(level.first.forward(g, cur));
      cur = g.relu(level.second.forward(g, cur));
      cur = g.maxpool2(cur);
    }
    cur = g.relu(bottleneck_.first.forward(g, cur));
    return g.relu(bottleneck_.second.forward(g, cur));
  }

  RestorationOut forward(Graph& g, Var x) override {
    std::vector<Var> skips;
    Var cur = x;
    for (auto& level : enc_) {
      cur = g.relu(level.first.forward(g, cur));
      cur = g.relu(level.second.forward(g, cur));
      skips.push_back(cur);
      cur = g.maxpool2(cur);
    }
    cur = g.relu(bottleneck_.first.forward(g, cur));
    cur = g.relu(bottleneck_.second.forward(g, cur));
    Var tap = cur;
    for (int i = 0; i < 3; ++i) {
      cur = g.relu(up_[static_cast<std::size_t>(i)].forward(g, g.upsample2(cur)));
      cur = g.concat_ch({cur, skips[static_cast<std::size_t>(2 - i)]});
      auto& d = dec_[static_cast<std::size_t>(i)];
      cur = g.relu(d.first.forward(g, cur));
      cur = g.relu(d.second.forward(g, cur));
    }
    return {out_conv_.forward(g, cur), tap};
  }

  std::vector<Param*> parameters() override {
    std::vector<Param*> out;
    for (auto& level : enc_) {
      level.first.collect(out);
      level.second.collect(out);
    }
    bottleneck_.first.collect(out);
    bottleneck_.second.collect(out);
    for (std::size_t i = 0; i < up_.size(); ++i) {
      up_[i].collect(out);
      dec_[i].first.collect(out);
      dec_[i].second.collect(out);
    }
    out_conv_.collect(out);
    return out;
  }

  int encoder_channels() const override { return channels_; }
  const std::string& variant() const override { return name_; }

 private:
  std::vector<std::pair<Conv2d, Conv2d>> enc_;
  std::pair<Conv2d, Conv2d> bottleneck_;
  std::vector<Conv2d> up_;
  std::vector<std::pair<Conv2d, Conv2d>> dec_;
  Conv2d out_conv_;
  int channels_ = 0;
  std::string name_ = "unet_small";
};

// Residual dense network at constant resolution: two shallow feature
// convs, cascaded residual dense blocks with local feature fusion and a
// local residual, then global feature fusion plus the global residual.
// The fused feature map (before the reconstruction conv) is e(x).
class RdnSmall final : public RestorationNet {
 public:
  RdnSmall(const ArchConfig& cfg, Rng& rng, const std::string& prefix)
      : g0_(cfg.rdn_g0), growth_(cfg.rdn_growth), layers_(cfg.rdn_layers) {
    sfe1_ = Conv2d(prefix + "sfe1", 1, g0_, 3, rng);
    sfe2_ = Conv2d(prefix + "sfe2", g0_, g0_, 3, rng);
    for (int bl = 0; bl < cfg.rdn_blocks; ++bl) {
      Block blk;
      std::string nm = prefix + "rdb" + std::to_string(bl + 1);
      for (int l = 0; l < layers_; ++l)
        blk.dense.push_back(Conv2d(nm + ".conv" + std::to_string(l + 1),
                                   g0_ + l * growth_, growth_, 3, rng));
      blk.fuse = Conv2d(nm + ".lff", g0_ + layers_ * growth_, g0_, 1, rng, 1, 0);
      blocks_.push_back(std::move(blk));
    }
    const int cat = g0_ * cfg.rdn_blocks;
    gff1_ = Conv2d(prefix + "gff1", cat, g0_, 1, rng, 1, 0);
    gff2_ = Conv2d(prefix + "gff2", g0_, g0_, 3, rng);
    recon_ = Conv2d(prefix + "recon", g0_, 1, 3, rng);
  }

  Var encode(Graph& g, Var x) override {
    Var shallow = sfe1_.forward(g, x);
    Var cur = sfe2_.forward(g, shallow);
    std::vector<Var> block_outs;
    for (auto& blk : blocks_) {
      Var dense_in = cur;
      Var cat = dense_in;
      for (auto& layer : blk.dense) {
        Var grown = g.relu(layer.forward(g, cat));
        cat = g.concat_ch({cat, grown});
      }
      cur = g.add(blk.fuse.forward(g, cat), dense_in);  // local residual
      block_outs.push_back(cur);
    }
    Var fused = gff2_.forward(g, gff1_.forward(g, g.concat_ch(block_outs)));
    return g.add(fused, shallow);  // global residual
  }

  RestorationOut forward(Graph& g, Var x) override {
    Var tap = encode(g, x);
    return {recon_.forward(g, tap), tap};
  }

  std::vector<Param*> parameters() override {
    std::vector<Param*> out;
    sfe1_.collect(out);
    sfe2_.collect(out);
    for (auto& blk : blocks_) {
      for (auto& layer : blk.dense) layer.collect(out);
      blk.fuse.collect(out);
    }
    gff1_.collect(out);
    gff2_.collect(out);
    recon_.collect(out);
    return out;
  }

  int encoder_channels() const override { return g0_; }
  const std::string& variant() const override { return name_; }

 private:
  struct Block {
    std::vector<Conv2d> dense;
    Conv2d fuse;
  };
  int g0_, growth_, layers_;
  Conv2d sfe1_, sfe2_, gff1_, gff2_, recon_;
  std::vector<Block> blocks_;
  std::string name_ = "rdn_small";
};

// ---- downstream classifier ----

struct ClassifierOut {
  Var logits;  // (N, 1)
  Var pooled;  // (N, C_c) global-average-pooled backbone features c(x)
};

// Small residual classifier: stem conv, three stride-2 residual stages
// with doubling width, global average pooling, linear head to one logit.
class ClassifierModel {
 public:
  ClassifierModel() = default;
  ClassifierModel(const ArchConfig& cfg, Rng& rng, const std::string& prefix) {
    const int b = cfg.clf_base;
    stem_ = Conv2d(prefix + "stem", 1, b, 3, rng);
    int in_c = b;
    for (int s = 0; s < 3; ++s) {
      int out_c = b << (s + 1);
      std::string nm = prefix + "stage" + std::to_string(s + 1);
      stages_.push_back({Conv2d(nm + ".conv1", in_c, out_c, 3, rng, 2, 1),
                         Conv2d(nm + ".conv2", out_c, out_c, 3, rng),
                         Conv2d(nm + ".proj", in_c, out_c, 1, rng, 2, 0)});
      in_c = out_c;
    }
    head_ = Linear(prefix + "head", in_c, 1, rng);
    channels_ = in_c;
  }

  // Spatial feature map c(x) before pooling; the baselines hang their
  // auxiliary restoration decoder off this.
  Var backbone(Graph& g, Var x) {
    Var cur = g.relu(stem_.forward(g, x));
    for (auto& st : stages_) {
      Var main = st.conv2.forward(g, g.relu(st.conv1.forward(g, cur)));
      cur = g.relu(g.add(main, st.proj.forward(g, cur)));
    }
    return cur;
  }

  ClassifierOut head_from_features(Graph& g, Var features) {
    Var pooled = g.global_avg_pool(features);
    return {head_.forward(g, pooled), pooled};
  }

  ClassifierOut forward(Graph& g, Var x) {
    return head_from_features(g, backbone(g, x));
  }

  std::vector<Param*> backbone_params() {
    std::vector<Param*> out;
    stem_.collect(out);
    for (auto& st : stages_) {
      st.conv1.collect(out);
      st.conv2.collect(out);
      st.proj.collect(out);
    }
    return out;
  }

  std::vector<Param*> parameters() {
    std::vector<Param*> out = backbone_params();
    head_.collect(out);
    return out;
  }

  int feature_channels() const { return channels_; }

 private:
  struct Stage {
    Conv2d conv1, conv2, proj;
  };
  Conv2d stem_;
  std::vector<Stage> stages_;
  Linear head_;
  int channels_ = 0;
};

// ---- transfer branches ----

// P pools the spatial pretext features then maps them to the shared
// embedding; D maps the already-pooled classifier features. Both land in
// the same K-dimensional space, so the transfer loss is well-formed by
// construction.
struct TransferBranch {
  enum class Side { P, D };
  Side side = Side::P;
  Linear proj;

  TransferBranch() = default;
  TransferBranch(Side s, int in_dim, int embed_dim, Rng& rng,
                 const std::string& name)
      : side(s), proj(name, in_dim, embed_dim, rng) {}

  Var forward(Graph& g, Var features) {
    const Tensor& f = g.value(features);
    if (side == Side::P) {
      if (f.rank() != 4)
        throw InvalidInput("branch P expects a 4-d feature map");
      if (f.dim(1) != proj.w.value.dim(1))
        throw InvalidInput("branch P: feature channels " +
                           std::to_string(f.dim(1)) + " != expected " +
                           std::to_string(proj.w.value.dim(1)));
      return proj.forward(g, g.global_avg_pool(features));
    }
    if (f.rank() != 2)
      throw InvalidInput("branch D expects a 2-d feature batch");
    if (f.dim(1) != proj.w.value.dim(1))
      throw InvalidInput("branch D: feature dim " + std::to_string(f.dim(1)) +
                         " != expected " + std::to_string(proj.w.value.dim(1)));
    return proj.forward(g, features);
  }

  void collect(std::vector<Param*>& out) { proj.collect(out); }
};

// ---- bundle ----

struct ModelBundle {
  ArchConfig config;
  std::unique_ptr<RestorationNet> restoration;
  ClassifierModel classifier;
  TransferBranch branch_p;
  TransferBranch branch_d;

  std::vector<Param*> restoration_params() { return restoration->parameters(); }

  // Everything the downstream step trains: classifier, D, and P.
  std::vector<Param*> downstream_params() {
    std::vector<Param*> out = classifier.parameters();
    branch_d.collect(out);
    branch_p.collect(out);
    return out;
  }

  std::vector<Param*> parameters() {
    std::vector<Param*> out = restoration_params();
    auto down = downstream_params();
    out.insert(out.end(), down.begin(), down.end());
    return out;
  }
};

inline ModelBundle build_models(const ArchConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelBundle bundle;
  bundle.config = cfg;
  if (cfg.variant == "unet_small")
    bundle.restoration = std::make_unique<UnetSmall>(cfg, rng, "restoration.");
  else
    bundle.restoration = std::make_unique<RdnSmall>(cfg, rng, "restoration.");
  bundle.classifier = ClassifierModel(cfg, rng, "classifier.");
  bundle.branch_p =
      TransferBranch(TransferBranch::Side::P, bundle.restoration->encoder_channels(),
                     cfg.embed_dim, rng, "branch_p.proj");
  bundle.branch_d =
      TransferBranch(TransferBranch::Side::D, bundle.classifier.feature_channels(),
                     cfg.embed_dim, rng, "branch_d.proj");
  return bundle;
}

// Auxiliary upsampling decoder used by the fine-tuning and multi-task
// baselines: turns classifier-encoder features back into an image so the
// shared backbone can be trained on the restoration objective. Training
// scaffold only; never serialized.
class AuxDecoder {
 public:
  AuxDecoder() = default;
  AuxDecoder(int in_c, Rng& rng, const std::string& prefix) {
    int c = in_c;
    for (int lvl = 0; lvl < 3; ++lvl) {
      convs_.push_back(Conv2d(prefix + "up" + std::to_string(lvl + 1), c,
                              c / 2, 3, rng));
      c /= 2;
    }
    out_ = Conv2d(prefix + "out", c, 1, 1, rng, 1, 0);
  }

  Var forward(Graph& g, Var features) {
    Var cur = features;
    for (auto& conv : convs_) cur = g.relu(conv.forward(g, g.upsample2(cur)));
    return out_.forward(g, cur);
  }

  std::vector<Param*> parameters() {
    std::vector<Param*> out;
    for (auto& conv : convs_) conv.collect(out);
    out_.collect(out);
    return out;
  }

 private:
  std::vector<Conv2d> convs_;
  Conv2d out_;
};

// ---- batch helpers and inference-mode forwards ----

inline long parameter_count(const std::vector<Param*>& params) {
  long n = 0;
  for (const Param* p : params) n += p->value.numel();
  return n;
}

// FNV-1a over the raw parameter bytes, in parameter order. Bit-identical
// values hash identically; used to assert the freeze contracts.
inline std::uint64_t param_checksum(const std::vector<Param*>& params) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const Param* p : params) {
    for (double v : p->value.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xffu;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

inline Tensor batch_to_tensor(const std::vector<const GrayImage*>& images) {
  if (images.empty()) throw InvalidInput("empty batch");
  const int h = images[0]->height, w = images[0]->width;
  Tensor out({static_cast<long>(images.size()), 1, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n]->height != h || images[n]->width != w)
      throw InvalidInput("batch images must share one shape");
    std::copy(images[n]->pixels.begin(), images[n]->pixels.end(),
              out.ptr() + static_cast<long>(n) * h * w);
  }
  return out;
}

// Deterministic inference pass; returns (restored batch, encoder tap).
inline std::pair<Tensor, Tensor> pretext_forward(RestorationNet& net,
                                                 const Tensor& batch) {
  Graph g;
  RestorationOut out = net.forward(g, g.input(batch));
  return {g.value(out.restored), g.value(out.encoder_tap)};
}

// Deterministic inference pass; returns (logits, pooled features).
inline std::pair<Tensor, Tensor> classifier_forward(ClassifierModel& model,
                                                    const Tensor& batch) {
  Graph g;
  ClassifierOut out = model.forward(g, g.input(batch));
  return {g.value(out.logits), g.value(out.pooled)};
}

// Projects features through one transfer branch outside any training
// graph.
inline Tensor project(TransferBranch& branch, const Tensor& features) {
  Graph g;
  return g.value(branch.forward(g, g.input(features)));
}

// Classifier probabilities for a whole dataset-like list of images.
inline std::vector<double> predict_probs(ClassifierModel& model,
                                         const std::vector<const GrayImage*>& images,
                                         int batch_size) {
  std::vector<double> probs;
  probs.reserve(images.size());
  for (std::size_t start = 0; start < images.size();
       start += static_cast<std::size_t>(batch_size)) {
    std::size_t end =
        std::min(images.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const GrayImage*> chunk(images.begin() + static_cast<long>(start),
                                        images.begin() + static_cast<long>(end));
    auto [logits, pooled] = classifier_forward(model, batch_to_tensor(chunk));
    for (long i = 0; i < logits.numel(); ++i)
      probs.push_back(1.0 / (1.0 + std::exp(-logits[i])));
  }
  return probs;
}

}  // namespace tsbn
