#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "tsbn/adam.hpp"
#include "tsbn/datasets.hpp"
#include "tsbn/errors.hpp"
#include "tsbn/gsim.hpp"
#include "tsbn/losses.hpp"
#include "tsbn/nets.hpp"
#include "tsbn/rng.hpp"

namespace tsbn {

struct TrainConfig {
  double lr = 0.0001;
  double weight_decay = 0.0005;
  int batch_size = 4;
  int epochs = 20;
  int pretrain_epochs = 10;  // finetune_ssl baseline, restoration phase
  double d = 0.5;            // gsim shift distance
  double alpha = 1.0;        // transfer-loss coefficient
  double w = 15.0;           // positive-class BCE weight
  int embed_dim = 64;
  std::uint64_t seed = 0;
  std::string variant = "unet_small";
  std::string schedule = "per_batch_alternation";
  int height = 96;
  int width = 48;

  void validate() const {
    if (lr < 0.0 || weight_decay < 0.0)
      throw ConfigError("lr and weight_decay must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0 || pretrain_epochs < 0)
      throw ConfigError("epoch counts must be >= 0");
    if (d < 0.0) throw ConfigError("gsim distance d must be >= 0");
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (w <= 0.0) throw ConfigError("class weight w must be > 0");
    if (schedule != "per_batch_alternation")
      throw ConfigError("unknown schedule '" + schedule + "'");
    arch().validate();
  }

  ArchConfig arch() const {
    ArchConfig a;
    a.variant = variant;
    a.in_h = height;
    a.in_w = width;
    a.embed_dim = embed_dim;
    return a;
  }
};

// Per-epoch loss series. Columns differ by method (the plain baseline
// has no transfer loss, for example); every recorded entry is finite.
struct TrainHistory {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  bool has_column(const std::string& name) const {
    return std::find(columns.begin(), columns.end(), name) != columns.end();
  }
  std::vector<double> series(const std::string& name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end())
      throw InvalidInput("history has no column '" + name + "'");
    std::size_t col = static_cast<std::size_t>(it - columns.begin());
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r[col]);
    return out;
  }
};

struct TrainedOutput {
  ModelBundle bundle;
  TrainHistory history;
  TrainConfig config;
  double wall_seconds = 0.0;
};

using SampleBatch = std::vector<const LabeledSample*>;

namespace trainer_detail {

inline Tensor batch_images(const SampleBatch& batch) {
  std::vector<const GrayImage*> imgs;
  imgs.reserve(batch.size());
  for (const LabeledSample* s : batch) imgs.push_back(&s->image);
  return batch_to_tensor(imgs);
}

inline std::vector<int> batch_labels(const SampleBatch& batch) {
  std::vector<int> out;
  out.reserve(batch.size());
  for (const LabeledSample* s : batch) out.push_back(s->label.a);
  return out;
}

inline Tensor batch_gsim_targets(const SampleBatch& batch, double d) {
  Tensor x = batch_images(batch);
  const long hw = x.dim(2) * x.dim(3);
  for (std::size_t n = 0; n < batch.size(); ++n) {
    const double shift = (batch[n]->label.a == 1 ? 0.5 : -0.5) * d;
    double* p = x.ptr() + static_cast<long>(n) * hw;
    for (long i = 0; i < hw; ++i) p[i] += shift;
  }
  return x;
}

inline long count_correct(const Tensor& probs, const std::vector<int>& labels) {
  long correct = 0;
  for (long i = 0; i < probs.numel(); ++i)
    correct += (probs[i] >= 0.5 ? 1 : 0) == labels[static_cast<std::size_t>(i)];
  return correct;
}

// Accumulates sample-weighted epoch means.
struct EpochAccum {
  std::vector<double> sums;
  long samples = 0;
  long correct = 0;

  explicit EpochAccum(std::size_t n_losses) : sums(n_losses, 0.0) {}
  void add(const std::vector<double>& losses, long batch_n, long batch_correct) {
    for (std::size_t i = 0; i < sums.size(); ++i)
      sums[i] += losses[i] * static_cast<double>(batch_n);
    samples += batch_n;
    correct += batch_correct;
  }
  std::vector<double> row_with_acc() const {
    std::vector<double> row;
    for (double s : sums) row.push_back(s / static_cast<double>(samples));
    row.push_back(static_cast<double>(correct) / static_cast<double>(samples));
    return row;
  }
};

inline std::vector<SampleBatch> make_batches(const Dataset& data,
                                             std::vector<std::size_t>& order,
                                             Rng& rng, int batch_size) {
  rng.shuffle(order);
  std::vector<SampleBatch> batches;
  for (std::size_t start = 0; start < order.size();
       start += static_cast<std::size_t>(batch_size)) {
    SampleBatch b;
    std::size_t end = std::min(order.size(),
                               start + static_cast<std::size_t>(batch_size));
    for (std::size_t i = start; i < end; ++i)
      b.push_back(&data.samples[order[i]]);
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace trainer_detail

// Alternating two-step trainer: per mini-batch, one Adam update of the
// restoration network on the gsim restoration loss, then one Adam update
// of classifier + both transfer branches on alpha * Loss_CT + Loss_BCE.
// The two optimizers own disjoint parameter sets; the pretext encoder is
// re-run frozen inside the downstream step, so gradient stops at e(x).
class TsbnTrainer {
 public:
  TsbnTrainer(const Dataset& dataset, const TrainConfig& config)
      : data_(dataset), cfg_(config), master_rng_(config.seed) {
    cfg_.validate();
    bundle_ = build_models(cfg_.arch(), master_rng_.next_u64());
    shuffle_rng_ = Rng(master_rng_.next_u64());
    adam_pretext_ = Adam(bundle_.restoration_params(), cfg_.lr, cfg_.weight_decay);
    adam_down_ = Adam(bundle_.downstream_params(), cfg_.lr, cfg_.weight_decay);
  }

  // One gsim restoration update. Only restoration parameters move.
  double pretext_step(const SampleBatch& batch) {
    using namespace trainer_detail;
    Graph g;
    Var x = g.input(batch_images(batch));
    RestorationOut out = bundle_.restoration->forward(g, x);
    Var loss = g.mean_sq_diff(out.restored, g.input(batch_gsim_targets(batch, cfg_.d)));
    const double value = g.value(loss)[0];
    if (!std::isfinite(value))
      throw DivergenceError("non-finite restoration loss", cur_epoch_, cur_batch_);
    g.backward(loss);
    adam_pretext_.step(g.param_grads());
    return value;
  }

  struct StepLosses {
    double ct = 0.0;
    double bce = 0.0;
    double total = 0.0;
    long correct = 0;
  };

  // One downstream update from Loss_D = alpha * Loss_CT + Loss_BCE.
  // Restoration parameters are bound in a side graph and enter the
  // training graph as constants.
  StepLosses downstream_step(const SampleBatch& batch) {
    using namespace trainer_detail;
    Tensor x = batch_images(batch);
    Tensor tap;
    {
      Graph side;
      tap = side.value(bundle_.restoration->encode(side, side.input(x)));
    }
    Graph g;
    Var p_emb = bundle_.branch_p.forward(g, g.input(std::move(tap)));
    ClassifierOut co = bundle_.classifier.forward(g, g.input(std::move(x)));
    Var d_emb = bundle_.branch_d.forward(g, co.pooled);
    Var ct = g.mean_sq_diff(p_emb, d_emb);
    Var probs = g.sigmoid(co.logits);
    std::vector<int> labels = batch_labels(batch);
    Var bce = g.weighted_bce(probs, labels, cfg_.w);
    Var total = g.scaled_sum(cfg_.alpha, ct, bce);

    StepLosses out;
    out.ct = g.value(ct)[0];
    out.bce = g.value(bce)[0];
    out.total = g.value(total)[0];
    if (!std::isfinite(out.total))
      throw DivergenceError("non-finite downstream loss", cur_epoch_, cur_batch_);
    out.correct = count_correct(g.value(probs), labels);
    g.backward(total);
    adam_down_.step(g.param_grads());
    return out;
  }

  TrainedOutput train() {
    using namespace trainer_detail;
    data_.validate_for_training();
    auto t0 = std::chrono::steady_clock::now();
    TrainHistory history;
    history.columns = {"loss_mse", "loss_ct", "loss_bce", "loss_d", "train_acc"};
    std::vector<std::size_t> order(data_.samples.size());
    std::iota(order.begin(), order.end(), 0);
    for (cur_epoch_ = 0; cur_epoch_ < cfg_.epochs; ++cur_epoch_) {
      auto batches = make_batches(data_, order, shuffle_rng_, cfg_.batch_size);
      EpochAccum acc(4);
      for (cur_batch_ = 0; cur_batch_ < static_cast<int>(batches.size());
           ++cur_batch_) {
        const SampleBatch& b = batches[static_cast<std::size_t>(cur_batch_)];
        double mse = pretext_step(b);
        StepLosses dl = downstream_step(b);
        acc.add({mse, dl.ct, dl.bce, dl.total}, static_cast<long>(b.size()),
                dl.correct);
      }
      history.rows.push_back(acc.row_with_acc());
    }
    TrainedOutput out;
    out.bundle = std::move(bundle_);
    out.history = std::move(history);
    out.config = cfg_;
    out.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
  }

  ModelBundle& bundle() { return bundle_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  const Dataset& data_;
  TrainConfig cfg_;
  Rng master_rng_;
  ModelBundle bundle_;
  Rng shuffle_rng_{0};
  Adam adam_pretext_;
  Adam adam_down_;
  int cur_epoch_ = 0;
  int cur_batch_ = 0;
};

inline TrainedOutput train_tsbn(const Dataset& dataset, const TrainConfig& config) {
  TsbnTrainer trainer(dataset, config);
  return trainer.train();
}

// Comparison ladder. All three baselines train the same classifier
// architecture as TSBN:
//   plain        — classifier on the weighted BCE only
//   finetune_ssl — classifier backbone first trained as a gsim
//                  restoration encoder (with an auxiliary decoder), then
//                  the decoder is dropped from training and the whole
//                  classifier is fine-tuned on the BCE
//   multitask    — one shared backbone with restoration and
//                  classification heads trained simultaneously on
//                  Loss_MSE + Loss_BCE
inline TrainedOutput train_baseline(const std::string& kind,
                                    const Dataset& dataset,
                                    const TrainConfig& config) {
  using namespace trainer_detail;
  if (kind != "plain" && kind != "finetune_ssl" && kind != "multitask")
    throw ConfigError("unknown baseline '" + kind + "'");
  config.validate();
  dataset.validate_for_training();

  auto t0 = std::chrono::steady_clock::now();
  Rng master(config.seed);
  ModelBundle bundle = build_models(config.arch(), master.next_u64());
  Rng shuffle_rng(master.next_u64());
  Rng aux_rng(master.next_u64());
  AuxDecoder aux(bundle.classifier.feature_channels(), aux_rng, "aux_decoder.");

  TrainHistory history;
  std::vector<std::size_t> order(dataset.samples.size());
  std::iota(order.begin(), order.end(), 0);

  // One shared-backbone epoch. `objective` selects what backpropagates;
  // with eval_mse the restoration head is also forwarded so its loss can
  // be recorded without influencing the update.
  enum class Objective { Bce, Mse, Sum };
  auto run_epoch = [&](Objective objective, bool eval_mse, Adam& opt,
                       int epoch_idx) {
    auto batches = make_batches(dataset, order, shuffle_rng, config.batch_size);
    EpochAccum acc(2);
    for (int bi = 0; bi < static_cast<int>(batches.size()); ++bi) {
      const SampleBatch& b = batches[static_cast<std::size_t>(bi)];
      Graph g;
      Var feat = bundle.classifier.backbone(g, g.input(batch_images(b)));
      ClassifierOut co = bundle.classifier.head_from_features(g, feat);
      Var probs = g.sigmoid(co.logits);
      std::vector<int> labels = batch_labels(b);
      Var bce = g.weighted_bce(probs, labels, config.w);
      Var mse;
      if (objective != Objective::Bce || eval_mse) {
        Var restored = aux.forward(g, feat);
        mse = g.mean_sq_diff(restored, g.input(batch_gsim_targets(b, config.d)));
      }
      Var loss = bce;
      if (objective == Objective::Mse) loss = mse;
      if (objective == Objective::Sum) loss = g.scaled_sum(1.0, mse, bce);
      const double loss_value = g.value(loss)[0];
      if (!std::isfinite(loss_value))
        throw DivergenceError("non-finite baseline loss", epoch_idx, bi);
      double mse_value = mse.valid() ? g.value(mse)[0] : 0.0;
      g.backward(loss);
      opt.step(g.param_grads());
      acc.add({mse_value, g.value(bce)[0]}, static_cast<long>(b.size()),
              count_correct(g.value(probs), labels));
    }
    return acc;
  };

  if (kind == "plain") {
    Adam opt(bundle.classifier.parameters(), config.lr, config.weight_decay);
    history.columns = {"loss_bce", "train_acc"};
    for (int e = 0; e < config.epochs; ++e) {
      EpochAccum acc = run_epoch(Objective::Bce, false, opt, e);
      auto row = acc.row_with_acc();
      history.rows.push_back({row[1], row[2]});  // drop the unused mse slot
    }
  } else if (kind == "finetune_ssl") {
    history.columns = {"phase", "loss_mse", "loss_bce", "train_acc"};
    {
      std::vector<Param*> pre_params = bundle.classifier.backbone_params();
      auto aux_params = aux.parameters();
      pre_params.insert(pre_params.end(), aux_params.begin(), aux_params.end());
      Adam opt(pre_params, config.lr, config.weight_decay);
      for (int e = 0; e < config.pretrain_epochs; ++e) {
        EpochAccum acc = run_epoch(Objective::Mse, false, opt, e);
        auto row = acc.row_with_acc();
        history.rows.push_back({0.0, row[0], row[1], row[2]});
      }
    }
    {
      // decoder dropped from training; fresh optimizer state for the
      // fine-tuning phase, restoration loss kept as a diagnostic only
      Adam opt(bundle.classifier.parameters(), config.lr, config.weight_decay);
      for (int e = 0; e < config.epochs; ++e) {
        EpochAccum acc = run_epoch(Objective::Bce, true, opt, e);
        auto row = acc.row_with_acc();
        history.rows.push_back({1.0, row[0], row[1], row[2]});
      }
    }
  } else {  // multitask
    std::vector<Param*> params = bundle.classifier.parameters();
    auto aux_params = aux.parameters();
    params.insert(params.end(), aux_params.begin(), aux_params.end());
    Adam opt(params, config.lr, config.weight_decay);
    history.columns = {"loss_mse", "loss_bce", "train_acc"};
    for (int e = 0; e < config.epochs; ++e) {
      EpochAccum acc = run_epoch(Objective::Sum, false, opt, e);
      history.rows.push_back(acc.row_with_acc());
    }
  }

  TrainedOutput out;
  out.bundle = std::move(bundle);
  out.history = std::move(history);
  out.config = config;
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

// Dispatch on the four method names used across the CLI and reports.
inline TrainedOutput train_method(const std::string& method,
                                  const Dataset& dataset,
                                  const TrainConfig& config) {
  if (method == "tsbn") return train_tsbn(dataset, config);
  return train_baseline(method, dataset, config);
}

}  // namespace tsbn
