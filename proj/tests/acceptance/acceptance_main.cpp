// Acceptance suite: one criterion per block, one PASS/FAIL line each.
// Exits non-zero if any criterion fails. Heavier criteria print their
// measured quantities so a failure is diagnosable from the log alone.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tsbn/datasets.hpp"
#include "tsbn/gsim.hpp"
#include "tsbn/losses.hpp"
#include "tsbn/metrics.hpp"
#include "tsbn/nets.hpp"
#include "tsbn/rng.hpp"
#include "tsbn/trainer.hpp"

namespace fs = std::filesystem;
using namespace tsbn;

namespace {

struct Harness {
  int failed = 0;

  void criterion(int n, const std::string& what,
                 const std::function<bool(std::string&)>& body) {
    auto t0 = std::chrono::steady_clock::now();
    bool ok = false;
    std::string note;
    try {
      ok = body(note);
    } catch (const std::exception& e) {
      note = std::string("exception: ") + e.what();
    }
    double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s criterion %d: %s [%.1fs]%s%s\n", ok ? "PASS" : "FAIL", n,
                what.c_str(), secs, note.empty() ? "" : " -- ", note.c_str());
    std::fflush(stdout);
    if (!ok) ++failed;
  }
};

// ---------- criterion 1 ----------

struct TableRow {
  const char* name;
  double acc, sens, spec, yi, f1;
};

// Transcribed published per-method results (percent): accuracy,
// sensitivity, specificity, Youden index, F1 on the 100/287 split.
const TableRow kTable[] = {
    {"ResNet", 82.94, 82.00, 83.27, 65.27, 71.31},
    {"SimCLR", 84.46, 82.00, 85.32, 67.32, 73.32},
    {"CR-F-ResNet", 83.48, 82.00, 84.00, 66.00, 72.08},
    {"GM-F-ResNet", 84.74, 82.00, 85.69, 67.69, 73.68},
    {"GM-M-ResNet", 84.76, 81.00, 86.07, 67.07, 73.36},
    {"TSBN-U", 85.53, 84.00, 86.07, 70.07, 75.06},
    {"TSBN-R", 85.78, 83.00, 86.75, 69.75, 75.18},
};

bool table_consistency(std::string& note) {
  const double kPos = 100.0, kNeg = 287.0;
  double worst_yi = 0.0, worst_acc = 0.0, worst_f1 = 0.0;
  for (const TableRow& row : kTable) {
    double yi = row.sens + row.spec - 100.0;
    double acc = (row.sens * kPos + row.spec * kNeg) / (kPos + kNeg);
    double tp = row.sens;  // percent of 100 positives = count
    double fn = kPos - tp;
    double fp = (1.0 - row.spec / 100.0) * kNeg;
    double f1 = 100.0 * 2.0 * tp / (2.0 * tp + fp + fn);
    worst_yi = std::max(worst_yi, std::abs(yi - row.yi));
    worst_acc = std::max(worst_acc, std::abs(acc - row.acc));
    worst_f1 = std::max(worst_f1, std::abs(f1 - row.f1));
  }
  std::ostringstream oss;
  oss << "max |YI err|=" << worst_yi << " |acc err|=" << worst_acc
      << " |F1 err|=" << worst_f1;
  note = oss.str();
  return worst_yi <= 0.02 && worst_acc <= 0.05 && worst_f1 <= 0.3;
}

// ---------- criterion 2 ----------

bool gsim_invariants(std::string& note) {
  Rng rng(20240);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    int h = 4 + static_cast<int>(rng.uniform_index(24));
    int w = 4 + static_cast<int>(rng.uniform_index(24));
    GrayImage img(h, w);
    for (double& v : img.pixels) v = rng.uniform();
    double d = rng.uniform(0.0, 2.0);

    GsimTarget t1 = gsim_target(img, ClassLabel(1), d);
    GsimTarget t0 = gsim_target(img, ClassLabel(0), d);
    if (t1.pixels.size() != img.pixels.size()) return false;
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      worst = std::max(worst, std::abs(t1.pixels[i] - t0.pixels[i] - d));

    GsimTarget ident = gsim_target(img, ClassLabel(static_cast<int>(rng.uniform_index(2))), 0.0);
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
      worst = std::max(worst, std::abs(ident.pixels[i] - img.pixels[i]));

    // contrast preservation on sampled pixel pairs
    int a = static_cast<int>(rng.uniform_index(2));
    GsimTarget t = gsim_target(img, ClassLabel(a), d);
    for (int k = 0; k < 50; ++k) {
      std::size_t i = rng.uniform_index(img.pixels.size());
      std::size_t j = rng.uniform_index(img.pixels.size());
      worst = std::max(worst, std::abs((t.pixels[i] - t.pixels[j]) -
                                       (img.pixels[i] - img.pixels[j])));
    }
  }
  std::ostringstream oss;
  oss << "max deviation=" << worst;
  note = oss.str();
  return worst <= 1e-12;
}

// ---------- criterion 3 ----------

// Micro bi-channel bundle, 164 parameters in total, wiring every loss
// through conv / pool / upsample / projection paths.
struct MicroModel {
  Param enc_w, enc_b, dec_w, dec_b, clf_w, clf_b, head_w, head_b, p_w, p_b,
      d_w, d_b;
  Tensor x, gsim;
  std::vector<int> labels;

  explicit MicroModel(std::uint64_t seed) {
    Rng rng(seed);
    auto mk = [&](const char* name, std::vector<long> shape, double scale) {
      Param p;
      p.name = name;
      p.value = Tensor(std::move(shape));
      for (double& v : p.value.data) v = scale * rng.normal();
      return p;
    };
    enc_w = mk("enc.w", {2, 1, 3, 3}, 0.4);
    enc_b = mk("enc.b", {2}, 0.1);
    dec_w = mk("dec.w", {1, 2, 3, 3}, 0.4);
    dec_b = mk("dec.b", {1}, 0.1);
    clf_w = mk("clf.w", {2, 1, 3, 3}, 0.4);
    clf_b = mk("clf.b", {2}, 0.1);
    head_w = mk("head.w", {1, 2}, 0.4);
    head_b = mk("head.b", {1}, 0.1);
    p_w = mk("p.w", {2, 2}, 0.4);
    p_b = mk("p.b", {2}, 0.1);
    d_w = mk("d.w", {2, 2}, 0.4);
    d_b = mk("d.b", {2}, 0.1);
    x = Tensor({2, 1, 4, 4});
    for (double& v : x.data) v = rng.uniform(0.1, 0.9);
    gsim = x;
    for (std::size_t i = 0; i < gsim.data.size(); ++i)
      gsim.data[i] += i < gsim.data.size() / 2 ? 0.25 : -0.25;
    labels = {1, 0};
  }

  std::vector<Param*> params() {
    return {&enc_w, &enc_b, &dec_w, &dec_b, &clf_w, &clf_b,
            &head_w, &head_b, &p_w, &p_b, &d_w, &d_b};
  }

  Var restored(Graph& g) {
    Var e = g.relu(g.conv2d(g.input(x), g.param(enc_w), g.param(enc_b), 2, 1));
    return g.conv2d(g.upsample2(e), g.param(dec_w), g.param(dec_b), 1, 1);
  }
  Var encoder(Graph& g) {
    return g.relu(g.conv2d(g.input(x), g.param(enc_w), g.param(enc_b), 2, 1));
  }
  Var loss_mse(Graph& g) { return g.mean_sq_diff(restored(g), g.input(gsim)); }
  Var pooled(Graph& g) {
    Var c = g.relu(g.conv2d(g.input(x), g.param(clf_w), g.param(clf_b), 2, 1));
    return g.global_avg_pool(c);
  }
  Var loss_ct(Graph& g) {
    Var p_emb = g.linear(g.global_avg_pool(encoder(g)), g.param(p_w), g.param(p_b));
    Var d_emb = g.linear(pooled(g), g.param(d_w), g.param(d_b));
    return g.mean_sq_diff(p_emb, d_emb);
  }
  Var loss_bce(Graph& g) {
    Var logits = g.linear(pooled(g), g.param(head_w), g.param(head_b));
    return g.weighted_bce(g.sigmoid(logits), labels, 15.0);
  }
  Var loss_d(Graph& g) { return g.scaled_sum(1.0, loss_ct(g), loss_bce(g)); }
};

// Finite-difference check of one scalar builder against tape gradients.
double max_gradcheck_error(MicroModel& m,
                           const std::function<Var(Graph&)>& build,
                           double step = 1e-6) {
  std::map<Param*, Tensor> analytic;
  {
    Graph g;
    Var loss = build(g);
    g.backward(loss);
    for (auto& [p, grad] : g.param_grads()) analytic[p] = *grad;
  }
  auto eval = [&]() {
    Graph g;
    return g.value(build(g))[0];
  };
  double worst = 0.0;
  for (Param* p : m.params()) {
    auto it = analytic.find(p);
    for (long i = 0; i < p->value.numel(); ++i) {
      double orig = p->value[i];
      p->value[i] = orig + step;
      double fp = eval();
      p->value[i] = orig - step;
      double fm = eval();
      p->value[i] = orig;
      double numeric = (fp - fm) / (2.0 * step);
      double exact = it != analytic.end() ? it->second[i] : 0.0;
      double denom = std::max({std::abs(exact), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(exact - numeric) / denom);
    }
  }
  return worst;
}

bool loss_gradients(std::string& note) {
  long param_total = 0;
  {
    MicroModel probe(1);
    for (Param* p : probe.params()) param_total += p->value.numel();
  }
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    MicroModel m(seed);
    worst = std::max(worst, max_gradcheck_error(m, [&](Graph& g) { return m.loss_mse(g); }));
    worst = std::max(worst, max_gradcheck_error(m, [&](Graph& g) { return m.loss_ct(g); }));
    worst = std::max(worst, max_gradcheck_error(m, [&](Graph& g) { return m.loss_bce(g); }));
    worst = std::max(worst, max_gradcheck_error(m, [&](Graph& g) { return m.loss_d(g); }));
  }
  std::ostringstream oss;
  oss << "model params=" << param_total << " max rel err=" << worst;
  note = oss.str();
  return param_total <= 200 && worst <= 1e-4;
}

// ---------- criterion 4 ----------

bool metric_oracles(std::string& note) {
  Rng rng(77);
  double worst_auc = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 200; ++i) {
      // quantized scores so ties are exercised
      scores.push_back(std::floor(rng.uniform() * 32.0) / 32.0);
      labels.push_back(static_cast<int>(rng.uniform_index(2)));
    }
    labels[0] = 1;
    labels[1] = 0;
    double threshold = rng.uniform(0.1, 0.9);

    ConfusionCounts got = confusion(scores, labels, threshold);
    long tp = 0, fp = 0, tn = 0, fn = 0;
    for (int i = 0; i < 200; ++i) {
      bool pred = scores[static_cast<std::size_t>(i)] >= threshold;
      bool truth = labels[static_cast<std::size_t>(i)] == 1;
      tp += pred && truth;
      fp += pred && !truth;
      tn += !pred && !truth;
      fn += !pred && truth;
    }
    if (got.tp != tp || got.fp != fp || got.tn != tn || got.fn != fn)
      return false;

    MetricsReport r = compute_metrics(got);
    double p = static_cast<double>(tp + fn), n = static_cast<double>(tn + fp);
    if (std::abs(*r.youden - (*r.sensitivity + *r.specificity - 1.0)) > 0.0)
      return false;
    if (std::abs(*r.accuracy -
                 (*r.sensitivity * p + *r.specificity * n) / (p + n)) > 1e-12)
      return false;

    auto [roc, auc] = roc_auc(scores, labels);
    double wins = 0.0;
    long pairs = 0;
    for (int i = 0; i < 200; ++i)
      for (int j = 0; j < 200; ++j) {
        if (labels[static_cast<std::size_t>(i)] != 1 ||
            labels[static_cast<std::size_t>(j)] != 0)
          continue;
        ++pairs;
        double si = scores[static_cast<std::size_t>(i)];
        double sj = scores[static_cast<std::size_t>(j)];
        wins += si > sj ? 1.0 : (si == sj ? 0.5 : 0.0);
      }
    worst_auc = std::max(worst_auc, std::abs(auc - wins / static_cast<double>(pairs)));

    // strictly increasing exact transform leaves AUC bit-identical
    std::vector<double> transformed(scores);
    for (double& v : transformed) v = 0.5 * v + 0.25;
    if (roc_auc(transformed, labels).second != auc) return false;
  }
  std::ostringstream oss;
  oss << "max |auc err|=" << worst_auc;
  note = oss.str();
  return worst_auc <= 1e-12;
}

// ---------- criterion 5 ----------

bool parameter_partition(std::string& note) {
  SynthParams sp;
  sp.n_samples = 16;
  sp.height = 48;
  sp.width = 24;
  sp.positive_fraction = 0.5;
  sp.seed = 5;
  Dataset data = make_synthetic(sp);

  for (const char* variant : {"unet_small", "rdn_small"}) {
    TrainConfig cfg;
    cfg.variant = variant;
    cfg.height = sp.height;
    cfg.width = sp.width;
    cfg.epochs = 2;
    cfg.seed = 11;
    TsbnTrainer trainer(data, cfg);

    Rng shuffle(99);
    std::vector<std::size_t> order(data.samples.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < 2; ++epoch) {
      shuffle.shuffle(order);
      for (std::size_t start = 0; start < order.size(); start += 4) {
        SampleBatch batch;
        for (std::size_t i = start; i < std::min(order.size(), start + 4); ++i)
          batch.push_back(&data.samples[order[i]]);

        auto down = param_checksum(trainer.bundle().downstream_params());
        trainer.pretext_step(batch);
        if (param_checksum(trainer.bundle().downstream_params()) != down) {
          note = std::string(variant) + ": pretext step touched downstream params";
          return false;
        }
        auto resto = param_checksum(trainer.bundle().restoration_params());
        trainer.downstream_step(batch);
        if (param_checksum(trainer.bundle().restoration_params()) != resto) {
          note = std::string(variant) + ": downstream step touched restoration params";
          return false;
        }
      }
    }
  }
  note = "checksums stable across every step, both variants";
  return true;
}

// ---------- criteria 6 and 7 ----------

Dataset benchmark_dataset() {
  SynthParams sp;
  sp.n_samples = 200;
  sp.height = 96;
  sp.width = 48;
  sp.separability = 0.7;
  sp.positive_fraction = 0.26;
  sp.seed = 42;
  return make_synthetic(sp);
}

double mean_of(const std::vector<double>& v, std::size_t from, std::size_t to) {
  double acc = 0.0;
  for (std::size_t i = from; i < to; ++i) acc += v[i];
  return acc / static_cast<double>(to - from);
}

bool end_to_end_training(std::string& note) {
  Dataset data = benchmark_dataset();
  auto [train_ids, test_ids] = stratified_holdout(data, 0.2, 17);
  Dataset train_set = data.subset(train_ids, "bench_train");
  Dataset test_set = data.subset(test_ids, "bench_test");

  std::ostringstream oss;
  bool ok = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig cfg;  // paper protocol defaults: lr 1e-4, wd 5e-4, batch 4
    cfg.seed = seed;
    cfg.epochs = 20;
    TrainedOutput out = train_tsbn(train_set, cfg);

    std::vector<const GrayImage*> imgs;
    std::vector<int> labels;
    for (const auto& s : test_set.samples) {
      imgs.push_back(&s.image);
      labels.push_back(s.label.a);
    }
    auto probs = predict_probs(out.bundle.classifier, imgs, cfg.batch_size);
    MetricsReport r = evaluate_predictions(probs, labels);

    auto mse = out.history.series("loss_mse");
    auto bce = out.history.series("loss_bce");
    double mse_first = mse.front();
    double bce_first = bce.front();
    double mse_tail = mean_of(mse, mse.size() - 5, mse.size());
    double bce_tail = mean_of(bce, bce.size() - 5, bce.size());

    bool seed_ok = *r.accuracy >= 0.90 && mse_tail < 0.5 * mse_first &&
                   bce_tail < 0.5 * bce_first;
    oss << "seed" << seed << ": acc=" << *r.accuracy
        << " mse " << mse_first << "->" << mse_tail
        << " bce " << bce_first << "->" << bce_tail
        << (seed_ok ? "; " : " (FAIL); ");
    ok = ok && seed_ok;
  }
  note = oss.str();
  return ok;
}

bool method_ladder(std::string& note) {
  Dataset data = benchmark_dataset();
  FoldSplit split = stratified_kfold(data, 5, 17);  // shared across methods

  const char* methods[] = {"tsbn", "plain", "finetune_ssl", "multitask"};
  std::map<std::string, double> mean_acc;
  for (const char* method : methods) {
    double acc_sum = 0.0;
    long acc_n = 0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      for (int k = 0; k < 5; ++k) {
        const auto& fold = split.folds[static_cast<std::size_t>(k)];
        Dataset train_set = data.subset(fold.train_ids, "ladder_train");
        Dataset test_set = data.subset(fold.test_ids, "ladder_test");
        TrainConfig cfg;
        cfg.seed = seed * 100 + static_cast<std::uint64_t>(k);
        cfg.epochs = 6;
        cfg.pretrain_epochs = 4;
        TrainedOutput out = train_method(method, train_set, cfg);

        std::vector<const GrayImage*> imgs;
        std::vector<int> labels;
        for (const auto& s : test_set.samples) {
          imgs.push_back(&s.image);
          labels.push_back(s.label.a);
        }
        auto probs = predict_probs(out.bundle.classifier, imgs, cfg.batch_size);
        MetricsReport r = evaluate_predictions(probs, labels);
        acc_sum += *r.accuracy;
        ++acc_n;
      }
    }
    mean_acc[method] = acc_sum / static_cast<double>(acc_n);
  }

  std::ostringstream oss;
  for (const char* m : methods) oss << m << "=" << mean_acc[m] << " ";
  note = oss.str();
  return mean_acc["tsbn"] >= mean_acc["plain"] - 0.01;
}

// ---------- criterion 8 ----------

int run_cli(const std::string& args, const fs::path& log) {
  std::string cmd =
      std::string(TSBN_CLI_BIN) + " " + args + " > " + log.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  return status >= 256 ? status / 256 : status;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

bool cli_determinism(std::string& note) {
  fs::path dir = fs::temp_directory_path() / "tsbn_acceptance_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  fs::path log = dir / "log.txt";

  std::string synth_args =
      "synth --n 40 --seed 6 --positive-fraction 0.3 --height 32 --width 16";
  if (run_cli(synth_args + " --out " + (dir / "d1").string(), log) != 0)
    return false;
  if (run_cli(synth_args + " --out " + (dir / "d2").string(), log) != 0)
    return false;
  if (slurp(dir / "d1" / "manifest.csv") != slurp(dir / "d2" / "manifest.csv")) {
    note = "synth manifests differ";
    return false;
  }

  std::string manifest = (dir / "d1" / "manifest.csv").string();
  std::string train_args = "train --method tsbn --data " + manifest +
                           " --height 32 --width 16 --epochs 2 --seed 3";
  if (run_cli(train_args + " --out " + (dir / "t1").string(), log) != 0)
    return false;
  if (run_cli(train_args + " --out " + (dir / "t2").string(), log) != 0)
    return false;
  for (const char* f : {"history.csv", "metrics.json", "roc.csv"}) {
    if (slurp(dir / "t1" / f) != slurp(dir / "t2" / f)) {
      note = std::string("train output differs: ") + f;
      return false;
    }
  }

  std::string cv_args = "cv --method plain --folds 3 --data " + manifest +
                        " --height 32 --width 16 --epochs 2 --seed 3"
                        " --split-seed 21";
  if (run_cli(cv_args + " --out " + (dir / "c1").string(), log) != 0)
    return false;
  if (run_cli(cv_args + " --out " + (dir / "c2").string(), log) != 0)
    return false;
  for (const char* f : {"metrics.json", "roc.csv", "folds.csv"}) {
    if (slurp(dir / "c1" / f) != slurp(dir / "c2" / f)) {
      note = std::string("cv output differs: ") + f;
      return false;
    }
  }
  note = "synth, train, and cv reruns byte-identical";
  return true;
}

}  // namespace

int main() {
  Harness h;
  h.criterion(1, "published-table internal consistency (YI, accuracy, F1)",
              table_consistency);
  h.criterion(2, "gsim invariant suite (shift, identity, contrast)",
              gsim_invariants);
  h.criterion(3, "loss gradients vs central finite differences",
              loss_gradients);
  h.criterion(4, "metric implementations vs brute-force oracles",
              metric_oracles);
  h.criterion(5, "alternation parameter-partition invariant",
              parameter_partition);
  h.criterion(6, "desk-scale end-to-end training (5 seeds)",
              end_to_end_training);
  h.criterion(7, "method ladder on shared folds (4 methods x 5 seeds x 5 folds)",
              method_ladder);
  h.criterion(8, "CLI determinism (byte-identical reruns)", cli_determinism);

  if (h.failed == 0) {
    std::printf("acceptance: all criteria passed\n");
    return 0;
  }
  std::printf("acceptance: %d criterion(s) failed\n", h.failed);
  return 1;
}
