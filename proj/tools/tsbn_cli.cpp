// tsbn command-line front end: synthesize phantom datasets, preview gsim
// targets, train one method on a train/held-out split, or run stratified
// k-fold cross-validation.
//
// Exit codes: 0 success, 2 validation/input error, 3 numerical
// divergence during training.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tsbn/datasets.hpp"
#include "tsbn/gsim.hpp"
#include "tsbn/metrics.hpp"
#include "tsbn/nets.hpp"
#include "tsbn/png_io.hpp"
#include "tsbn/serialize.hpp"
#include "tsbn/trainer.hpp"

namespace fs = std::filesystem;
using tsbn::json;

namespace {

void write_runspec(const std::string& out_dir, const json& spec) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  tsbn::write_json((fs::path(out_dir) / "runspec.json").string(), spec);
}

std::vector<const tsbn::GrayImage*> image_ptrs(const tsbn::Dataset& d) {
  std::vector<const tsbn::GrayImage*> out;
  out.reserve(d.samples.size());
  for (const auto& s : d.samples) out.push_back(&s.image);
  return out;
}

std::vector<int> label_values(const tsbn::Dataset& d) {
  std::vector<int> out;
  out.reserve(d.samples.size());
  for (const auto& s : d.samples) out.push_back(s.label.a);
  return out;
}

tsbn::MetricsReport evaluate_bundle(tsbn::ModelBundle& bundle,
                                    const tsbn::Dataset& test,
                                    int batch_size) {
  auto probs = tsbn::predict_probs(bundle.classifier, image_ptrs(test), batch_size);
  return tsbn::evaluate_predictions(probs, label_values(test));
}

struct SynthOpts {
  tsbn::SynthParams params;
  std::string out_dir;
};

int cmd_synth(const SynthOpts& o) {
  tsbn::Dataset data = tsbn::make_synthetic(o.params);
  write_runspec(o.out_dir,
                json{{"command", "synth"},
                     {"n", o.params.n_samples},
                     {"height", o.params.height},
                     {"width", o.params.width},
                     {"positive_fraction", o.params.positive_fraction},
                     {"separability", o.params.separability},
                     {"noise_sigma", o.params.noise_sigma},
                     {"seed", o.params.seed},
                     {"out", o.out_dir}});
  std::string manifest = tsbn::save_dataset_png(data, o.out_dir);
  long pos = data.positive_count();
  std::printf("manifest=%s\n", manifest.c_str());
  std::printf("positives=%ld negatives=%ld\n", pos,
              static_cast<long>(data.samples.size()) - pos);
  return 0;
}

struct PreviewOpts {
  std::string image_path;
  int label = 0;
  double d = 0.5;
  std::string out_dir;
};

int cmd_gsim_preview(const PreviewOpts& o) {
  tsbn::GrayImage input =
      tsbn::normalize_image(tsbn::read_png_gray8(o.image_path));
  tsbn::GsimTarget target =
      tsbn::gsim_target(input, tsbn::ClassLabel(o.label), o.d);

  double tmin = target.pixels[0], tmax = target.pixels[0], max_diff = 0.0;
  for (std::size_t i = 0; i < target.pixels.size(); ++i) {
    tmin = std::min(tmin, target.pixels[i]);
    tmax = std::max(tmax, target.pixels[i]);
    max_diff = std::max(max_diff, std::abs(target.pixels[i] - input.pixels[i]));
  }

  // side-by-side panel, both halves mapped by one shared affine range
  const int h = input.height, w = input.width;
  double lo = std::min(0.0, tmin), hi = std::max(1.0, tmax);
  double inv = hi > lo ? 1.0 / (hi - lo) : 1.0;
  tsbn::GrayImage panel(h, 2 * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      panel.at(r, c) = (input.at(r, c) - lo) * inv;
      panel.at(r, c + w) =
          (target.pixels[static_cast<std::size_t>(r) * w + c] - lo) * inv;
    }

  write_runspec(o.out_dir, json{{"command", "gsim-preview"},
                                {"image", o.image_path},
                                {"label", o.label},
                                {"d", o.d},
                                {"out", o.out_dir}});
  tsbn::write_png_gray8((fs::path(o.out_dir) / "preview.png").string(), panel);
  std::printf("target_min=%.10g target_max=%.10g max_abs_diff=%.10g\n", tmin,
              tmax, max_diff);
  return 0;
}

struct FitOpts {
  std::string method = "tsbn";
  std::string data_path;
  std::string out_dir;
  tsbn::TrainConfig cfg;
  double holdout = 0.2;
  int folds = 5;
  std::uint64_t split_seed = 17;
};

json fit_runspec(const char* command, const FitOpts& o) {
  json spec{{"command", command},
            {"method", o.method},
            {"data", o.data_path},
            {"out", o.out_dir},
            {"split_seed", o.split_seed},
            {"config", tsbn::train_config_to_json(o.cfg)}};
  if (std::string(command) == "train") spec["holdout"] = o.holdout;
  if (std::string(command) == "cv") spec["folds"] = o.folds;
  return spec;
}

int cmd_train(const FitOpts& o) {
  o.cfg.validate();
  if (o.holdout <= 0.0 || o.holdout >= 1.0)
    throw tsbn::InvalidInput("--holdout must be in (0,1)");
  tsbn::Dataset data = tsbn::load_manifest(o.data_path, o.cfg.height, o.cfg.width);
  auto [train_ids, test_ids] =
      tsbn::stratified_holdout(data, o.holdout, o.split_seed);
  tsbn::Dataset train_set = data.subset(train_ids, data.name + "_train");
  tsbn::Dataset test_set = data.subset(test_ids, data.name + "_heldout");

  write_runspec(o.out_dir, fit_runspec("train", o));
  tsbn::TrainedOutput trained = tsbn::train_method(o.method, train_set, o.cfg);
  tsbn::MetricsReport report =
      evaluate_bundle(trained.bundle, test_set, o.cfg.batch_size);

  fs::path out(o.out_dir);
  tsbn::write_history_csv((out / "history.csv").string(), trained.history);
  tsbn::save_checkpoint((out / "checkpoint.bin").string(),
                        trained.bundle.parameters());
  tsbn::write_json((out / "arch.json").string(),
                   tsbn::arch_to_json(trained.bundle.config));
  tsbn::write_json((out / "metrics.json").string(), tsbn::metrics_to_json(report));
  tsbn::write_roc_csv((out / "roc.csv").string(), report.roc);

  std::printf("method=%s train_n=%zu heldout_n=%zu wall_s=%.2f\n",
              o.method.c_str(), train_set.samples.size(),
              test_set.samples.size(), trained.wall_seconds);
  std::printf("heldout_accuracy=%s auc=%s\n",
              report.accuracy ? tsbn::format_double(*report.accuracy).c_str() : "undefined",
              report.auc ? tsbn::format_double(*report.auc).c_str() : "undefined");
  return 0;
}

int cmd_cv(const FitOpts& o) {
  o.cfg.validate();
  if (o.folds < 2) throw tsbn::InvalidSplit("--folds must be >= 2");
  tsbn::Dataset data = tsbn::load_manifest(o.data_path, o.cfg.height, o.cfg.width);
  tsbn::FoldSplit split = tsbn::stratified_kfold(data, o.folds, o.split_seed);

  write_runspec(o.out_dir, fit_runspec("cv", o));
  fs::path out(o.out_dir);
  {
    std::ofstream f(out / "folds.csv", std::ios::binary);
    if (!f) throw tsbn::IoError("cannot write folds.csv");
    f << "fold,test_id\n";
    for (int k = 0; k < o.folds; ++k)
      for (const auto& id : split.folds[static_cast<std::size_t>(k)].test_ids)
        f << k << "," << id << "\n";
  }

  std::vector<tsbn::MetricsReport> fold_reports;
  for (int k = 0; k < o.folds; ++k) {
    const auto& fold = split.folds[static_cast<std::size_t>(k)];
    tsbn::Dataset train_set =
        data.subset(fold.train_ids, data.name + "_f" + std::to_string(k));
    tsbn::Dataset test_set =
        data.subset(fold.test_ids, data.name + "_f" + std::to_string(k) + "_test");
    tsbn::TrainConfig fold_cfg = o.cfg;
    fold_cfg.seed = o.cfg.seed + static_cast<std::uint64_t>(k);
    tsbn::TrainedOutput trained = tsbn::train_method(o.method, train_set, fold_cfg);
    tsbn::write_history_csv(
        (out / ("history_fold" + std::to_string(k) + ".csv")).string(),
        trained.history);
    fold_reports.push_back(
        evaluate_bundle(trained.bundle, test_set, o.cfg.batch_size));
    std::printf("fold=%d test_n=%zu accuracy=%s\n", k, test_set.samples.size(),
                fold_reports.back().accuracy
                    ? tsbn::format_double(*fold_reports.back().accuracy).c_str()
                    : "undefined");
  }

  tsbn::CvReport cv = tsbn::aggregate_folds(fold_reports);
  tsbn::write_json((out / "metrics.json").string(), tsbn::cv_to_json(cv));
  tsbn::write_roc_csv((out / "roc.csv").string(), cv.pooled.roc);
  for (const auto& [name, st] : cv.stats)
    std::printf("%s=%.4f+/-%.4f\n", name.c_str(), st.mean, st.stddev);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Task-driven self-supervised bi-channel networks"};
  app.require_subcommand(1);

  // A config file provides TrainConfig defaults; explicit flags override
  // them, so the file is loaded before the options are declared.
  tsbn::TrainConfig file_cfg;
  std::string config_path;
  try {
    for (int i = 1; i + 1 < argc; ++i)
      if (std::string(argv[i]) == "--config") {
        config_path = argv[i + 1];
        file_cfg = tsbn::train_config_from_json(tsbn::read_json(config_path));
      }
  } catch (const tsbn::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  SynthOpts synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic phantom dataset");
  s->add_option("--n", synth.params.n_samples, "Number of samples")->required();
  s->add_option("--out", synth.out_dir, "Output directory")->required();
  s->add_option("--height", synth.params.height);
  s->add_option("--width", synth.params.width);
  s->add_option("--positive-fraction", synth.params.positive_fraction);
  s->add_option("--separability", synth.params.separability);
  s->add_option("--noise-sigma", synth.params.noise_sigma);
  s->add_option("--seed", synth.params.seed);

  PreviewOpts preview;
  auto* p = app.add_subcommand("gsim-preview",
                               "Write a side-by-side input/target preview");
  p->add_option("--image", preview.image_path, "8-bit grayscale PNG")->required();
  p->add_option("--label", preview.label, "Class label (0 or 1)")->required();
  p->add_option("--d", preview.d, "Shift distance");
  p->add_option("--out", preview.out_dir, "Output directory")->required();

  auto add_train_config = [&](CLI::App* cmd, FitOpts& o) {
    o.cfg = file_cfg;
    cmd->add_option("--method", o.method,
                    "tsbn | plain | finetune_ssl | multitask")
        ->check(CLI::IsMember({"tsbn", "plain", "finetune_ssl", "multitask"}));
    cmd->add_option("--data", o.data_path, "Manifest CSV")->required();
    cmd->add_option("--out", o.out_dir, "Output directory")->required();
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--split-seed", o.split_seed, "Seed for the data split");
    cmd->add_option("--lr", o.cfg.lr);
    cmd->add_option("--weight-decay", o.cfg.weight_decay);
    cmd->add_option("--batch-size", o.cfg.batch_size);
    cmd->add_option("--epochs", o.cfg.epochs);
    cmd->add_option("--pretrain-epochs", o.cfg.pretrain_epochs);
    cmd->add_option("--d", o.cfg.d);
    cmd->add_option("--alpha", o.cfg.alpha);
    cmd->add_option("--w", o.cfg.w);
    cmd->add_option("--embed-dim", o.cfg.embed_dim);
    cmd->add_option("--seed", o.cfg.seed);
    cmd->add_option("--variant", o.cfg.variant)
        ->check(CLI::IsMember({"unet_small", "rdn_small"}));
    cmd->add_option("--height", o.cfg.height);
    cmd->add_option("--width", o.cfg.width);
  };

  FitOpts train_opts;
  auto* t = app.add_subcommand("train", "Train one method on a held-out split");
  add_train_config(t, train_opts);
  t->add_option("--holdout", train_opts.holdout, "Held-out fraction");

  FitOpts cv_opts;
  auto* c = app.add_subcommand("cv", "Stratified k-fold cross-validation");
  add_train_config(c, cv_opts);
  c->add_option("--folds", cv_opts.folds, "Number of folds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (s->parsed()) return cmd_synth(synth);
    if (p->parsed()) return cmd_gsim_preview(preview);
    if (t->parsed()) return cmd_train(train_opts);
    if (c->parsed()) return cmd_cv(cv_opts);
  } catch (const tsbn::DivergenceError& e) {
    std::fprintf(stderr, "divergence: %s\n", e.what());
    return 3;
  } catch (const tsbn::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
  return 0;
}
