// milseg: data generation, training, evaluation, weak segmentation,
// cross-validation, and ROC export for the MIL colony classifier.

#include <CLI11.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "milseg/data.hpp"
#include "milseg/metrics.hpp"
#include "milseg/model.hpp"
#include "milseg/train.hpp"
#include "milseg/weakseg.hpp"

namespace fs = std::filesystem;
using namespace milseg;

namespace {

struct RunConfig {
  std::string out = "out";
  std::string data_dir;
  std::string checkpoint;
  std::string profile = "desk";
  std::uint64_t seed = 0;

  ModelConfig model;
  double alpha = 0.0001;
  double tau = 0.5;
  int se_size = 5;
  int epochs = 30;
  int batch_size = 4;
  bool no_augment = false;

  int n_good = 54;
  int n_bad = 40;
  int train_good = 44;
  int train_bad = 30;
  int k = 5;
};

void apply_profile(RunConfig& cfg, const std::map<std::string, bool>& is_set) {
  if (cfg.profile == "paper") {
    if (!is_set.at("input-size")) cfg.model.input_size = 250;
    if (!is_set.at("base-channels")) cfg.model.base_channels = 64;
    if (!is_set.at("max-channels")) cfg.model.max_channels = 512;
    if (!is_set.at("depth")) cfg.model.depth = 8;
    if (!is_set.at("epochs")) cfg.epochs = 300;
    if (!is_set.at("se-size")) cfg.se_size = 20;
  }
}

TrainOptions make_train_options(const RunConfig& cfg) {
  TrainOptions opts;
  opts.model = cfg.model;
  opts.model.seed = cfg.seed;
  opts.alpha = cfg.alpha;
  opts.epochs = cfg.epochs;
  opts.batch_size = cfg.batch_size;
  opts.augment = !cfg.no_augment;
  opts.seed = cfg.seed;
  return opts;
}

void require_dataset(const RunConfig& cfg) {
  if (cfg.data_dir.empty())
    throw UsageError("--data <dir> is required for this command");
}

double roc_auc(const std::vector<RocPoint>& roc) {
  double area = 0.0;
  for (size_t i = 1; i < roc.size(); ++i)
    area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
  return area;
}

int cmd_gen_data(const RunConfig& cfg) {
  SyntheticParams params;
  params.image_size = cfg.model.input_size;
  params.seed = cfg.seed;
  auto dataset = generate_synthetic(params, cfg.n_good, cfg.n_bad);
  save_dataset(cfg.out, dataset);
  std::cerr << "wrote " << dataset.count_label(kLabelGood) << " good and "
            << dataset.count_label(kLabelBad) << " bad images to " << cfg.out
            << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  require_dataset(cfg);
  auto dataset = load_dataset(cfg.data_dir);
  auto [train_set, test_set] =
      holdout_split(dataset, cfg.train_good, cfg.train_bad, cfg.seed);

  fs::create_directories(cfg.out);
  {
    std::ofstream f(fs::path(cfg.out) / "split.csv");
    f << "id,split\n";
    for (const auto& it : train_set.items) f << it.id << ",train\n";
    for (const auto& it : test_set.items) f << it.id << ",test\n";
  }

  std::vector<EpochStats> log;
  auto net = train_model(train_set, make_train_options(cfg), &log,
                         [](const EpochStats& s, MilNet<float>&) {
                           std::cerr << "epoch " << s.epoch << " loss "
                                     << s.train_loss << " acc " << s.train_acc
                                     << "\n";
                           return true;
                         });
  write_train_log_csv((fs::path(cfg.out) / "train_log.csv").string(), log);
  save_checkpoint(net, (fs::path(cfg.out) / "checkpoint.milseg").string());
  std::cerr << "checkpoint and training log written to " << cfg.out << "\n";
  return 0;
}

Dataset select_split(const Dataset& dataset, const std::string& split_csv,
                     const std::string& subset) {
  if (split_csv.empty() || subset == "all") return dataset;
  std::ifstream f(split_csv);
  if (!f) throw IoError("cannot open split file: " + split_csv);
  std::map<std::string, std::string> split_of;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) continue;
    split_of[line.substr(0, comma)] = line.substr(comma + 1);
  }
  Dataset out;
  for (const auto& it : dataset.items) {
    auto found = split_of.find(it.id);
    if (found != split_of.end() && found->second == subset)
      out.items.push_back(it);
  }
  if (out.items.empty())
    throw InputError("split selection '" + subset + "' matched no items");
  return out;
}

int cmd_eval(const RunConfig& cfg, const std::string& split_csv,
             const std::string& subset) {
  require_dataset(cfg);
  if (cfg.checkpoint.empty())
    throw UsageError("--checkpoint <file> is required for eval");
  auto net = load_checkpoint<float>(cfg.checkpoint);
  auto dataset = select_split(load_dataset(cfg.data_dir), split_csv, subset);
  auto [scores, labels] = score_dataset(net, dataset);
  auto report = evaluate(scores, labels, 0.5);

  fs::create_directories(cfg.out);
  write_metrics_csv((fs::path(cfg.out) / "metrics.csv").string(), {report},
                    aggregate_folds({report}));
  if (!report.roc_points.empty())
    write_roc_csv((fs::path(cfg.out) / "roc_fold0.csv").string(),
                  report.roc_points);
  std::cerr << "accuracy " << report.accuracy;
  if (report.auc) std::cerr << " auc " << *report.auc;
  std::cerr << "\n";
  return 0;
}

int cmd_segment(const RunConfig& cfg, const std::vector<std::string>& images) {
  if (cfg.checkpoint.empty())
    throw UsageError("--checkpoint <file> is required for segment");
  if (images.empty()) throw UsageError("segment: no image paths given");
  auto net = load_checkpoint<float>(cfg.checkpoint);
  const StructuringElement z{cfg.se_size, cfg.se_size};
  fs::create_directories(cfg.out);

  int failures = 0;
  for (const auto& path : images) {
    try {
      auto img = load_pgm(path);
      auto heat = heatmap(net, img);
      auto mask = segment(net, img, cfg.tau, z);
      ImageGrid mask_img(mask.h, mask.w);
      for (size_t i = 0; i < mask.bits.size(); ++i)
        mask_img.v[i] = mask.bits[i] ? 1.0f : 0.0f;
      const std::string id = fs::path(path).stem().string();
      save_pgm((fs::path(cfg.out) / (id + "_heat.pgm")).string(), heat);
      save_pgm((fs::path(cfg.out) / (id + "_mask.pgm")).string(), mask_img);
    } catch (const std::exception& e) {
      std::cerr << path << ": " << e.what() << "\n";
      ++failures;
    }
  }
  return failures == 0 ? 0 : 1;
}

int cmd_crossval(const RunConfig& cfg) {
  require_dataset(cfg);
  auto dataset = load_dataset(cfg.data_dir);
  auto split = kfold_split(dataset, cfg.k, cfg.seed);
  fs::create_directories(cfg.out);
  save_folds_csv((fs::path(cfg.out) / "folds.csv").string(), dataset, split);

  std::vector<EvalReport> reports;
  for (int fold = 0; fold < cfg.k; ++fold) {
    Dataset train_set, test_set;
    for (size_t i = 0; i < dataset.items.size(); ++i)
      (split.fold_of[i] == fold ? test_set : train_set)
          .items.push_back(dataset.items[i]);
    std::cerr << "fold " << fold << ": train " << train_set.items.size()
              << " test " << test_set.items.size() << "\n";
    auto opts = make_train_options(cfg);
    opts.seed = cfg.seed + static_cast<std::uint64_t>(fold);
    opts.model.seed = opts.seed;
    auto net = train_model(train_set, opts);
    auto [scores, labels] = score_dataset(net, test_set);
    auto report = evaluate(scores, labels, 0.5);
    if (!report.roc_points.empty())
      write_roc_csv((fs::path(cfg.out) /
                     ("roc_fold" + std::to_string(fold) + ".csv"))
                        .string(),
                    report.roc_points);
    reports.push_back(std::move(report));
  }
  auto summary = aggregate_folds(reports);
  write_metrics_csv((fs::path(cfg.out) / "metrics.csv").string(), reports,
                    summary);
  std::cerr << "mean accuracy " << summary.accuracy;
  if (summary.auc) std::cerr << " mean auc " << *summary.auc;
  std::cerr << "\n";
  return 0;
}

int cmd_roc(const RunConfig& cfg, const std::string& metrics_dir) {
  const fs::path dir = metrics_dir.empty() ? cfg.out : metrics_dir;
  std::vector<std::pair<int, std::vector<RocPoint>>> folds;
  if (fs::is_directory(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("roc_fold", 0) == 0 && entry.path().extension() == ".csv") {
        const int fold = std::stoi(name.substr(8));
        folds.emplace_back(fold, read_roc_csv(entry.path().string()));
      }
    }
  }
  if (folds.empty())
    throw InputError("no roc_fold<k>.csv files found in " + dir.string());
  std::sort(folds.begin(), folds.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  fs::create_directories(cfg.out);
  {
    std::ofstream f(fs::path(cfg.out) / "roc_merged.csv");
    f << "fold,threshold,fpr,tpr\n";
    for (const auto& [fold, roc] : folds)
      for (const auto& p : roc) {
        f << fold << ",";
        if (std::isinf(p.threshold))
          f << "inf";
        else
          f << p.threshold;
        f << "," << p.fpr << "," << p.tpr << "\n";
      }
  }
  double mean_auc = 0.0;
  for (const auto& [fold, roc] : folds) mean_auc += roc_auc(roc);
  mean_auc /= static_cast<double>(folds.size());
  {
    std::ofstream f(fs::path(cfg.out) / "roc_summary.txt");
    f << "folds: " << folds.size() << "\n";
    f << "mean_auc: " << mean_auc << "\n";
  }
  std::cerr << "merged " << folds.size() << " folds, mean auc " << mean_auc
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly-supervised MIL colony classifier and segmenter"};
  app.require_subcommand(1);

  RunConfig cfg;
  app.set_config("--config");
  auto* opt_seed = app.add_option("--seed", cfg.seed, "Master RNG seed");
  app.add_option("--out", cfg.out, "Output directory");
  app.add_option("--profile", cfg.profile, "Scale profile")
      ->check(CLI::IsMember({"desk", "paper"}));
  auto* opt_input = app.add_option("--input-size", cfg.model.input_size);
  auto* opt_base = app.add_option("--base-channels", cfg.model.base_channels);
  auto* opt_max = app.add_option("--max-channels", cfg.model.max_channels);
  auto* opt_depth = app.add_option("--depth", cfg.model.depth);
  auto* opt_epochs = app.add_option("--epochs", cfg.epochs);
  auto* opt_se = app.add_option("--se-size", cfg.se_size,
                                "Structuring element side length");
  app.add_option("--batch-size", cfg.batch_size);
  app.add_option("--alpha", cfg.alpha, "Adam starting rate");
  app.add_option("--tau", cfg.tau, "Segmentation threshold in (0,1)");
  app.add_flag("--no-augment", cfg.no_augment, "Disable flip/rotation variants");
  app.add_option("--data", cfg.data_dir, "Dataset directory");
  app.add_option("--checkpoint", cfg.checkpoint, "Checkpoint file");
  std::string head = "avg_pool_fc";
  app.add_option("--head", head)->check(
      CLI::IsMember({"avg_pool_fc", "fc_baseline"}));

  app.add_option("--n-good", cfg.n_good, "gen-data: good image count");
  app.add_option("--n-bad", cfg.n_bad, "gen-data: bad image count");
  app.add_option("--train-good", cfg.train_good, "train: good items in train");
  app.add_option("--train-bad", cfg.train_bad, "train: bad items in train");
  std::string split_csv, subset = "all";
  app.add_option("--split", split_csv, "eval: split.csv from train");
  app.add_option("--subset", subset, "eval: which split side")
      ->check(CLI::IsMember({"train", "test", "all"}));
  app.add_option("--k", cfg.k, "crossval: fold count");
  std::string metrics_dir;
  app.add_option("--metrics-dir", metrics_dir, "roc: directory of fold CSVs");

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->fallthrough();
  auto* train = app.add_subcommand("train", "Train on a holdout split");
  train->fallthrough();
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->fallthrough();
  std::vector<std::string> images;
  auto* seg = app.add_subcommand("segment", "Emit heatmap and mask PGMs");
  seg->add_option("paths", images, "Input PGM images");
  seg->fallthrough();
  auto* cv = app.add_subcommand("crossval", "Stratified k-fold cross-validation");
  cv->fallthrough();
  auto* roc = app.add_subcommand("roc", "Merge fold ROC CSVs");
  roc->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    cfg.model.head =
        head == "fc_baseline" ? HeadKind::kFcBaseline : HeadKind::kAvgPoolFc;
    apply_profile(cfg, {{"input-size", opt_input->count() > 0},
                        {"base-channels", opt_base->count() > 0},
                        {"max-channels", opt_max->count() > 0},
                        {"depth", opt_depth->count() > 0},
                        {"epochs", opt_epochs->count() > 0},
                        {"se-size", opt_se->count() > 0}});
    (void)opt_seed;
    if (gen->parsed()) return cmd_gen_data(cfg);
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg, split_csv, subset);
    if (seg->parsed()) return cmd_segment(cfg, images);
    if (cv->parsed()) return cmd_crossval(cfg);
    if (roc->parsed()) return cmd_roc(cfg, metrics_dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
