// train, calibrate, detect: the offline stages over hidden-state dumps.

#include <map>
#include <memory>
#include <optional>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cellguard/classifier.hpp"
#include "cellguard/detectors.hpp"
#include "cellguard/error.hpp"
#include "cellguard/features.hpp"
#include "cellguard/io.hpp"
#include "cellguard/labeling.hpp"
#include "cellguard/parallel.hpp"
#include "cellguard/population.hpp"
#include "cli_support.hpp"
#include "commands.hpp"

namespace cellguard::cli {
namespace {

namespace fs = std::filesystem;

FeatureTable load_features(const std::string& dumps) { return pool_features(parse_hidden_dump(dumps)); }

const std::vector<std::vector<float>>& features_of(const FeatureTable& features, const std::string& id) {
  const auto it = features.find(id);
  if (it == features.end()) throw ValidationError(fmt::format("no hidden-state dump for {}", id));
  return it->second;
}

struct TrainArgs {
  std::string labels;
  std::string dumps;
  std::string out_dir;
  std::size_t n_cls = 50;
  double cell_fraction = 0.5;
  std::size_t threads = 4;
  TrainOptions options;
};

int run_train(const TrainArgs& a, const CLI::App& app) {
  RunManifest manifest(app);
  const auto labels = load_labels(a.labels);
  const auto features = load_features(a.dumps);
  manifest.input(a.labels);
  manifest.input(a.dumps);

  LabelSet usable;
  for (const auto& [id, e] : labels) {
    if (features.contains(id)) usable.emplace(id, e);
  }
  if (usable.size() < labels.size()) {
    spdlog::warn("{} labeled extraction(s) have no hidden-state dump and are left out", labels.size() - usable.size());
  }
  const auto split = split_calibration(usable, a.n_cls, a.options.seed, a.cell_fraction);
  const std::size_t layers = layer_count(features);

  std::vector<int> y;
  for (const auto& id : split.train) y.push_back(usable.at(id).label);
  std::vector<LayerClassifier> models(layers);
  parallel_for(layers, a.threads, [&](std::size_t l) {
    std::vector<std::vector<float>> rows;
    rows.reserve(split.train.size());
    for (const auto& id : split.train) rows.push_back(features.at(id)[l]);
    models[l] = train_layer_classifier(rows, y, static_cast<int>(l), a.options);
  });

  const fs::path out(a.out_dir);
  save_classifiers(models, out);
  write_output(out / "split.json", io::to_document(to_json(split)));
  auto losses = nlohmann::json::array();
  for (const auto& m : models) losses.push_back({{"layer", m.layer}, {"initial", m.initial_loss}, {"final", m.final_loss}});
  manifest.note("loss", std::move(losses));
  manifest.note("split_sizes", {{"train", split.train.size()}, {"cell", split.cell.size()}, {"recal", split.recal.size()}});
  for (const auto& entry : fs::directory_iterator(out)) {
    if (entry.path().filename() != "manifest.json") manifest.output(entry.path());
  }
  manifest.write_beside(out);
  spdlog::info("trained {} layer classifier(s) on {} example(s); cell/recal {}/{}", layers, split.train.size(),
               split.cell.size(), split.recal.size());
  return 0;
}

struct CalibrateArgs {
  std::string classifiers;
  std::string dumps;
  std::string labels;
  std::string split;
  std::string out;
  std::string mode = "class_conditional";
  std::optional<double> lambda;
  bool strict = false;
  CalibrationOptions options;
};

std::vector<CalibrationExample> examples_for(const std::vector<std::string>& ids, const LabelSet& labels,
                                             const FeatureTable& features,
                                             const std::vector<LayerClassifier>& models) {
  std::vector<CalibrationExample> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    const auto lab = labels.find(id);
    if (lab == labels.end()) throw ValidationError(fmt::format("split references unlabeled extraction {}", id));
    out.push_back({predict_profile(models, features_of(features, id)), lab->second.label});
  }
  return out;
}

int run_calibrate(CalibrateArgs a, const CLI::App& app) {
  RunManifest manifest(app);
  if (a.split.empty()) a.split = (fs::path(a.classifiers) / "split.json").string();
  a.options.mode = coverage_mode_from_string(a.mode);
  a.options.lambda = a.lambda;
  const auto models = load_classifiers(a.classifiers);
  const auto features = load_features(a.dumps);
  const auto labels = load_labels(a.labels);
  const auto split = calibration_split_from_json(io::read_json(a.split));
  manifest.input(a.classifiers);
  manifest.input(a.dumps);
  manifest.input(a.labels);
  manifest.input(a.split);

  const auto cell = examples_for(split.cell, labels, features, models);
  const auto recal = examples_for(split.recal, labels, features, models);
  const auto partition = calibrate(cell, recal, a.options);
  save_partition(partition, a.out);
  manifest.output(a.out);
  const auto& sel = partition.selection;
  manifest.note("calibration", {{"detector", a.lambda ? "hyb" : "scape"},
                                {"k_effective", partition.centroids.size()},
                                {"eta_star", sel.eta_star},
                                {"required", sel.required},
                                {"covered", sel.covered},
                                {"n", sel.n},
                                {"under_coverage", sel.under_coverage}});
  manifest.write_beside(a.out);
  spdlog::info("{} cell(s), eta*={} covering {}/{} (required {})", partition.centroids.size(), sel.eta_star,
               sel.covered, sel.n, sel.required);
  if (sel.under_coverage) {
    spdlog::warn("coverage target unattainable with all cells selected");
    if (a.strict) return static_cast<int>(ExitCode::kUnderCoverage);
  }
  return 0;
}

struct DetectArgs {
  std::string detector;
  std::string classifiers;
  std::string dumps;
  std::string model;
  std::string records;
  std::string out;
  std::optional<int> tau;
  double theta = 0.5;
};

int run_detect(const DetectArgs& a, const CLI::App& app) {
  RunManifest manifest(app);
  const bool calibrated = a.detector == "scape" || a.detector == "hyb";
  if (a.detector == "cf" && !a.tau) throw Error("--detector cf requires --tau", ExitCode::kUsage);
  if (calibrated && a.model.empty()) throw Error(fmt::format("--detector {} requires --model", a.detector), ExitCode::kUsage);
  if (!(a.theta > 0.0 && a.theta < 1.0)) throw ValidationError(fmt::format("--theta {} outside (0,1)", a.theta));

  const auto models = load_classifiers(a.classifiers);
  const auto features = load_features(a.dumps);
  manifest.input(a.classifiers);
  manifest.input(a.dumps);
  std::optional<CellPartition> partition;
  if (calibrated) {
    partition = load_partition(a.model);
    manifest.input(a.model);
    const bool is_hyb = partition->lambda.has_value();
    if (is_hyb != (a.detector == "hyb")) {
      throw ValidationError(fmt::format("model {} was calibrated for {}, not {}", a.model, is_hyb ? "hyb" : "scape",
                                        a.detector));
    }
  }
  std::map<std::string, bool> conflict;
  if (!a.records.empty()) {
    for (const auto& r : load_records(a.records)) conflict[r.extraction_id] = r.conflict;
    manifest.input(a.records);
  }

  std::vector<Detection> detections;
  std::size_t reviewed = 0;
  for (const auto& [id, layers] : features) {
    const auto pi = predict_profile(models, layers);
    PredictionSet set;
    if (calibrated) {
      set = predict_set(*partition, pi);
    } else {
      std::vector<int> votes;
      votes.reserve(pi.size());
      for (double p : pi) votes.push_back(threshold_decision(p, a.theta));
      const int mv = mv_vote(votes);
      set = singleton(a.detector == "cf" ? cf_decide(mv, conflict_kappa(votes, mv), *a.tau) : mv);
    }
    const auto it = conflict.find(id);
    const auto decision = flag(set, it != conflict.end() && it->second);
    reviewed += decision == Decision::kReview ? 1 : 0;
    detections.push_back({id, decision, set});
  }
  write_output(a.out, serialize_detections(detections));
  manifest.output(a.out);
  manifest.note("detector", a.detector);
  manifest.note("decisions", {{"total", detections.size()}, {"review", reviewed}});
  manifest.write_beside(a.out);
  spdlog::info("{}: {} of {} extraction(s) routed to review", a.detector, reviewed, detections.size());
  return 0;
}

}  // namespace

void register_model_commands(CLI::App& root, std::vector<Command>& out) {
  {
    auto a = std::make_shared<TrainArgs>();
    auto* sub = root.add_subcommand("train", "split labels and train one error probe per layer");
    sub->add_option("--labels", a->labels)->required();
    sub->add_option("--dumps", a->dumps, "hidden-state dump (JSONL)")->required();
    sub->add_option("--out-dir", a->out_dir, "classifier directory")->required();
    sub->add_option("--n-cls", a->n_cls, "training examples")->check(CLI::PositiveNumber);
    sub->add_option("--cell-fraction", a->cell_fraction, "share of the calibration remainder used for cells")
        ->check(CLI::Range(0.0, 1.0));
    sub->add_option("--seed", a->options.seed);
    sub->add_option("--hidden", a->options.hidden)->check(CLI::PositiveNumber);
    sub->add_option("--epochs", a->options.epochs)->check(CLI::PositiveNumber);
    sub->add_option("--lr", a->options.learning_rate)->check(CLI::PositiveNumber);
    sub->add_option("--momentum", a->options.momentum)->check(CLI::Range(0.0, 1.0));
    sub->add_option("--threads", a->threads)->check(CLI::PositiveNumber);
    out.push_back({sub, [a, sub] { return run_train(*a, *sub); }});
  }
  {
    auto a = std::make_shared<CalibrateArgs>();
    auto* sub = root.add_subcommand("calibrate", "build, rank and select conformal cells");
    sub->add_option("--classifiers", a->classifiers, "classifier directory")->required();
    sub->add_option("--dumps", a->dumps)->required();
    sub->add_option("--labels", a->labels)->required();
    sub->add_option("--split", a->split, "defaults to <classifiers>/split.json");
    sub->add_option("--out", a->out, "cell-partition model file")->required();
    sub->add_option("--alpha", a->options.alpha)->check(CLI::Range(0.0, 1.0));
    sub->add_option("--lambda", a->lambda, "conflict weight; selects the hybrid detector")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--k-cells", a->options.k)->check(CLI::PositiveNumber);
    sub->add_option("--mode", a->mode)->check(CLI::IsMember({"class_conditional", "marginal"}));
    sub->add_option("--seed", a->options.seed);
    sub->add_flag("--strict", a->strict, "exit 5 when the coverage target is unattainable");
    out.push_back({sub, [a, sub] { return run_calibrate(*a, *sub); }});
  }
  {
    auto a = std::make_shared<DetectArgs>();
    auto* sub = root.add_subcommand("detect", "per-extraction decisions and prediction sets");
    sub->add_option("--detector", a->detector)->required()->check(CLI::IsMember({"mv", "cf", "scape", "hyb"}));
    sub->add_option("--classifiers", a->classifiers)->required();
    sub->add_option("--dumps", a->dumps)->required();
    sub->add_option("--model", a->model, "cell-partition model (scape, hyb)");
    sub->add_option("--records", a->records, "extraction records; conflict-flagged cells are always reviewed");
    sub->add_option("--tau", a->tau, "conflict threshold (cf)")->check(CLI::PositiveNumber);
    sub->add_option("--theta", a->theta, "per-layer decision threshold (mv, cf)");
    sub->add_option("--out", a->out)->required();
    out.push_back({sub, [a, sub] { return run_detect(*a, *sub); }});
  }
}

}  // namespace cellguard::cli
