// simulate coverage|setsize|sweep over synthetic probability profiles.

#include <memory>
#include <optional>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cellguard/error.hpp"
#include "cellguard/io.hpp"
#include "cellguard/simulation.hpp"
#include "cli_support.hpp"
#include "commands.hpp"

namespace cellguard::cli {
namespace {

enum class Study { kCoverage, kSetSize, kSweep };

struct SimulateArgs {
  std::string spec;  // empty = built-in spec for the study
  std::optional<std::uint64_t> seed;
  std::vector<double> alphas;
  std::optional<double> lambda;
  std::string mode = "class_conditional";
  std::string out;
  std::string csv;
  TrialConfig cfg;
};

MixtureSpec resolve_spec(const SimulateArgs& a, Study study, RunManifest& manifest) {
  MixtureSpec spec;
  if (!a.spec.empty()) {
    spec = mixture_spec_from_json(io::read_json(a.spec));
    manifest.input(a.spec);
  } else {
    spec = study == Study::kSetSize ? MixtureSpec::informative_conflict_spec() : MixtureSpec::default_spec();
  }
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  return spec;
}

std::string sweep_csv(const std::vector<SweepPoint>& points) {
  std::string out = "alpha,accuracy_before,accuracy_after,fpr,reviewed_fraction,coverage\n";
  for (const auto& p : points) {
    out += fmt::format("{},{},{},{},{},{}\n", p.alpha, p.accuracy_before, p.accuracy_after, p.fpr,
                       p.reviewed_fraction, p.coverage);
  }
  return out;
}

int run_simulate(SimulateArgs a, Study study, const CLI::App& app) {
  RunManifest manifest(app);
  a.cfg.mode = coverage_mode_from_string(a.mode);
  a.cfg.lambda = a.lambda;
  const auto spec = resolve_spec(a, study, manifest);

  nlohmann::json doc;
  doc["spec"] = to_json(spec);
  doc["config"] = {{"lambda", a.lambda ? nlohmann::json(*a.lambda) : nlohmann::json(nullptr)},
                   {"mode", a.mode},
                   {"k", a.cfg.k},
                   {"n_cal", a.cfg.n_cal},
                   {"n_test", a.cfg.n_test},
                   {"cell_fraction", a.cfg.cell_fraction},
                   {"trials", a.cfg.trials}};
  switch (study) {
    case Study::kCoverage: {
      auto results = nlohmann::json::array();
      for (double alpha : a.alphas) {
        a.cfg.alpha = alpha;
        const auto r = coverage_trial(spec, a.cfg);
        spdlog::info("alpha={}: mean coverage {:.4f}, {:.1f}% of trials below {:.2f}, mean |set| {:.3f}", alpha,
                     r.mean_coverage, 100.0 * r.fraction_below_target, 1.0 - alpha, r.mean_set_size);
        auto j = to_json(r);
        j["alpha"] = alpha;
        results.push_back(std::move(j));
      }
      doc["results"] = std::move(results);
      break;
    }
    case Study::kSetSize: {
      if (a.alphas.size() != 1) throw Error("simulate setsize takes exactly one --alpha", ExitCode::kUsage);
      a.cfg.alpha = a.alphas.front();
      const auto r = setsize_trial(spec, a.cfg);
      spdlog::info("mean |set| scape {:.4f}, hyb {:.4f}; hyb strictly smaller in {:.1f}% of trials", r.mean_scape,
                   r.mean_hyb, 100.0 * r.fraction_hyb_smaller);
      doc["alpha"] = a.cfg.alpha;
      doc["lambda"] = a.lambda.value_or(0.5);
      doc["results"] = to_json(r);
      break;
    }
    case Study::kSweep: {
      const auto points = sweep(spec, a.alphas, a.cfg);
      doc["results"] = to_json(points);
      if (!a.csv.empty()) {
        write_output(a.csv, sweep_csv(points));
        manifest.output(a.csv);
      }
      break;
    }
  }
  write_output(a.out, io::to_document(doc));
  manifest.output(a.out);
  manifest.write_beside(a.out);
  return 0;
}

void add_common(CLI::App& sub, SimulateArgs& a) {
  sub.add_option("--spec", a.spec, "MixtureSpec JSON; defaults to the built-in spec for this study");
  sub.add_option("--seed", a.seed, "overrides the spec seed");
  sub.add_option("--mode", a.mode)->check(CLI::IsMember({"class_conditional", "marginal"}));
  sub.add_option("--k-cells", a.cfg.k)->check(CLI::PositiveNumber);
  sub.add_option("--n-cal", a.cfg.n_cal, "calibration examples per trial")->check(CLI::PositiveNumber);
  sub.add_option("--n-test", a.cfg.n_test, "test examples per trial")->check(CLI::PositiveNumber);
  sub.add_option("--cell-fraction", a.cfg.cell_fraction)->check(CLI::Range(0.0, 1.0));
  sub.add_option("--trials", a.cfg.trials)->check(CLI::PositiveNumber);
  sub.add_option("--threads", a.cfg.threads)->check(CLI::PositiveNumber);
  sub.add_option("--out", a.out)->required();
}

}  // namespace

void register_simulate_commands(CLI::App& root, std::vector<Command>& out) {
  auto* simulate = root.add_subcommand("simulate", "Monte Carlo studies on synthetic profiles");
  simulate->require_subcommand(1);
  {
    auto a = std::make_shared<SimulateArgs>();
    a->alphas = {0.15};
    auto* sub = simulate->add_subcommand("coverage", "empirical coverage of the calibrated detector");
    add_common(*sub, *a);
    sub->add_option("--alpha", a->alphas, "one or more miscoverage levels")->check(CLI::Range(0.0, 1.0));
    sub->add_option("--lambda", a->lambda, "conflict weight; runs the hybrid detector")->check(CLI::Range(0.0, 1.0));
    out.push_back({sub, [a, sub] { return run_simulate(*a, Study::kCoverage, *sub); }});
  }
  {
    auto a = std::make_shared<SimulateArgs>();
    a->alphas = {0.15};
    a->lambda = 0.5;
    auto* sub = simulate->add_subcommand("setsize", "paired SCAPE vs hybrid prediction-set sizes");
    add_common(*sub, *a);
    sub->add_option("--alpha", a->alphas)->check(CLI::Range(0.0, 1.0));
    sub->add_option("--lambda", a->lambda, "hybrid conflict weight")->check(CLI::Range(0.0, 1.0));
    out.push_back({sub, [a, sub] { return run_simulate(*a, Study::kSetSize, *sub); }});
  }
  {
    auto a = std::make_shared<SimulateArgs>();
    a->alphas = {0.5, 0.3, 0.15, 0.05, 0.01};
    auto* sub = simulate->add_subcommand("sweep", "accuracy and FPR across alpha (plot data)");
    add_common(*sub, *a);
    sub->add_option("--alphas", a->alphas)->delimiter(',')->check(CLI::Range(0.0, 1.0));
    sub->add_option("--lambda", a->lambda)->check(CLI::Range(0.0, 1.0));
    sub->add_option("--csv", a->csv, "also write the sweep as CSV");
    out.push_back({sub, [a, sub] { return run_simulate(*a, Study::kSweep, *sub); }});
  }
}

}  // namespace cellguard::cli
