#include "cellguard/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "cellguard/error.hpp"
#include "cellguard/evaluation.hpp"
#include "cellguard/parallel.hpp"

namespace cellguard {
namespace {

double draw_beta(const BetaParams& p, std::mt19937_64& rng) {
  std::gamma_distribution<double> ga(p.a, 1.0);
  std::gamma_distribution<double> gb(p.b, 1.0);
  const double x = ga(rng);
  const double y = gb(rng);
  // Keep draws strictly inside (0,1) like classifier outputs.
  constexpr double kEdge = 1e-9;
  const double v = x + y > 0 ? x / (x + y) : 0.5;
  return std::clamp(v, kEdge, 1.0 - kEdge);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

struct TrialData {
  std::vector<CalibrationExample> cell;
  std::vector<CalibrationExample> recal;
  std::vector<CalibrationExample> test;
};

TrialData draw_trial(const MixtureSpec& spec, const TrialConfig& cfg, std::mt19937_64& rng) {
  TrialData d;
  auto cal = gen_synthetic(spec, cfg.n_cal, rng);
  const auto n_cell = static_cast<std::size_t>(std::floor(cfg.cell_fraction * static_cast<double>(cfg.n_cal)));
  d.cell.assign(cal.begin(), cal.begin() + static_cast<std::ptrdiff_t>(n_cell));
  d.recal.assign(cal.begin() + static_cast<std::ptrdiff_t>(n_cell), cal.end());
  d.test = gen_synthetic(spec, cfg.n_test, rng);
  return d;
}

std::vector<PredictionSet> predict_all(const CellPartition& model, const std::vector<CalibrationExample>& xs) {
  std::vector<PredictionSet> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(predict_set(model, x.pi));
  return out;
}

std::vector<int> labels_of(const std::vector<CalibrationExample>& xs) {
  std::vector<int> out;
  out.reserve(xs.size());
  for (const auto& x : xs) out.push_back(x.label);
  return out;
}

CalibrationOptions options_for(const TrialConfig& cfg, double alpha, std::optional<double> lambda,
                               std::uint64_t seed) {
  return {alpha, lambda, cfg.k, cfg.mode, seed};
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

MixtureSpec MixtureSpec::uniform(std::size_t layers, double p_err, BetaParams correct, BetaParams erroneous,
                                 std::uint64_t seed) {
  MixtureSpec s;
  s.layers = layers;
  s.p_err = p_err;
  s.correct.assign(layers, correct);
  s.erroneous.assign(layers, erroneous);
  s.seed = seed;
  return s;
}

MixtureSpec MixtureSpec::default_spec() { return uniform(8, 0.3, {2.0, 5.0}, {5.0, 2.0}, 20240601); }

// Conflicted errors have three of four layers fooled and one dissenting layer,
// while correct items are tightly consistent, so a high disagreement marks
// errors that the per-layer scores mostly call correct.
MixtureSpec MixtureSpec::informative_conflict_spec() {
  auto s = uniform(4, 0.4, {4.0, 16.0}, {8.0, 2.0}, 20240602);
  s.conflict_item_fraction = 0.6;
  s.conflict_layer_fraction = 0.75;
  return s;
}

void MixtureSpec::validate() const {
  if (layers == 0) throw ValidationError("mixture needs at least one layer");
  if (!(p_err >= 0.0 && p_err <= 1.0)) throw ValidationError(fmt::format("p_err={} outside [0,1]", p_err));
  if (correct.size() != layers || erroneous.size() != layers) {
    throw ValidationError("per-layer Beta parameters must have one entry per layer");
  }
  for (const auto* side : {&correct, &erroneous}) {
    for (const auto& p : *side) {
      if (!(p.a > 0 && p.b > 0)) throw ValidationError("Beta parameters must be positive");
    }
  }
  for (double f : {conflict_item_fraction, conflict_layer_fraction}) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError(fmt::format("conflict fraction {} outside [0,1]", f));
  }
}

nlohmann::json to_json(const MixtureSpec& s) {
  auto params = [](const std::vector<BetaParams>& ps) {
    auto out = nlohmann::json::array();
    for (const auto& p : ps) out.push_back({p.a, p.b});
    return out;
  };
  return {{"layers", s.layers},
          {"p_err", s.p_err},
          {"correct", params(s.correct)},
          {"erroneous", params(s.erroneous)},
          {"conflict_item_fraction", s.conflict_item_fraction},
          {"conflict_layer_fraction", s.conflict_layer_fraction},
          {"seed", s.seed}};
}

MixtureSpec mixture_spec_from_json(const nlohmann::json& j) {
  try {
    MixtureSpec s;
    s.layers = j.at("layers").get<std::size_t>();
    s.p_err = j.at("p_err").get<double>();
    auto params = [&](const nlohmann::json& arr) {
      std::vector<BetaParams> out;
      // A single pair applies to every layer.
      if (arr.size() == 2 && arr[0].is_number()) {
        out.assign(s.layers, {arr[0].get<double>(), arr[1].get<double>()});
        return out;
      }
      for (const auto& p : arr) out.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      return out;
    };
    s.correct = params(j.at("correct"));
    s.erroneous = params(j.at("erroneous"));
    s.conflict_item_fraction = j.value("conflict_item_fraction", 0.0);
    s.conflict_layer_fraction = j.value("conflict_layer_fraction", 0.0);
    s.seed = j.value("seed", std::uint64_t{0});
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("malformed mixture spec: {}", e.what()));
  }
}

std::vector<CalibrationExample> gen_synthetic(const MixtureSpec& spec, std::size_t n, std::mt19937_64& rng) {
  spec.validate();
  std::bernoulli_distribution is_error(spec.p_err);
  std::bernoulli_distribution in_conflict(spec.conflict_item_fraction);
  const auto inverted = static_cast<std::size_t>(
      std::llround(spec.conflict_layer_fraction * static_cast<double>(spec.layers)));
  std::vector<std::size_t> order(spec.layers);

  std::vector<CalibrationExample> out(n);
  for (auto& ex : out) {
    ex.label = is_error(rng) ? 1 : 0;
    const auto& params = ex.label == 1 ? spec.erroneous : spec.correct;
    ex.pi.resize(spec.layers);
    for (std::size_t l = 0; l < spec.layers; ++l) ex.pi[l] = draw_beta(params[l], rng);
    if (ex.label == 1 && inverted > 0 && in_conflict(rng)) {
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i = 0; i < inverted; ++i) ex.pi[order[i]] = 1.0 - ex.pi[order[i]];
    }
  }
  return out;
}

std::vector<CalibrationExample> gen_synthetic(const MixtureSpec& spec, std::size_t n) {
  std::mt19937_64 rng(spec.seed);
  return gen_synthetic(spec, n, rng);
}

std::uint64_t trial_seed(std::uint64_t base, std::uint64_t index) {
  return splitmix64(splitmix64(base) ^ index);
}

CoverageReport coverage_trial(const MixtureSpec& spec, const TrialConfig& cfg) {
  if (cfg.trials == 0) throw ValidationError("at least one trial is required");
  CoverageReport r;
  r.coverage.assign(cfg.trials, 0.0);
  r.set_size.assign(cfg.trials, 0.0);
  std::vector<char> under(cfg.trials, 0);
  parallel_for(cfg.trials, cfg.threads, [&](std::size_t t) {
    const auto seed = trial_seed(spec.seed, t);
    std::mt19937_64 rng(seed);
    const auto data = draw_trial(spec, cfg, rng);
    const auto model = calibrate(data.cell, data.recal, options_for(cfg, cfg.alpha, cfg.lambda, seed));
    const auto sets = predict_all(model, data.test);
    const auto labels = labels_of(data.test);
    // A test batch without errors covers vacuously.
    r.coverage[t] = empirical_coverage(sets, labels).value_or(1.0);
    r.set_size[t] = mean_set_size(sets);
    under[t] = model.selection.under_coverage ? 1 : 0;
  });
  r.under_coverage_trials = static_cast<std::size_t>(std::count(under.begin(), under.end(), 1));
  r.mean_coverage = mean(r.coverage);
  r.mean_set_size = mean(r.set_size);
  const auto below = std::count_if(r.coverage.begin(), r.coverage.end(),
                                   [&](double c) { return c < 1.0 - cfg.alpha; });
  r.fraction_below_target = static_cast<double>(below) / static_cast<double>(cfg.trials);
  return r;
}

SetSizeReport setsize_trial(const MixtureSpec& spec, const TrialConfig& cfg) {
  if (cfg.trials == 0) throw ValidationError("at least one trial is required");
  const double lambda = cfg.lambda.value_or(0.5);
  SetSizeReport r;
  r.scape.assign(cfg.trials, 0.0);
  r.hyb.assign(cfg.trials, 0.0);
  parallel_for(cfg.trials, cfg.threads, [&](std::size_t t) {
    const auto seed = trial_seed(spec.seed, t);
    std::mt19937_64 rng(seed);
    const auto data = draw_trial(spec, cfg, rng);
    const auto scape = calibrate(data.cell, data.recal, options_for(cfg, cfg.alpha, std::nullopt, seed));
    const auto hyb = calibrate(data.cell, data.recal, options_for(cfg, cfg.alpha, lambda, seed));
    r.scape[t] = mean_set_size(predict_all(scape, data.test));
    r.hyb[t] = mean_set_size(predict_all(hyb, data.test));
  });
  r.mean_scape = mean(r.scape);
  r.mean_hyb = mean(r.hyb);
  r.mean_difference = r.mean_hyb - r.mean_scape;
  std::size_t smaller = 0;
  for (std::size_t t = 0; t < cfg.trials; ++t) smaller += r.hyb[t] < r.scape[t] ? 1 : 0;
  r.fraction_hyb_smaller = static_cast<double>(smaller) / static_cast<double>(cfg.trials);
  return r;
}

std::vector<SweepPoint> sweep(const MixtureSpec& spec, const std::vector<double>& alphas, const TrialConfig& cfg) {
  if (cfg.trials == 0) throw ValidationError("at least one trial is required");
  std::vector<SweepPoint> points;
  for (double alpha : alphas) {
    std::vector<SweepPoint> per_trial(cfg.trials);
    parallel_for(cfg.trials, cfg.threads, [&](std::size_t t) {
      // Same draws for every alpha so the curve reflects alpha alone.
      const auto seed = trial_seed(spec.seed, t);
      std::mt19937_64 rng(seed);
      const auto data = draw_trial(spec, cfg, rng);
      const auto model = calibrate(data.cell, data.recal, options_for(cfg, alpha, cfg.lambda, seed));
      std::size_t correct = 0, errors = 0, flagged = 0, flagged_correct = 0, fixed = 0, covered = 0;
      for (const auto& x : data.test) {
        const auto set = predict_set(model, x.pi);
        const bool review = flag(set, false) == Decision::kReview;
        flagged += review ? 1 : 0;
        if (x.label == 0) {
          ++correct;
          flagged_correct += review ? 1 : 0;
        } else {
          ++errors;
          fixed += review ? 1 : 0;
          covered += set.has_erroneous ? 1 : 0;
        }
      }
      const auto n = static_cast<double>(data.test.size());
      auto& p = per_trial[t];
      p.alpha = alpha;
      p.accuracy_before = static_cast<double>(correct) / n;
      p.accuracy_after = static_cast<double>(correct + fixed) / n;
      p.fpr = correct ? static_cast<double>(flagged_correct) / static_cast<double>(correct) : 0.0;
      p.reviewed_fraction = static_cast<double>(flagged) / n;
      p.coverage = errors ? static_cast<double>(covered) / static_cast<double>(errors) : 1.0;
    });
    SweepPoint avg;
    avg.alpha = alpha;
    for (const auto& p : per_trial) {
      avg.accuracy_before += p.accuracy_before;
      avg.accuracy_after += p.accuracy_after;
      avg.fpr += p.fpr;
      avg.reviewed_fraction += p.reviewed_fraction;
      avg.coverage += p.coverage;
    }
    const auto k = static_cast<double>(cfg.trials);
    avg.accuracy_before /= k;
    avg.accuracy_after /= k;
    avg.fpr /= k;
    avg.reviewed_fraction /= k;
    avg.coverage /= k;
    points.push_back(avg);
  }
  return points;
}

nlohmann::json to_json(const CoverageReport& r) {
  return {{"mean_coverage", r.mean_coverage},
          {"fraction_below_target", r.fraction_below_target},
          {"mean_set_size", r.mean_set_size},
          {"under_coverage_trials", r.under_coverage_trials},
          {"coverage", r.coverage},
          {"set_size", r.set_size}};
}

nlohmann::json to_json(const SetSizeReport& r) {
  return {{"mean_scape", r.mean_scape},
          {"mean_hyb", r.mean_hyb},
          {"mean_difference", r.mean_difference},
          {"fraction_hyb_smaller", r.fraction_hyb_smaller},
          {"scape", r.scape},
          {"hyb", r.hyb}};
}

nlohmann::json to_json(const std::vector<SweepPoint>& points) {
  auto out = nlohmann::json::array();
  for (const auto& p : points) {
    out.push_back({{"alpha", p.alpha},
                   {"accuracy_before", p.accuracy_before},
                   {"accuracy_after", p.accuracy_after},
                   {"fpr", p.fpr},
                   {"reviewed_fraction", p.reviewed_fraction},
                   {"coverage", p.coverage}});
  }
  return out;
}

}  // namespace cellguard
