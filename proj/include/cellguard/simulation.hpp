#pragma once

// Synthetic probability profiles with known labels, and the Monte Carlo
// trials that check the detectors' coverage and set-size behavior without
// any model or corpus in the loop.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "cellguard/detectors.hpp"

namespace cellguard {

struct BetaParams {
  double a = 1.0;
  double b = 1.0;
};

struct MixtureSpec {
  std::size_t layers = 8;
  double p_err = 0.3;
  std::vector<BetaParams> correct;    // per layer
  std::vector<BetaParams> erroneous;  // per layer
  double conflict_item_fraction = 0.0;   // share of error items in the conflict regime
  double conflict_layer_fraction = 0.0;  // share of layers inverted for those items
  std::uint64_t seed = 0;

  // Same Beta pair on every layer.
  static MixtureSpec uniform(std::size_t layers, double p_err, BetaParams correct, BetaParams erroneous,
                             std::uint64_t seed = 0);
  // Moderately separated classes, no conflict regime.
  static MixtureSpec default_spec();
  // Conflict regime in which layer disagreement carries label information.
  static MixtureSpec informative_conflict_spec();

  void validate() const;
};

nlohmann::json to_json(const MixtureSpec& s);
MixtureSpec mixture_spec_from_json(const nlohmann::json& j);

std::vector<CalibrationExample> gen_synthetic(const MixtureSpec& spec, std::size_t n, std::mt19937_64& rng);
std::vector<CalibrationExample> gen_synthetic(const MixtureSpec& spec, std::size_t n);

// Independent stream for trial `index` under `base`.
std::uint64_t trial_seed(std::uint64_t base, std::uint64_t index);

struct TrialConfig {
  double alpha = 0.15;
  std::optional<double> lambda;
  CoverageMode mode = CoverageMode::kClassConditional;
  std::size_t k = 16;
  std::size_t n_cal = 150;
  std::size_t n_test = 500;
  double cell_fraction = 0.5;
  std::size_t trials = 200;
  std::size_t threads = 4;
};

struct CoverageReport {
  std::vector<double> coverage;  // per trial
  std::vector<double> set_size;  // per trial
  std::size_t under_coverage_trials = 0;
  double mean_coverage = 0.0;
  double fraction_below_target = 0.0;
  double mean_set_size = 0.0;
};

CoverageReport coverage_trial(const MixtureSpec& spec, const TrialConfig& cfg);

struct SetSizeReport {
  std::vector<double> scape;  // per-trial mean |set|
  std::vector<double> hyb;
  double mean_scape = 0.0;
  double mean_hyb = 0.0;
  double mean_difference = 0.0;       // hyb - scape
  double fraction_hyb_smaller = 0.0;  // strictly smaller
};

// cfg.lambda is the hybrid weight (defaults to 0.5); both detectors share
// every draw, the seed and K.
SetSizeReport setsize_trial(const MixtureSpec& spec, const TrialConfig& cfg);

struct SweepPoint {
  double alpha = 0.0;
  double accuracy_before = 0.0;  // share of correct items before review
  double accuracy_after = 0.0;   // flagged errors assumed fixed by the reviewer
  double fpr = 0.0;              // correct items flagged
  double reviewed_fraction = 0.0;
  double coverage = 0.0;
};

std::vector<SweepPoint> sweep(const MixtureSpec& spec, const std::vector<double>& alphas, const TrialConfig& cfg);

nlohmann::json to_json(const CoverageReport& r);
nlohmann::json to_json(const SetSizeReport& r);
nlohmann::json to_json(const std::vector<SweepPoint>& points);

}  // namespace cellguard
