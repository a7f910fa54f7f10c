#pragma once

// Per-cell error decisions from the layer-probe probabilities.
//
// Label convention throughout: 1 = erroneous extraction, 0 = correct.
// MV and CF act on the thresholded layer decisions. SCAPE partitions the
// non-conformity space into cells, ranks cells by false-to-true ratio on
// held-out data and keeps the shortest ranked prefix that reaches the
// required coverage. The hybrid variant appends a weighted disagreement
// coordinate before clustering.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cellguard/kmeans.hpp"

namespace cellguard {

struct ProbabilityProfile {
  std::string extraction_id;
  std::vector<double> pi;  // one entry per layer, in (0,1)
};

// --- vote-based detectors ------------------------------------------------

int mv_vote(std::span<const int> decisions);
int conflict_kappa(std::span<const int> decisions, int mv);
int cf_decide(int mv, int kappa, int tau);

// --- non-conformity --------------------------------------------------------

std::vector<double> nonconformity(std::span<const double> pi, int c);
double disagreement_delta(std::span<const double> pi);
std::vector<double> augment(std::span<const double> s, double delta, double lambda);

// s(c) when lambda is empty, otherwise the augmented s_λ(c).
std::vector<double> score_vector(std::span<const double> pi, int c, std::optional<double> lambda);

// --- prediction sets ---------------------------------------------------------

struct PredictionSet {
  bool has_correct = false;    // label 0
  bool has_erroneous = false;  // label 1

  bool contains(int c) const { return c == 0 ? has_correct : has_erroneous; }
  std::size_t size() const { return static_cast<std::size_t>(has_correct) + static_cast<std::size_t>(has_erroneous); }
  bool operator==(const PredictionSet&) const = default;
};

nlohmann::json to_json(const PredictionSet& s);  // sorted label list, e.g. [0,1]
PredictionSet prediction_set_from_json(const nlohmann::json& j);
PredictionSet singleton(int c);

enum class Decision { kAccept, kReview };
std::string_view to_string(Decision d);

Decision flag(const PredictionSet& set, bool conflict);

// One line of detector output. MV and CF emit singleton sets.
struct Detection {
  std::string extraction_id;
  Decision decision = Decision::kReview;
  PredictionSet prediction_set;

  bool operator==(const Detection&) const = default;
};

std::string serialize_detections(const std::vector<Detection>& detections);
std::vector<Detection> parse_detections(std::string_view text);

// --- calibrated partition -----------------------------------------------------

enum class CoverageMode { kClassConditional, kMarginal };
std::string_view to_string(CoverageMode m);
CoverageMode coverage_mode_from_string(std::string_view s);

struct CalibrationExample {
  std::vector<double> pi;
  int label = 0;
};

struct CellStats {
  std::vector<std::size_t> true_hits;
  std::vector<std::size_t> false_hits;
  std::vector<double> rho;            // +inf when true_hits == 0
  std::vector<std::size_t> ranking;   // cell indices, ascending rho, ties by index
};

struct Selection {
  std::size_t eta_star = 0;
  std::size_t required = 0;  // ceil((1-alpha)(N+1))
  std::size_t covered = 0;   // count inside the selected prefix
  std::size_t n = 0;         // examples counted toward coverage
  bool under_coverage = false;
};

struct CellPartition {
  std::vector<Point> centroids;
  CellStats stats;
  Selection selection;
  std::vector<bool> selected;  // per cell index
  double alpha = 0.15;
  std::optional<double> lambda;
  CoverageMode mode = CoverageMode::kClassConditional;
  std::uint64_t seed = 0;
  std::size_t requested_k = 0;
};

struct CalibrationOptions {
  double alpha = 0.15;
  std::optional<double> lambda;  // empty = SCAPE, set = hybrid
  std::size_t k = 16;
  CoverageMode mode = CoverageMode::kClassConditional;
  std::uint64_t seed = 0;
};

// min(k, floor(n_cell / 5)), at least 1.
std::size_t effective_k(std::size_t requested, std::size_t n_cell);

// Clusters the true-label score vectors s(y_i). K is further clamped to the
// number of distinct score vectors.
std::vector<Point> build_cells(std::span<const CalibrationExample> cell_set, std::size_t k,
                               std::optional<double> lambda, std::uint64_t seed);

CellStats rank_cells(const std::vector<Point>& centroids, std::span<const CalibrationExample> recal,
                     std::optional<double> lambda);

std::size_t required_count(double alpha, std::size_t n);

Selection select_cells(const std::vector<Point>& centroids, const CellStats& stats,
                       std::span<const CalibrationExample> recal, double alpha, std::optional<double> lambda,
                       CoverageMode mode);

CellPartition calibrate(std::span<const CalibrationExample> cell_set, std::span<const CalibrationExample> recal,
                        const CalibrationOptions& options);

PredictionSet predict_set(const CellPartition& model, std::span<const double> pi);

nlohmann::json to_json(const CellPartition& p);
CellPartition cell_partition_from_json(const nlohmann::json& j);
void save_partition(const CellPartition& p, const std::filesystem::path& path);
CellPartition load_partition(const std::filesystem::path& path);

}  // namespace cellguard
