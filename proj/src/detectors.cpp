#include "cellguard/detectors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cellguard/error.hpp"
#include "cellguard/io.hpp"

namespace cellguard {
namespace {

constexpr int kPartitionVersion = 1;
constexpr std::size_t kMinPointsPerCell = 5;

void check_label(int c) {
  if (c != 0 && c != 1) throw ValidationError(fmt::format("label {} is not 0 or 1", c));
}

}  // namespace

int mv_vote(std::span<const int> decisions) {
  if (decisions.empty()) throw ValidationError("majority vote over zero layers");
  const auto sum = std::accumulate(decisions.begin(), decisions.end(), std::size_t{0},
                                   [](std::size_t acc, int d) { return acc + (d != 0 ? 1 : 0); });
  return 2 * sum > decisions.size() ? 1 : 0;
}

int conflict_kappa(std::span<const int> decisions, int mv) {
  return static_cast<int>(std::count_if(decisions.begin(), decisions.end(), [mv](int d) { return d != mv; }));
}

int cf_decide(int mv, int kappa, int tau) {
  if (tau < 1) throw ValidationError(fmt::format("conflict threshold tau={} must be at least 1", tau));
  return kappa >= tau ? 1 : mv;
}

std::vector<double> nonconformity(std::span<const double> pi, int c) {
  check_label(c);
  std::vector<double> s(pi.begin(), pi.end());
  if (c == 1) {
    for (auto& v : s) v = 1.0 - v;
  }
  return s;
}

double disagreement_delta(std::span<const double> pi) {
  if (pi.empty()) throw ValidationError("disagreement over zero layers");
  const double mean = std::accumulate(pi.begin(), pi.end(), 0.0) / static_cast<double>(pi.size());
  double delta = 0.0;
  for (double p : pi) delta = std::max(delta, std::abs(p - mean));
  return delta;
}

std::vector<double> augment(std::span<const double> s, double delta, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValidationError(fmt::format("lambda={} outside [0,1]", lambda));
  std::vector<double> out;
  out.reserve(s.size() + 1);
  for (double v : s) out.push_back((1.0 - lambda) * v);
  out.push_back(lambda * delta);
  return out;
}

std::vector<double> score_vector(std::span<const double> pi, int c, std::optional<double> lambda) {
  auto s = nonconformity(pi, c);
  if (!lambda) return s;
  return augment(s, disagreement_delta(pi), *lambda);
}

nlohmann::json to_json(const PredictionSet& s) {
  auto out = nlohmann::json::array();
  if (s.has_correct) out.push_back(0);
  if (s.has_erroneous) out.push_back(1);
  return out;
}

PredictionSet prediction_set_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ParseError("prediction set must be a list of labels");
  PredictionSet s;
  for (const auto& v : j) {
    const int c = v.get<int>();
    check_label(c);
    (c == 0 ? s.has_correct : s.has_erroneous) = true;
  }
  return s;
}

PredictionSet singleton(int c) {
  check_label(c);
  return c == 0 ? PredictionSet{true, false} : PredictionSet{false, true};
}

std::string_view to_string(Decision d) { return d == Decision::kAccept ? "accept" : "review"; }

Decision flag(const PredictionSet& set, bool conflict) {
  return set.has_correct && !set.has_erroneous && !conflict ? Decision::kAccept : Decision::kReview;
}

std::string serialize_detections(const std::vector<Detection>& detections) {
  std::vector<nlohmann::json> lines;
  lines.reserve(detections.size());
  for (const auto& d : detections) {
    lines.push_back({{"extraction_id", d.extraction_id},
                     {"decision", to_string(d.decision)},
                     {"prediction_set", to_json(d.prediction_set)}});
  }
  return io::to_json_lines(lines);
}

std::vector<Detection> parse_detections(std::string_view text) {
  std::vector<Detection> out;
  io::for_each_json_line(text, [&](std::size_t line, const nlohmann::json& j) {
    try {
      Detection d;
      d.extraction_id = j.at("extraction_id").get<std::string>();
      const auto decision = j.at("decision").get<std::string>();
      if (decision == "accept") {
        d.decision = Decision::kAccept;
      } else if (decision == "review") {
        d.decision = Decision::kReview;
      } else {
        throw ParseError(fmt::format("unknown decision '{}'", decision));
      }
      d.prediction_set = prediction_set_from_json(j.at("prediction_set"));
      out.push_back(std::move(d));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(fmt::format("line {}: malformed detection: {}", line, e.what()));
    } catch (const Error& e) {
      throw ParseError(fmt::format("line {}: {}", line, e.what()));
    }
  });
  return out;
}

std::string_view to_string(CoverageMode m) {
  return m == CoverageMode::kClassConditional ? "class_conditional" : "marginal";
}

CoverageMode coverage_mode_from_string(std::string_view s) {
  if (s == "class_conditional") return CoverageMode::kClassConditional;
  if (s == "marginal") return CoverageMode::kMarginal;
  throw ValidationError(fmt::format("unknown coverage mode '{}'", s));
}

std::size_t effective_k(std::size_t requested, std::size_t n_cell) {
  return std::max<std::size_t>(1, std::min(requested, n_cell / kMinPointsPerCell));
}

std::vector<Point> build_cells(std::span<const CalibrationExample> cell_set, std::size_t k,
                               std::optional<double> lambda, std::uint64_t seed) {
  if (cell_set.empty()) throw ValidationError("cell-construction set is empty");
  std::vector<Point> points;
  points.reserve(cell_set.size());
  for (const auto& ex : cell_set) points.push_back(score_vector(ex.pi, ex.label, lambda));
  if (k > points.size()) {
    throw ValidationError(fmt::format("K={} exceeds the {} score vectors available", k, points.size()));
  }
  const std::size_t distinct = count_distinct(points);
  if (k > distinct) {
    spdlog::debug("K={} reduced to {} (number of distinct score vectors)", k, distinct);
    k = distinct;
  }
  return kmeans(points, k, seed).centroids;
}

CellStats rank_cells(const std::vector<Point>& centroids, std::span<const CalibrationExample> recal,
                     std::optional<double> lambda) {
  if (recal.empty()) throw ValidationError("re-calibration set is empty");
  const std::size_t k = centroids.size();
  CellStats st;
  st.true_hits.assign(k, 0);
  st.false_hits.assign(k, 0);
  for (const auto& ex : recal) {
    check_label(ex.label);
    ++st.true_hits[nearest_centroid(centroids, score_vector(ex.pi, ex.label, lambda))];
    ++st.false_hits[nearest_centroid(centroids, score_vector(ex.pi, 1 - ex.label, lambda))];
  }
  st.rho.resize(k);
  for (std::size_t m = 0; m < k; ++m) {
    st.rho[m] = st.true_hits[m] == 0 ? std::numeric_limits<double>::infinity()
                                     : static_cast<double>(st.false_hits[m]) / static_cast<double>(st.true_hits[m]);
  }
  st.ranking.resize(k);
  std::iota(st.ranking.begin(), st.ranking.end(), 0);
  std::stable_sort(st.ranking.begin(), st.ranking.end(),
                   [&](std::size_t a, std::size_t b) { return st.rho[a] < st.rho[b]; });
  return st;
}

std::size_t required_count(double alpha, std::size_t n) {
  // The epsilon keeps exact products such as 0.5 * 10 from rounding up.
  const double target = (1.0 - alpha) * static_cast<double>(n + 1);
  return static_cast<std::size_t>(std::ceil(target - 1e-9));
}

Selection select_cells(const std::vector<Point>& centroids, const CellStats& stats,
                       std::span<const CalibrationExample> recal, double alpha, std::optional<double> lambda,
                       CoverageMode mode) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError(fmt::format("alpha={} outside (0,1)", alpha));
  const std::size_t k = centroids.size();
  std::vector<std::size_t> position(k);
  for (std::size_t r = 0; r < k; ++r) position[stats.ranking[r]] = r;

  // hits_at[r] = relevant examples whose s(y) lands in the cell ranked r.
  std::vector<std::size_t> hits_at(k, 0);
  Selection sel;
  for (const auto& ex : recal) {
    if (mode == CoverageMode::kClassConditional && ex.label != 1) continue;
    ++sel.n;
    ++hits_at[position[nearest_centroid(centroids, score_vector(ex.pi, ex.label, lambda))]];
  }
  sel.required = required_count(alpha, sel.n);
  std::size_t covered = 0;
  for (std::size_t r = 0; r < k; ++r) {
    covered += hits_at[r];
    if (covered >= sel.required) {
      sel.eta_star = r + 1;
      sel.covered = covered;
      return sel;
    }
  }
  sel.eta_star = k;
  sel.covered = covered;
  sel.under_coverage = true;
  return sel;
}

CellPartition calibrate(std::span<const CalibrationExample> cell_set, std::span<const CalibrationExample> recal,
                        const CalibrationOptions& options) {
  CellPartition p;
  p.alpha = options.alpha;
  p.lambda = options.lambda;
  p.mode = options.mode;
  p.seed = options.seed;
  p.requested_k = options.k;
  const std::size_t k = effective_k(options.k, cell_set.size());
  if (k < options.k) {
    spdlog::debug("K={} reduced to {} for {} cell-construction examples", options.k, k, cell_set.size());
  }
  p.centroids = build_cells(cell_set, k, options.lambda, options.seed);
  p.stats = rank_cells(p.centroids, recal, options.lambda);
  p.selection = select_cells(p.centroids, p.stats, recal, options.alpha, options.lambda, options.mode);
  if (p.selection.under_coverage) {
    spdlog::debug("coverage target unattainable: {} of {} required examples covered by all {} cells",
                 p.selection.covered, p.selection.required, p.centroids.size());
  }
  p.selected.assign(p.centroids.size(), false);
  for (std::size_t r = 0; r < p.selection.eta_star; ++r) p.selected[p.stats.ranking[r]] = true;
  return p;
}

PredictionSet predict_set(const CellPartition& model, std::span<const double> pi) {
  PredictionSet s;
  s.has_correct = model.selected[nearest_centroid(model.centroids, score_vector(pi, 0, model.lambda))];
  s.has_erroneous = model.selected[nearest_centroid(model.centroids, score_vector(pi, 1, model.lambda))];
  return s;
}

namespace {

nlohmann::json rho_to_json(double r) {
  return std::isinf(r) ? nlohmann::json("inf") : nlohmann::json(r);
}

double rho_from_json(const nlohmann::json& j) {
  if (j.is_string() && j.get<std::string>() == "inf") return std::numeric_limits<double>::infinity();
  return j.get<double>();
}

}  // namespace

nlohmann::json to_json(const CellPartition& p) {
  auto rho = nlohmann::json::array();
  for (double r : p.stats.rho) rho.push_back(rho_to_json(r));
  return {{"format", "cellguard-cell-partition"},
          {"version", kPartitionVersion},
          {"detector", p.lambda ? "hyb" : "scape"},
          {"alpha", p.alpha},
          {"lambda", p.lambda ? nlohmann::json(*p.lambda) : nlohmann::json(nullptr)},
          {"mode", to_string(p.mode)},
          {"seed", p.seed},
          {"requested_k", p.requested_k},
          {"centroids", p.centroids},
          {"true_hits", p.stats.true_hits},
          {"false_hits", p.stats.false_hits},
          {"rho", rho},
          {"ranking", p.stats.ranking},
          {"eta_star", p.selection.eta_star},
          {"required", p.selection.required},
          {"covered", p.selection.covered},
          {"n_counted", p.selection.n},
          {"under_coverage", p.selection.under_coverage}};
}

CellPartition cell_partition_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "cellguard-cell-partition") {
    throw VersionMismatchError("not a cellguard cell-partition file");
  }
  if (j.value("version", 0) != kPartitionVersion) {
    throw VersionMismatchError(fmt::format("cell-partition file version {} is not supported (expected {})",
                                           j.value("version", 0), kPartitionVersion));
  }
  try {
    CellPartition p;
    p.alpha = j.at("alpha").get<double>();
    if (!j.at("lambda").is_null()) p.lambda = j.at("lambda").get<double>();
    p.mode = coverage_mode_from_string(j.at("mode").get<std::string>());
    p.seed = j.at("seed").get<std::uint64_t>();
    p.requested_k = j.value("requested_k", std::size_t{0});
    p.centroids = j.at("centroids").get<std::vector<Point>>();
    p.stats.true_hits = j.at("true_hits").get<std::vector<std::size_t>>();
    p.stats.false_hits = j.at("false_hits").get<std::vector<std::size_t>>();
    for (const auto& r : j.at("rho")) p.stats.rho.push_back(rho_from_json(r));
    p.stats.ranking = j.at("ranking").get<std::vector<std::size_t>>();
    p.selection.eta_star = j.at("eta_star").get<std::size_t>();
    p.selection.required = j.value("required", std::size_t{0});
    p.selection.covered = j.value("covered", std::size_t{0});
    p.selection.n = j.value("n_counted", std::size_t{0});
    p.selection.under_coverage = j.value("under_coverage", false);

    const std::size_t k = p.centroids.size();
    std::vector<std::size_t> check = p.stats.ranking;
    std::sort(check.begin(), check.end());
    bool permutation = check.size() == k;
    for (std::size_t i = 0; permutation && i < k; ++i) permutation = check[i] == i;
    if (k == 0 || !permutation || p.selection.eta_star < 1 || p.selection.eta_star > k ||
        p.stats.true_hits.size() != k || p.stats.false_hits.size() != k || p.stats.rho.size() != k) {
      throw ValidationError("cell-partition file is internally inconsistent");
    }
    p.selected.assign(k, false);
    for (std::size_t r = 0; r < p.selection.eta_star; ++r) p.selected[p.stats.ranking[r]] = true;
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("malformed cell-partition file: {}", e.what()));
  }
}

void save_partition(const CellPartition& p, const std::filesystem::path& path) {
  io::write_file(path, io::to_document(to_json(p)));
}

CellPartition load_partition(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return cell_partition_from_json(j);
}

}  // namespace cellguard
