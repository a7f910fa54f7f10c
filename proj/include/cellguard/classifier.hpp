#pragma once

// Per-layer error probe: a one-hidden-layer MLP over the pooled 2d feature,
// trained full-batch on binary cross-entropy. Label 1 means "erroneous".
// Inputs are z-scaled with statistics stored alongside the weights so a
// loaded model reproduces the trained one exactly.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cellguard {

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;  // zero-variance columns get scale 1

  static Standardizer fit(const std::vector<std::vector<float>>& rows);
  std::vector<double> apply(std::span<const float> x) const;
};

// Parameters in double; w1 is hidden x in, row-major.
struct MlpParams {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::vector<double> w1, b1, w2;
  double b2 = 0.0;

  static MlpParams zeros(std::size_t in, std::size_t hidden);
  static MlpParams he_init(std::size_t in, std::size_t hidden, std::uint64_t seed);
  std::size_t size() const { return w1.size() + b1.size() + w2.size() + 1; }
  // Flat view in the order w1, b1, w2, b2; used by the optimizer and the gradient check.
  std::vector<double> flatten() const;
  void assign(std::span<const double> flat);
};

double mlp_logit(const MlpParams& p, std::span<const double> x);
double sigmoid(double z);

// Mean binary cross-entropy over (x, y). When grad is non-null it receives
// dLoss/dθ with the same shape as p.
double bce_loss(const MlpParams& p, const std::vector<std::vector<double>>& x, std::span<const int> y,
                MlpParams* grad);

struct TrainOptions {
  std::size_t hidden = 64;
  int epochs = 200;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

struct LayerClassifier {
  int layer = 0;
  std::uint64_t seed = 0;
  Standardizer scaler;
  MlpParams params;
  double initial_loss = 0.0;
  double final_loss = 0.0;

  // Strictly inside (0, 1).
  double predict_proba(std::span<const float> feature) const;
};

// rows[i] is one pooled feature at this layer; labels are 0/1 and must
// contain both classes.
LayerClassifier train_layer_classifier(const std::vector<std::vector<float>>& rows, std::span<const int> labels,
                                       int layer, const TrainOptions& options);

// models[l] scores layers[l]; the result is the probability profile pi.
std::vector<double> predict_profile(const std::vector<LayerClassifier>& models,
                                    const std::vector<std::vector<float>>& layers);

// Strict: pi == theta decides "correct".
inline int threshold_decision(double pi, double theta = 0.5) { return pi > theta ? 1 : 0; }

nlohmann::json to_json(const LayerClassifier& c);
LayerClassifier classifier_from_json(const nlohmann::json& j);

// One file per layer: <dir>/layer_<l>.json.
void save_classifiers(const std::vector<LayerClassifier>& models, const std::filesystem::path& dir);
std::vector<LayerClassifier> load_classifiers(const std::filesystem::path& dir);

}  // namespace cellguard
