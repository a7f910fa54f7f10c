#include "cellguard/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "cellguard/error.hpp"
#include "cellguard/io.hpp"

namespace cellguard {
namespace {

constexpr int kModelVersion = 1;
constexpr double kProbFloor = 1e-12;

}  // namespace

Standardizer Standardizer::fit(const std::vector<std::vector<float>>& rows) {
  Standardizer s;
  if (rows.empty()) return s;
  const std::size_t d = rows.front().size();
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += r[j];
  }
  for (auto& m : s.mean) m /= static_cast<double>(rows.size());
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = r[j] - s.mean[j];
      s.scale[j] += c * c;
    }
  }
  for (auto& v : s.scale) {
    v = std::sqrt(v / static_cast<double>(rows.size()));
    if (!(v > 1e-12)) v = 1.0;
  }
  return s;
}

std::vector<double> Standardizer::apply(std::span<const float> x) const {
  if (x.size() != mean.size()) {
    throw ValidationError(fmt::format("feature has {} values, model expects {}", x.size(), mean.size()));
  }
  std::vector<double> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = (x[j] - mean[j]) / scale[j];
  return out;
}

MlpParams MlpParams::zeros(std::size_t in, std::size_t hidden) {
  MlpParams p;
  p.in = in;
  p.hidden = hidden;
  p.w1.assign(in * hidden, 0.0);
  p.b1.assign(hidden, 0.0);
  p.w2.assign(hidden, 0.0);
  return p;
}

MlpParams MlpParams::he_init(std::size_t in, std::size_t hidden, std::uint64_t seed) {
  MlpParams p = zeros(in, hidden);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n1(0.0, std::sqrt(2.0 / static_cast<double>(in)));
  std::normal_distribution<double> n2(0.0, std::sqrt(2.0 / static_cast<double>(hidden)));
  for (auto& w : p.w1) w = n1(rng);
  for (auto& w : p.w2) w = n2(rng);
  return p;
}

std::vector<double> MlpParams::flatten() const {
  std::vector<double> out;
  out.reserve(size());
  out.insert(out.end(), w1.begin(), w1.end());
  out.insert(out.end(), b1.begin(), b1.end());
  out.insert(out.end(), w2.begin(), w2.end());
  out.push_back(b2);
  return out;
}

void MlpParams::assign(std::span<const double> flat) {
  auto it = flat.begin();
  std::copy_n(it, w1.size(), w1.begin());
  it += static_cast<std::ptrdiff_t>(w1.size());
  std::copy_n(it, b1.size(), b1.begin());
  it += static_cast<std::ptrdiff_t>(b1.size());
  std::copy_n(it, w2.size(), w2.begin());
  it += static_cast<std::ptrdiff_t>(w2.size());
  b2 = *it;
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double mlp_logit(const MlpParams& p, std::span<const double> x) {
  double z = p.b2;
  for (std::size_t h = 0; h < p.hidden; ++h) {
    double a = p.b1[h];
    const double* row = p.w1.data() + h * p.in;
    for (std::size_t j = 0; j < p.in; ++j) a += row[j] * x[j];
    if (a > 0) z += p.w2[h] * a;
  }
  return z;
}

double bce_loss(const MlpParams& p, const std::vector<std::vector<double>>& x, std::span<const int> y,
                MlpParams* grad) {
  if (grad) *grad = MlpParams::zeros(p.in, p.hidden);
  const double n = static_cast<double>(x.size());
  std::vector<double> act(p.hidden);
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto& xi = x[i];
    double z = p.b2;
    for (std::size_t h = 0; h < p.hidden; ++h) {
      double a = p.b1[h];
      const double* row = p.w1.data() + h * p.in;
      for (std::size_t j = 0; j < p.in; ++j) a += row[j] * xi[j];
      act[h] = a > 0 ? a : 0.0;
      z += p.w2[h] * act[h];
    }
    // log(1 + e^z) - y z, computed without overflow.
    const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
    loss += softplus - y[i] * z;
    if (!grad) continue;
    const double dz = (sigmoid(z) - y[i]) / n;
    grad->b2 += dz;
    for (std::size_t h = 0; h < p.hidden; ++h) {
      if (act[h] <= 0) continue;
      grad->w2[h] += dz * act[h];
      const double da = dz * p.w2[h];
      grad->b1[h] += da;
      double* g = grad->w1.data() + h * p.in;
      for (std::size_t j = 0; j < p.in; ++j) g[j] += da * xi[j];
    }
  }
  return loss / n;
}

double LayerClassifier::predict_proba(std::span<const float> feature) const {
  const double p = sigmoid(mlp_logit(params, scaler.apply(feature)));
  return std::clamp(p, kProbFloor, 1.0 - kProbFloor);
}

std::vector<double> predict_profile(const std::vector<LayerClassifier>& models,
                                    const std::vector<std::vector<float>>& layers) {
  if (models.size() != layers.size()) {
    throw ValidationError(fmt::format("{} layer features for {} classifiers", layers.size(), models.size()));
  }
  std::vector<double> pi(models.size());
  for (std::size_t l = 0; l < models.size(); ++l) pi[l] = models[l].predict_proba(layers[l]);
  return pi;
}

LayerClassifier train_layer_classifier(const std::vector<std::vector<float>>& rows, std::span<const int> labels,
                                       int layer, const TrainOptions& options) {
  if (rows.size() != labels.size()) {
    throw ValidationError(fmt::format("{} feature rows but {} labels", rows.size(), labels.size()));
  }
  if (rows.empty()) throw ValidationError("empty training set");
  std::size_t positives = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError(fmt::format("label {} is not 0 or 1", y));
    positives += static_cast<std::size_t>(y);
  }
  if (positives == 0 || positives == labels.size()) {
    throw ValidationError(fmt::format("layer {}: training labels contain a single class", layer));
  }

  LayerClassifier model;
  model.layer = layer;
  model.seed = options.seed;
  model.scaler = Standardizer::fit(rows);
  std::vector<std::vector<double>> x;
  x.reserve(rows.size());
  for (const auto& r : rows) x.push_back(model.scaler.apply(r));

  const std::size_t in = rows.front().size();
  model.params = MlpParams::he_init(in, options.hidden, options.seed + static_cast<std::uint64_t>(layer));
  std::vector<double> theta = model.params.flatten();
  std::vector<double> velocity(theta.size(), 0.0);
  MlpParams grad;
  model.initial_loss = bce_loss(model.params, x, labels, nullptr);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    bce_loss(model.params, x, labels, &grad);
    const auto g = grad.flatten();
    for (std::size_t k = 0; k < theta.size(); ++k) {
      velocity[k] = options.momentum * velocity[k] - options.learning_rate * g[k];
      theta[k] += velocity[k];
    }
    model.params.assign(theta);
  }
  model.final_loss = bce_loss(model.params, x, labels, nullptr);
  return model;
}

nlohmann::json to_json(const LayerClassifier& c) {
  return {{"format", "cellguard-layer-classifier"},
          {"version", kModelVersion},
          {"layer", c.layer},
          {"seed", c.seed},
          {"input_dim", c.params.in},
          {"hidden", c.params.hidden},
          {"scaler", {{"mean", c.scaler.mean}, {"scale", c.scaler.scale}}},
          {"w1", c.params.w1},
          {"b1", c.params.b1},
          {"w2", c.params.w2},
          {"b2", c.params.b2},
          {"initial_loss", c.initial_loss},
          {"final_loss", c.final_loss}};
}

LayerClassifier classifier_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "cellguard-layer-classifier") {
    throw VersionMismatchError("not a cellguard layer classifier file");
  }
  if (j.value("version", 0) != kModelVersion) {
    throw VersionMismatchError(fmt::format("classifier file version {} is not supported (expected {})",
                                           j.value("version", 0), kModelVersion));
  }
  try {
    LayerClassifier c;
    c.layer = j.at("layer").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.params = MlpParams::zeros(j.at("input_dim").get<std::size_t>(), j.at("hidden").get<std::size_t>());
    c.scaler.mean = j.at("scaler").at("mean").get<std::vector<double>>();
    c.scaler.scale = j.at("scaler").at("scale").get<std::vector<double>>();
    c.params.w1 = j.at("w1").get<std::vector<double>>();
    c.params.b1 = j.at("b1").get<std::vector<double>>();
    c.params.w2 = j.at("w2").get<std::vector<double>>();
    c.params.b2 = j.at("b2").get<double>();
    c.initial_loss = j.value("initial_loss", 0.0);
    c.final_loss = j.value("final_loss", 0.0);
    if (c.params.w1.size() != c.params.in * c.params.hidden || c.params.b1.size() != c.params.hidden ||
        c.params.w2.size() != c.params.hidden || c.scaler.mean.size() != c.params.in ||
        c.scaler.scale.size() != c.params.in) {
      throw ValidationError("classifier file has inconsistent parameter shapes");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(fmt::format("malformed classifier file: {}", e.what()));
  }
}

void save_classifiers(const std::vector<LayerClassifier>& models, const std::filesystem::path& dir) {
  for (const auto& m : models) {
    io::write_file(dir / fmt::format("layer_{}.json", m.layer), io::to_document(to_json(m)));
  }
}

std::vector<LayerClassifier> load_classifiers(const std::filesystem::path& dir) {
  std::vector<LayerClassifier> out;
  for (int l = 0;; ++l) {
    const auto path = dir / fmt::format("layer_{}.json", l);
    if (!std::filesystem::exists(path)) break;
    out.push_back(classifier_from_json(io::read_json(path)));
  }
  if (out.empty()) throw ValidationError(fmt::format("{}: no layer_0.json classifier found", dir.string()));
  return out;
}

}  // namespace cellguard
