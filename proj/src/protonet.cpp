#include "protoeval/protonet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "protoeval/error.hpp"
#include "protoeval/numeric.hpp"
#include "protoeval/parallel.hpp"

namespace protoeval {

namespace {

struct Candidate {
  std::size_t scene;
  std::size_t row;
  std::size_t col;
};

double patch_part_fraction(const Scene& scene, const PatchGeometry& g, std::size_t row, std::size_t col) {
  std::size_t inside = 0;
  for (std::size_t r = row * g.stride; r < row * g.stride + g.patch; ++r) {
    for (std::size_t c = col * g.stride; c < col * g.stride + g.patch; ++c) {
      for (const auto& [slot, mask] : scene.part_masks) {
        if (mask(r, c)) {
          ++inside;
          break;
        }
      }
    }
  }
  return static_cast<double>(inside) / static_cast<double>(g.patch * g.patch);
}

/// Voronoi-iteration k-medoids with k-means++ seeding. Returns indices into
/// `points`; duplicates are possible only when there are fewer than k
/// distinct points.
std::vector<std::size_t> k_medoids(const std::vector<std::span<const double>>& points, std::size_t k,
                                   int iterations, std::mt19937_64& rng) {
  const std::size_t n = points.size();
  std::vector<double> dist(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      dist[i * n + j] = dist[j * n + i] = squared_distance(points[i], points[j]);
    }
  }

  std::vector<std::size_t> medoids;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  medoids.push_back(static_cast<std::size_t>(unit(rng) * static_cast<double>(n)) % n);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (medoids.size() < k) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], dist[i * n + medoids.back()]);
      total += nearest[i];
    }
    std::size_t pick = 0;
    if (total <= 0) {
      // Fewer distinct points than k: reuse points round-robin.
      pick = medoids.size() % n;
    } else {
      double target = unit(rng) * total, acc = 0;
      for (pick = 0; pick + 1 < n; ++pick) {
        acc += nearest[pick];
        if (acc > target && nearest[pick] > 0) break;
      }
    }
    medoids.push_back(pick);
  }

  std::vector<std::size_t> owner(n);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      for (std::size_t m = 1; m < k; ++m) {
        if (dist[i * n + medoids[m]] < dist[i * n + medoids[best]]) best = m;
      }
      owner[i] = best;
    }
    bool changed = false;
    for (std::size_t m = 0; m < k; ++m) {
      std::size_t best = medoids[m];
      double best_cost = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < n; ++i) {
        if (owner[i] != m) continue;
        double cost = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (owner[j] == m) cost += dist[i * n + j];
        }
        if (cost < best_cost) {
          best_cost = cost;
          best = i;
        }
      }
      if (best_cost == std::numeric_limits<double>::infinity()) continue;  // empty cluster keeps its medoid
      if (best != medoids[m]) {
        medoids[m] = best;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return medoids;
}

std::vector<std::vector<std::size_t>> scenes_by_class(const DatasetBundle& dataset, int num_classes) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < dataset.train.size(); ++i) {
    int c = dataset.train[i].class_id;
    if (c < 0 || c >= num_classes) throw DataError("training scene " + dataset.train[i].id + " has invalid class id");
    by_class[static_cast<std::size_t>(c)].push_back(i);
  }
  for (int c = 0; c < num_classes; ++c) {
    if (by_class[static_cast<std::size_t>(c)].empty()) {
      throw DataError("training: class " + std::to_string(c) + " has no training scenes");
    }
  }
  return by_class;
}

std::vector<FeatureGrid> features_of(const std::vector<Scene>& scenes, const FeatureBank& bank) {
  std::vector<FeatureGrid> out(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t i) { out[i] = extract_features(scenes[i].image, bank); });
  return out;
}

Model project_with_features(const Model& model, const DatasetBundle& dataset, const std::vector<FeatureGrid>& feats) {
  Model out = model;
  auto by_class = scenes_by_class(dataset, model.num_classes);
  parallel_for(out.prototypes.size(), [&](std::size_t p) {
    Prototype& proto = out.prototypes[p];
    double best = std::numeric_limits<double>::infinity();
    const FeatureGrid* best_grid = nullptr;
    ProjectionSource source;
    for (std::size_t s : by_class[static_cast<std::size_t>(proto.owner_class)]) {
      const FeatureGrid& g = feats[s];
      for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t c = 0; c < g.cols; ++c) {
          double d = squared_distance(g.cell(r, c), proto.vector);
          if (d < best) {
            best = d;
            best_grid = &g;
            source = {dataset.train[s].id, r, c};
          }
        }
      }
    }
    if (best_grid) {
      auto cell = best_grid->cell(source.row, source.col);
      proto.vector.assign(cell.begin(), cell.end());
      proto.projection_source = source;
    }
  });
  return out;
}

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

}  // namespace

std::vector<std::size_t> Model::prototypes_of(int class_id) const {
  std::vector<std::size_t> out;
  for (std::size_t p = 0; p < prototypes.size(); ++p) {
    if (prototypes[p].owner_class == class_id) out.push_back(p);
  }
  return out;
}

void Model::validate() const {
  if (num_classes < 1 || prototypes_per_class < 1) throw DataError("model: empty class or prototype count");
  if (class_weights.size() != prototypes.size() * static_cast<std::size_t>(num_classes)) {
    throw DataError("model: weight matrix shape mismatch");
  }
  for (int c = 0; c < num_classes; ++c) {
    if (prototypes_of(c).size() != static_cast<std::size_t>(prototypes_per_class)) {
      throw DataError("model: class " + std::to_string(c) + " does not own exactly K prototypes");
    }
  }
  for (std::size_t p = 0; p < prototypes.size(); ++p) {
    const auto& v = prototypes[p].vector;
    if (v.size() != feature_bank.dimension()) throw DimensionError("model: prototype dimension mismatch");
    if (!std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); })) {
      throw DataError("model: non-finite prototype");
    }
    for (int c = 0; c < num_classes; ++c) {
      if (!std::isfinite(weight(p, c))) throw DataError("model: non-finite weight");
    }
    if (weight(p, prototypes[p].owner_class) < 0) throw DataError("model: negative own-class weight");
  }
}

int Logits::argmax() const {
  return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

FeatureGrid extract_features(const Image& image, const FeatureBank& bank) {
  const PatchGeometry& g = bank.geometry;
  if (g.patch < 3 || g.stride < 1) throw DimensionError("feature bank: patch must be >= 3 and stride >= 1");
  if (image.channels() != 3) throw DimensionError("extract_features: image must have 3 channels");
  if (image.rows() < g.patch || image.cols() < g.patch) {
    throw DimensionError("extract_features: image smaller than one patch");
  }
  FeatureGrid grid;
  grid.rows = g.cells(image.rows());
  grid.cols = g.cells(image.cols());
  grid.dim = bank.dimension();
  grid.geometry = g;
  grid.values.assign(grid.rows * grid.cols * grid.dim, 0.0);

  const std::size_t P = g.patch;
  const double count = static_cast<double>(P * P);
  const double interior = static_cast<double>((P - 2) * (P - 2));
  std::vector<double> luma(P * P);
  for (std::size_t gr = 0; gr < grid.rows; ++gr) {
    for (std::size_t gc = 0; gc < grid.cols; ++gc) {
      auto out = grid.cell(gr, gc);
      const std::size_t r0 = gr * g.stride, c0 = gc * g.stride;
      std::array<double, 3> sum{}, sum_sq{};
      for (std::size_t r = 0; r < P; ++r) {
        for (std::size_t c = 0; c < P; ++c) {
          for (std::size_t ch = 0; ch < 3; ++ch) {
            double v = image(r0 + r, c0 + c, ch);
            sum[ch] += v;
            sum_sq[ch] += v * v;
          }
          luma[r * P + c] = 0.299 * image(r0 + r, c0 + c, 0) + 0.587 * image(r0 + r, c0 + c, 1) +
                            0.114 * image(r0 + r, c0 + c, 2);
        }
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double mean = sum[ch] / count;
        out[ch] = bank.color_scale * mean;
        out[3 + bank.orientation_bins + ch] = bank.variance_scale * std::max(0.0, sum_sq[ch] / count - mean * mean);
      }
      // Central differences on interior pixels; the patch is self-contained.
      for (std::size_t r = 1; r + 1 < P; ++r) {
        for (std::size_t c = 1; c + 1 < P; ++c) {
          double gx = 0.5 * (luma[r * P + c + 1] - luma[r * P + c - 1]);
          double gy = 0.5 * (luma[(r + 1) * P + c] - luma[(r - 1) * P + c]);
          double mag = std::hypot(gx, gy);
          if (mag == 0) continue;
          double angle = std::atan2(gy, gx);
          // Orientation is modulo pi; atan2 can return exactly +-pi.
          if (angle < 0) angle += std::numbers::pi;
          if (angle >= std::numbers::pi) angle -= std::numbers::pi;
          auto bin = static_cast<std::size_t>(angle / std::numbers::pi * static_cast<double>(bank.orientation_bins));
          bin = std::min(bin, bank.orientation_bins - 1);
          out[3 + bin] += bank.gradient_scale * mag / interior;
        }
      }
    }
  }
  return grid;
}

double similarity(double squared_distance, double epsilon) {
  return std::log((squared_distance + 1.0) / (squared_distance + epsilon));
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("feature dimension mismatch");
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

SimilarityMap similarity_map(const FeatureGrid& features, const Prototype& prototype, double epsilon) {
  if (prototype.vector.size() != features.dim) {
    throw DimensionError("similarity_map: prototype has dimension " + std::to_string(prototype.vector.size()) +
                         ", features have " + std::to_string(features.dim));
  }
  SimilarityMap map;
  map.geometry = features.geometry;
  map.values = Field(features.rows, features.cols);
  for (std::size_t r = 0; r < features.rows; ++r) {
    for (std::size_t c = 0; c < features.cols; ++c) {
      map.values(r, c) = similarity(squared_distance(features.cell(r, c), prototype.vector), epsilon);
    }
  }
  return map;
}

Logits forward_features(const FeatureGrid& features, const Model& model) {
  Logits logits;
  logits.scores.assign(static_cast<std::size_t>(model.num_classes), 0.0);
  logits.similarity_maps.reserve(model.prototypes.size());
  std::vector<double> pooled(model.prototypes.size());
  for (std::size_t p = 0; p < model.prototypes.size(); ++p) {
    SimilarityMap map = similarity_map(features, model.prototypes[p], model.epsilon);
    map.prototype = p;
    pooled[p] = *std::max_element(map.values.values().begin(), map.values.values().end());
    logits.similarity_maps.push_back(std::move(map));
  }
  for (int c = 0; c < model.num_classes; ++c) {
    double s = 0;
    for (std::size_t p = 0; p < pooled.size(); ++p) s += model.weight(p, c) * pooled[p];
    logits.scores[static_cast<std::size_t>(c)] = s;
  }
  return logits;
}

Logits forward(const Image& image, const Model& model) {
  return forward_features(extract_features(image, model.feature_bank), model);
}

Model project_prototypes(const Model& model, const DatasetBundle& dataset) {
  return project_with_features(model, dataset, features_of(dataset.train, model.feature_bank));
}

Model train(const DatasetBundle& dataset, const TrainConfig& config, const FeatureBank& bank) {
  if (config.prototypes_per_class < 1) throw ConfigError("prototypes_per_class must be >= 1");
  const int C = static_cast<int>(dataset.classes.size());
  const auto K = static_cast<std::size_t>(config.prototypes_per_class);
  auto by_class = scenes_by_class(dataset, C);
  auto feats = features_of(dataset.train, bank);

  Model model;
  model.feature_bank = bank;
  model.num_classes = C;
  model.prototypes_per_class = config.prototypes_per_class;
  model.epsilon = config.epsilon;
  model.train_config = config;
  model.prototypes.resize(static_cast<std::size_t>(C) * K);

  // Prototype initialisation: k-medoids over part patches of each class.
  parallel_for(static_cast<std::size_t>(C), [&](std::size_t c) {
    std::vector<Candidate> strong, weak, all;
    for (std::size_t s : by_class[c]) {
      const FeatureGrid& g = feats[s];
      for (std::size_t r = 0; r < g.rows; ++r) {
        for (std::size_t col = 0; col < g.cols; ++col) {
          double f = patch_part_fraction(dataset.train[s], g.geometry, r, col);
          if (f >= config.part_fraction) {
            strong.push_back({s, r, col});
          } else if (f > 0) {
            weak.push_back({s, r, col});
          }
          all.push_back({s, r, col});
        }
      }
    }
    std::vector<Candidate> pool = strong;
    if (pool.size() < K) pool.insert(pool.end(), weak.begin(), weak.end());
    if (pool.size() < K) pool = all;

    std::mt19937_64 rng(hash_combine({config.seed, c, 0x4D3D01ULL}));
    if (pool.size() > config.max_candidates_per_class) {
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(config.max_candidates_per_class);
    }
    std::vector<std::span<const double>> points;
    for (const auto& cand : pool) points.push_back(feats[cand.scene].cell(cand.row, cand.col));
    auto medoids = k_medoids(points, K, config.kmedoids_iterations, rng);
    for (std::size_t k = 0; k < K; ++k) {
      Prototype& proto = model.prototypes[c * K + k];
      proto.vector.assign(points[medoids[k]].begin(), points[medoids[k]].end());
      proto.owner_class = static_cast<int>(c);
      proto.index_within_class = static_cast<int>(k);
    }
  });

  model = project_with_features(model, dataset, feats);

  // Class weights: one-vs-rest logistic regression on max-pooled similarity,
  // projected each step onto own-class >= 0, cross-class <= 0.
  const std::size_t N = dataset.train.size(), P = model.prototypes.size();
  std::vector<double> pooled(N * P);
  parallel_for(N, [&](std::size_t n) {
    for (std::size_t p = 0; p < P; ++p) {
      SimilarityMap map = similarity_map(feats[n], model.prototypes[p], model.epsilon);
      auto vals = map.values.values();
      pooled[n * P + p] = *std::max_element(vals.begin(), vals.end());
    }
  });

  model.class_weights.assign(P * static_cast<std::size_t>(C), 0.0);
  parallel_for(static_cast<std::size_t>(C), [&](std::size_t c) {
    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    std::vector<double> w(P), m(P, 0.0), v(P, 0.0), grad(P);
    for (std::size_t p = 0; p < P; ++p) w[p] = model.prototypes[p].owner_class == static_cast<int>(c) ? 0.5 : -0.1;
    for (int it = 1; it <= config.logistic_iterations; ++it) {
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t n = 0; n < N; ++n) {
        const double* x = &pooled[n * P];
        double z = 0;
        for (std::size_t p = 0; p < P; ++p) z += w[p] * x[p];
        double y = dataset.train[n].class_id == static_cast<int>(c) ? 1.0 : 0.0;
        double err = sigmoid(z) - y;
        for (std::size_t p = 0; p < P; ++p) grad[p] += err * x[p];
      }
      const double b1t = 1 - std::pow(beta1, it), b2t = 1 - std::pow(beta2, it);
      for (std::size_t p = 0; p < P; ++p) {
        double g = grad[p] / static_cast<double>(N) + config.l2 * w[p];
        m[p] = beta1 * m[p] + (1 - beta1) * g;
        v[p] = beta2 * v[p] + (1 - beta2) * g * g;
        w[p] -= config.learning_rate * (m[p] / b1t) / (std::sqrt(v[p] / b2t) + adam_eps);
        bool own = model.prototypes[p].owner_class == static_cast<int>(c);
        w[p] = own ? std::max(0.0, w[p]) : std::min(0.0, w[p]);
      }
    }
    for (std::size_t p = 0; p < P; ++p) model.class_weights[p * static_cast<std::size_t>(C) + c] = w[p];
  });
  return model;
}

// ---------------------------------------------------------------------------
// Serialisation. nlohmann emits shortest round-trip decimal for doubles, so
// a dump/parse cycle is bit-exact.

nlohmann::json to_json(const TrainConfig& c) {
  return {{"prototypes_per_class", c.prototypes_per_class},
          {"seed", c.seed},
          {"part_fraction", c.part_fraction},
          {"kmedoids_iterations", c.kmedoids_iterations},
          {"max_candidates_per_class", c.max_candidates_per_class},
          {"logistic_iterations", c.logistic_iterations},
          {"learning_rate", c.learning_rate},
          {"l2", c.l2},
          {"epsilon", c.epsilon}};
}

TrainConfig train_config_from_json(const nlohmann::json& doc) {
  TrainConfig c;
  c.prototypes_per_class = doc.value("prototypes_per_class", c.prototypes_per_class);
  c.seed = doc.value("seed", c.seed);
  c.part_fraction = doc.value("part_fraction", c.part_fraction);
  c.kmedoids_iterations = doc.value("kmedoids_iterations", c.kmedoids_iterations);
  c.max_candidates_per_class = doc.value("max_candidates_per_class", c.max_candidates_per_class);
  c.logistic_iterations = doc.value("logistic_iterations", c.logistic_iterations);
  c.learning_rate = doc.value("learning_rate", c.learning_rate);
  c.l2 = doc.value("l2", c.l2);
  c.epsilon = doc.value("epsilon", c.epsilon);
  return c;
}

nlohmann::json model_to_json(const Model& model) {
  nlohmann::json protos = nlohmann::json::array();
  for (const auto& p : model.prototypes) {
    nlohmann::json jp{{"vector", p.vector}, {"owner_class", p.owner_class}, {"index_within_class", p.index_within_class}};
    if (p.projection_source) {
      jp["projection_source"] = {{"scene_id", p.projection_source->scene_id},
                                 {"row", p.projection_source->row},
                                 {"col", p.projection_source->col}};
    }
    protos.push_back(std::move(jp));
  }
  const auto& fb = model.feature_bank;
  return {{"format", "protoeval-model"},
          {"feature_bank",
           {{"version", fb.version},
            {"patch", fb.geometry.patch},
            {"stride", fb.geometry.stride},
            {"orientation_bins", fb.orientation_bins},
            {"color_scale", fb.color_scale},
            {"gradient_scale", fb.gradient_scale},
            {"variance_scale", fb.variance_scale}}},
          {"num_classes", model.num_classes},
          {"prototypes_per_class", model.prototypes_per_class},
          {"epsilon", model.epsilon},
          {"prototypes", std::move(protos)},
          {"class_weights", model.class_weights},
          {"config", to_json(model.train_config)}};
}

Model model_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("format") != "protoeval-model") throw DataError("model: unexpected format tag");
    Model model;
    const auto& fb = doc.at("feature_bank");
    model.feature_bank.version = fb.at("version").get<std::string>();
    model.feature_bank.geometry = {fb.at("patch").get<std::size_t>(), fb.at("stride").get<std::size_t>()};
    model.feature_bank.orientation_bins = fb.at("orientation_bins").get<std::size_t>();
    model.feature_bank.color_scale = fb.at("color_scale").get<double>();
    model.feature_bank.gradient_scale = fb.at("gradient_scale").get<double>();
    model.feature_bank.variance_scale = fb.at("variance_scale").get<double>();
    model.num_classes = doc.at("num_classes").get<int>();
    model.prototypes_per_class = doc.at("prototypes_per_class").get<int>();
    model.epsilon = doc.at("epsilon").get<double>();
    for (const auto& jp : doc.at("prototypes")) {
      Prototype p;
      p.vector = jp.at("vector").get<std::vector<double>>();
      p.owner_class = jp.at("owner_class").get<int>();
      p.index_within_class = jp.at("index_within_class").get<int>();
      if (jp.contains("projection_source")) {
        const auto& src = jp["projection_source"];
        p.projection_source = ProjectionSource{src.at("scene_id").get<std::string>(), src.at("row").get<std::size_t>(),
                                               src.at("col").get<std::size_t>()};
      }
      model.prototypes.push_back(std::move(p));
    }
    model.class_weights = doc.at("class_weights").get<std::vector<double>>();
    model.train_config = train_config_from_json(doc.at("config"));
    model.validate();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model: malformed JSON: ") + e.what());
  }
}

}  // namespace protoeval
