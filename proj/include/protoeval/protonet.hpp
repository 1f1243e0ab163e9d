#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "protoeval/grid.hpp"
#include "protoeval/scenegen.hpp"

namespace protoeval {

/// Maps grid cells to image regions: cell (i, j) covers rows
/// [i*stride, i*stride + patch) and the analogous columns.
struct PatchGeometry {
  std::size_t patch = 8;
  std::size_t stride = 4;

  std::size_t cells(std::size_t pixels) const { return pixels < patch ? 0 : (pixels - patch) / stride + 1; }
  double center(std::size_t cell) const {
    return static_cast<double>(cell * stride) + (static_cast<double>(patch) - 1.0) / 2.0;
  }

  friend bool operator==(const PatchGeometry&, const PatchGeometry&) = default;
};

/// Deterministic hand-crafted patch descriptor: per-channel mean, a
/// magnitude-weighted gradient orientation histogram of luminance, and
/// per-channel variance, each block multiplied by its scale.
struct FeatureBank {
  std::string version = "patchbank-v1";
  PatchGeometry geometry;
  std::size_t orientation_bins = 8;
  double color_scale = 4.0;
  double gradient_scale = 20.0;
  double variance_scale = 8.0;

  std::size_t dimension() const { return 3 + orientation_bins + 3; }

  friend bool operator==(const FeatureBank&, const FeatureBank&) = default;
};

struct FeatureGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t dim = 0;
  PatchGeometry geometry;
  std::vector<double> values;  // rows x cols x dim

  std::span<const double> cell(std::size_t r, std::size_t c) const { return {values.data() + (r * cols + c) * dim, dim}; }
  std::span<double> cell(std::size_t r, std::size_t c) { return {values.data() + (r * cols + c) * dim, dim}; }
};

struct ProjectionSource {
  std::string scene_id;
  std::size_t row = 0;
  std::size_t col = 0;

  friend bool operator==(const ProjectionSource&, const ProjectionSource&) = default;
};

struct Prototype {
  std::vector<double> vector;
  int owner_class = 0;
  int index_within_class = 0;
  std::optional<ProjectionSource> projection_source;

  friend bool operator==(const Prototype&, const Prototype&) = default;
};

struct TrainConfig {
  int prototypes_per_class = 10;
  std::uint64_t seed = 1;
  /// Minimum fraction of a patch inside part masks for it to seed prototypes.
  double part_fraction = 0.5;
  int kmedoids_iterations = 50;
  std::size_t max_candidates_per_class = 1200;
  int logistic_iterations = 600;
  double learning_rate = 0.05;
  double l2 = 1e-3;
  double epsilon = 1e-4;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct Model {
  FeatureBank feature_bank;
  int num_classes = 0;
  int prototypes_per_class = 0;
  double epsilon = 1e-4;
  std::vector<Prototype> prototypes;
  /// prototypes.size() x num_classes, row-major.
  std::vector<double> class_weights;
  TrainConfig train_config;

  double weight(std::size_t prototype, int class_id) const {
    return class_weights[prototype * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(class_id)];
  }
  double& weight(std::size_t prototype, int class_id) {
    return class_weights[prototype * static_cast<std::size_t>(num_classes) + static_cast<std::size_t>(class_id)];
  }
  std::vector<std::size_t> prototypes_of(int class_id) const;
  /// Throws DataError on broken invariants.
  void validate() const;

  friend bool operator==(const Model&, const Model&) = default;
};

struct SimilarityMap {
  Field values;  // grid resolution
  std::size_t prototype = 0;
  PatchGeometry geometry;
};

struct Logits {
  std::vector<double> scores;
  std::vector<SimilarityMap> similarity_maps;  // one per prototype, model order

  int argmax() const;
};

FeatureGrid extract_features(const Image& image, const FeatureBank& bank);

double similarity(double squared_distance, double epsilon);
double squared_distance(std::span<const double> a, std::span<const double> b);

SimilarityMap similarity_map(const FeatureGrid& features, const Prototype& prototype, double epsilon = 1e-4);

Logits forward(const Image& image, const Model& model);
Logits forward_features(const FeatureGrid& features, const Model& model);

Model train(const DatasetBundle& dataset, const TrainConfig& config, const FeatureBank& bank = {});

Model project_prototypes(const Model& model, const DatasetBundle& dataset);

nlohmann::json model_to_json(const Model& model);
Model model_from_json(const nlohmann::json& doc);

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& doc);

}  // namespace protoeval
