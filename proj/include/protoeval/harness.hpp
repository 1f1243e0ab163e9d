#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "protoeval/attribution.hpp"
#include "protoeval/metrics.hpp"
#include "protoeval/protonet.hpp"
#include "protoeval/scenegen.hpp"

namespace protoeval {

// ---------------------------------------------------------------------------
// Configuration

struct RunConfig {
  GenerationConfig dataset;
  TrainConfig train;
  std::vector<Method> methods{Method::kBoundingBox, Method::kSummedSimilarity};
  MetricConfig metrics;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::filesystem::path output_dir;  // empty: keep everything in memory
  double box_percentile = 0.95;

  /// Throws ConfigError when a knob is outside its documented range.
  void validate() const;
};

nlohmann::json to_json(const GenerationConfig& config);
GenerationConfig generation_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const MetricConfig& config);
MetricConfig metric_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& config);
RunConfig run_config_from_json(const nlohmann::json& doc);

/// Shortest decimal that round-trips, e.g. "0.25"; used for threshold keys.
std::string format_number(double value);

std::vector<double> parse_thresholds(const std::string& csv);

// ---------------------------------------------------------------------------
// Files

nlohmann::json read_json(const std::filesystem::path& path);
/// Pretty-printed with sorted keys and a trailing newline.
void write_json(const std::filesystem::path& path, const nlohmann::json& doc);

/// scenes/<id>.img, scenes/<id>.mask.<slot>, scenes/<id>.json, vocab.json,
/// classes.json, config.json.
void save_dataset(const DatasetBundle& bundle, const std::filesystem::path& dir);
DatasetBundle load_dataset(const std::filesystem::path& dir);
Scene load_scene(const std::filesystem::path& dataset_dir, const std::string& scene_id);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

nlohmann::json attribution_sidecar(const AttributionGrid& grid);

// ---------------------------------------------------------------------------
// Reports

nlohmann::json report_to_json(const MetricReport& report, const nlohmann::json& context = nlohmann::json::object());
MetricReport report_from_json(const nlohmann::json& doc);
/// Structural schema check; returns one message per violation.
std::vector<std::string> validate_report_json(const nlohmann::json& doc);

/// Runs the full metric suite of one method over the test split.
MetricReport evaluate(const Model& model, const DatasetBundle& dataset, Method method, const MetricConfig& config,
                      double box_percentile = 0.95);

/// Context block echoed into report JSON: dataset and training settings.
nlohmann::json run_context(const DatasetBundle& dataset, const Model& model, double box_percentile);

struct ComparisonRow {
  std::string metric;
  double a = 0;
  double b = 0;
  double delta = 0;    // b - a
  std::string winner;  // method name, or "tie"
};

struct ComparisonTable {
  std::string method_a;
  std::string method_b;
  std::vector<ComparisonRow> rows;
  /// "holds", "violated" or "inconclusive" for the expected BB -> SSM
  /// pattern: SD, D, TS up and CSDC, PC, DC down.
  std::string verdict;
};

/// Throws ConfigError when the reports' configs (other than the method) differ.
ComparisonTable compare(const nlohmann::json& report_a, const nlohmann::json& report_b);
std::string comparison_csv(const ComparisonTable& table);

// ---------------------------------------------------------------------------
// End to end

struct SeedRun {
  std::uint64_t seed = 0;
  DatasetBundle dataset;
  Model model;
  std::vector<nlohmann::json> reports;  // parallel to RunConfig::methods
  std::optional<ComparisonTable> comparison;
};

/// generate -> train -> evaluate each method -> compare, once per seed.
std::vector<SeedRun> run_pipeline(const RunConfig& config);

// ---------------------------------------------------------------------------
// Overlays

struct OverlayOptions {
  double alpha = 0.6;
  bool outlines = true;
};

/// RGB8 overlay: heat colours alpha-blended by normalised attribution, part
/// outlines in white.
Grid<std::uint8_t> overlay_pixels(const Scene& scene, const Field& attribution, const OverlayOptions& options = {});
std::vector<std::uint8_t> encode_png(const Grid<std::uint8_t>& rgb);
void render_overlay(const Scene& scene, const AttributionGrid& attribution, const std::filesystem::path& out_path,
                    const OverlayOptions& options = {});

}  // namespace protoeval
