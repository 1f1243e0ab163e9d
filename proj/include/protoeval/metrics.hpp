#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protoeval/attribution.hpp"
#include "protoeval/interface.hpp"
#include "protoeval/protonet.hpp"
#include "protoeval/scenegen.hpp"

namespace protoeval {

// ---------------------------------------------------------------------------
// Rank correlation

struct RankableScores {
  std::vector<std::string> labels;
  std::vector<double> values;
};

struct SpearmanResult {
  double rho = 0;
  bool degenerate = false;  // one side had zero variance; rho reported as 0
};

/// 1-based ranks; tied values share the average of their positions.
std::vector<double> average_ranks(std::span<const double> values);

/// Pearson correlation of average ranks. Throws DataError on length
/// mismatch or fewer than two entries.
SpearmanResult spearman(std::span<const double> a, std::span<const double> b);

/// Aligns b to a's label order first; label universes must match.
SpearmanResult spearman(const RankableScores& a, const RankableScores& b);

// ---------------------------------------------------------------------------
// What the metrics probe

/// A classifier together with one explanation method.
class EvaluationSubject {
 public:
  virtual ~EvaluationSubject() = default;
  virtual std::vector<double> logits(const Scene& scene) const = 0;
  virtual Explanation explain(const Scene& scene, int class_id) const = 0;
  virtual Method method() const = 0;

  int predict(const Scene& scene) const;
};

class ProtoPNetSubject : public EvaluationSubject {
 public:
  ProtoPNetSubject(const Model& model, Method method, double box_percentile = 0.95)
      : model_(model), method_(method), percentile_(box_percentile) {}

  std::vector<double> logits(const Scene& scene) const override;
  Explanation explain(const Scene& scene, int class_id) const override;
  Method method() const override { return method_; }

 private:
  const Model& model_;
  Method method_;
  double percentile_;
};

/// Per-item scoring rules for the completeness, distractibility, background
/// and contrastivity checks. Override to swap in alternative definitions.
class MetricDefinitions {
 public:
  virtual ~MetricDefinitions() = default;

  /// Best overlap |P ∩ G| / |G| over the ground-truth identifying sets.
  virtual double csdc(const SlotSet& important, const std::vector<SlotSet>& gt_sets) const;
  /// 1 if keeping only P preserves the prediction.
  virtual double preservation(int original_prediction, int prediction_keeping_p) const;
  /// 1 if deleting P flips the prediction; an empty P scores 0.
  virtual double deletion(bool p_empty, int original_prediction, int prediction_without_p) const;
  /// True if removing a non-important part leaves the logit within delta (relative).
  virtual bool distractor_unaffected(double logit, double logit_without_part, double delta) const;
  /// Per-chimera score from the mass shares each explanation puts on each
  /// class's parts.
  virtual double target_sensitivity(double share_a_in_a, double share_a_in_b, double share_b_in_b,
                                    double share_b_in_a) const;
};

const MetricDefinitions& default_definitions();

struct MetricConfig {
  std::vector<double> thresholds{0.01, 0.1, 0.25, 0.5};
  double distractor_tolerance = 0.05;
  int bi_randomizations = 10;
  std::uint64_t seed = 1;
};

// ---------------------------------------------------------------------------
// Individual metrics

struct AccuracyResult {
  double value = 0;
  std::vector<int> predictions;
};
AccuracyResult accuracy(const EvaluationSubject& subject, const std::vector<Scene>& scenes);

struct BackgroundResult {
  double value = 1;
  std::vector<int> unchanged;  // per scene, out of `trials`
  int trials = 0;
};
BackgroundResult background_independence(const EvaluationSubject& subject, const std::vector<Scene>& scenes,
                                         int randomizations, std::uint64_t seed);

struct SingleDeletionScene {
  bool included = false;
  PartImportance importance;
  std::map<std::string, double> logit_drops;
  SpearmanResult rho;
  double contribution = 0;
};
struct SingleDeletionResult {
  double value = 0.5;
  int excluded = 0;
  std::vector<SingleDeletionScene> scenes;
};

/// Contribution of one image: 1/2 + rho/2 between importance and logit drops.
double single_deletion_contribution(const std::map<std::string, double>& importance,
                                    const std::map<std::string, double>& logit_drops, bool* degenerate = nullptr);

SingleDeletionResult single_deletion(const EvaluationSubject& subject, const std::vector<Scene>& scenes);

struct CompletenessCell {
  PartSet important;
  double csdc = 0, pc = 0, dc = 0;
};
struct CompletenessResult {
  std::vector<double> thresholds;
  std::vector<std::vector<CompletenessCell>> scenes;  // [scene][threshold]
  std::vector<double> csdc, pc, dc;                   // per threshold
  double best_csdc = 0, best_pc = 0, best_dc = 0;
};
CompletenessResult completeness_checks(const EvaluationSubject& subject, const std::vector<Scene>& scenes,
                                       const std::vector<ClassSpec>& classes, const std::vector<double>& thresholds,
                                       const MetricDefinitions& defs = default_definitions());

struct DistractibilityCell {
  int hits = 0;
  int pairs = 0;
};
struct DistractibilityResult {
  std::vector<double> thresholds;
  std::vector<std::vector<DistractibilityCell>> scenes;  // [scene][threshold]
  std::vector<double> per_threshold;
  std::vector<int> saturated_scenes;  // per threshold: scenes whose P covered every part
  double best = 0;
};
DistractibilityResult distractibility(const EvaluationSubject& subject, const std::vector<Scene>& scenes,
                                      const std::vector<double>& thresholds, double tolerance,
                                      const MetricDefinitions& defs = default_definitions());

/// A scene mixing parts of two classes, built by swap_part.
struct Chimera {
  Scene scene;
  std::string source_id;
  int class_a = 0;
  int class_b = 0;
  SlotSet a_sourced;  // kept from A, variant differs from B's
  SlotSet b_sourced;  // swapped in from B, variant differs from A's
};

/// One chimera per scene: a partner class is chosen deterministically and
/// half of the shared present slots are swapped to its variants.
std::vector<Chimera> make_chimeras(const std::vector<Scene>& scenes, const std::vector<ClassSpec>& classes,
                                   const PartVocabulary& vocabulary, std::uint64_t seed);

struct TargetSensitivityResult {
  double value = 0;
  int excluded = 0;
  std::vector<std::optional<double>> pairs;
};
TargetSensitivityResult target_sensitivity(const EvaluationSubject& subject, const std::vector<Chimera>& chimeras,
                                           const MetricDefinitions& defs = default_definitions());

// ---------------------------------------------------------------------------
// Full report

struct ThresholdDiagnostics {
  SlotSet important;
  double csdc = 0, pc = 0, dc = 0;
  int d_hits = 0, d_pairs = 0;
};

struct SceneDiagnostics {
  std::string scene_id;
  int class_id = 0;
  int prediction = 0;
  int bi_unchanged = 0;
  PartImportance importance;
  std::map<std::string, double> logit_drops;
  bool sd_included = false;
  bool sd_degenerate = false;
  double sd_contribution = 0;
  std::vector<ThresholdDiagnostics> per_threshold;  // parallel to report thresholds
  std::optional<double> ts_contribution;
};

struct ThresholdMetrics {
  double csdc = 0, pc = 0, dc = 0, d = 0;
  int d_pairs = 0;
};

/// Metric names in table order.
const std::vector<std::string>& metric_names();

struct MetricReport {
  Method method = Method::kSummedSimilarity;
  MetricConfig config;
  std::map<std::string, double> metrics;
  std::vector<ThresholdMetrics> per_threshold;  // parallel to config.thresholds
  std::vector<SceneDiagnostics> diagnostics;
  int bi_trials = 0;
  int sd_excluded = 0;
  int ts_excluded = 0;
};

MetricReport evaluate_metrics(const EvaluationSubject& subject, const std::vector<Scene>& scenes,
                              const std::vector<ClassSpec>& classes, const PartVocabulary& vocabulary,
                              const MetricConfig& config, const MetricDefinitions& defs = default_definitions());

/// Recomputes every aggregate from the diagnostics block alone.
std::map<std::string, double> recompute_from_diagnostics(const MetricReport& report);

}  // namespace protoeval
