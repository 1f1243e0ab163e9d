#include "protoeval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "protoeval/error.hpp"
#include "protoeval/numeric.hpp"
#include "protoeval/parallel.hpp"

namespace protoeval {

namespace {

double mean_of(const std::vector<double>& xs, double if_empty) {
  if (xs.empty()) return if_empty;
  return compensated_sum(xs) / static_cast<double>(xs.size());
}

int argmax_of(const std::vector<double>& scores) {
  return static_cast<int>(std::max_element(scores.begin(), scores.end()) - scores.begin());
}

Scene remove_parts(Scene scene, const std::vector<std::string>& slots) {
  for (const auto& slot : slots) scene = remove_part(scene, slot);
  return scene;
}

double best_of(const std::vector<double>& per_t) {
  return per_t.empty() ? 0.0 : *std::max_element(per_t.begin(), per_t.end());
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<double> average_ranks(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
    double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

SpearmanResult spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DataError("spearman: length mismatch");
  if (a.size() < 2) throw DataError("spearman: need at least two entries");
  auto ra = average_ranks(a);
  auto rb = average_ranks(b);
  const double n = static_cast<double>(ra.size());
  double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0 || sbb == 0) return {0.0, true};
  return {std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0), false};
}

SpearmanResult spearman(const RankableScores& a, const RankableScores& b) {
  if (a.labels.size() != a.values.size() || b.labels.size() != b.values.size()) {
    throw DataError("spearman: labels and values differ in length");
  }
  if (a.labels.size() != b.labels.size()) throw DataError("spearman: length mismatch");
  std::vector<double> aligned;
  for (const auto& label : a.labels) {
    auto it = std::find(b.labels.begin(), b.labels.end(), label);
    if (it == b.labels.end()) throw DataError("spearman: label '" + label + "' missing from second argument");
    aligned.push_back(b.values[static_cast<std::size_t>(it - b.labels.begin())]);
  }
  return spearman(a.values, aligned);
}

// ---------------------------------------------------------------------------

int EvaluationSubject::predict(const Scene& scene) const { return argmax_of(logits(scene)); }

std::vector<double> ProtoPNetSubject::logits(const Scene& scene) const { return forward(scene.image, model_).scores; }

Explanation ProtoPNetSubject::explain(const Scene& scene, int class_id) const {
  Logits lg = forward(scene.image, model_);
  return protoeval::explain(lg, model_, method_, class_id, scene.height(), scene.width(), percentile_);
}

double MetricDefinitions::csdc(const SlotSet& important, const std::vector<SlotSet>& gt_sets) const {
  double best = 0;
  for (const auto& g : gt_sets) {
    if (g.empty()) return 1.0;
    std::size_t hit = std::count_if(g.begin(), g.end(), [&](const std::string& s) { return important.count(s) > 0; });
    best = std::max(best, static_cast<double>(hit) / static_cast<double>(g.size()));
  }
  return best;
}

double MetricDefinitions::preservation(int original_prediction, int prediction_keeping_p) const {
  return original_prediction == prediction_keeping_p ? 1.0 : 0.0;
}

double MetricDefinitions::deletion(bool p_empty, int original_prediction, int prediction_without_p) const {
  if (p_empty) return 0.0;
  return original_prediction != prediction_without_p ? 1.0 : 0.0;
}

bool MetricDefinitions::distractor_unaffected(double logit, double logit_without_part, double delta) const {
  return std::abs(logit_without_part - logit) <= delta * std::abs(logit);
}

double MetricDefinitions::target_sensitivity(double share_a_in_a, double share_a_in_b, double share_b_in_b,
                                             double share_b_in_a) const {
  return 0.5 * (share_a_in_a > share_a_in_b ? 1.0 : 0.0) + 0.5 * (share_b_in_b > share_b_in_a ? 1.0 : 0.0);
}

const MetricDefinitions& default_definitions() {
  static const MetricDefinitions defs;
  return defs;
}

// ---------------------------------------------------------------------------

AccuracyResult accuracy(const EvaluationSubject& subject, const std::vector<Scene>& scenes) {
  AccuracyResult out;
  out.predictions.resize(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t i) { out.predictions[i] = subject.predict(scenes[i]); });
  std::vector<double> hits;
  for (std::size_t i = 0; i < scenes.size(); ++i) hits.push_back(out.predictions[i] == scenes[i].class_id ? 1.0 : 0.0);
  out.value = mean_of(hits, 0.0);
  return out;
}

BackgroundResult background_independence(const EvaluationSubject& subject, const std::vector<Scene>& scenes,
                                         int randomizations, std::uint64_t seed) {
  if (randomizations < 1) throw ConfigError("background_independence needs at least one randomization");
  BackgroundResult out;
  out.trials = randomizations;
  out.unchanged.assign(scenes.size(), 0);
  parallel_for(scenes.size(), [&](std::size_t i) {
    int base = subject.predict(scenes[i]);
    for (int j = 0; j < randomizations; ++j) {
      std::uint64_t bg = hash_combine({seed, scenes[i].scene_seed, static_cast<std::uint64_t>(j), 0xB1ULL});
      if (subject.predict(randomize_background(scenes[i], bg)) == base) ++out.unchanged[i];
    }
  });
  if (!scenes.empty()) {
    long total = std::accumulate(out.unchanged.begin(), out.unchanged.end(), 0L);
    out.value = static_cast<double>(total) / (static_cast<double>(scenes.size()) * randomizations);
  }
  return out;
}

double single_deletion_contribution(const std::map<std::string, double>& importance,
                                    const std::map<std::string, double>& logit_drops, bool* degenerate) {
  RankableScores a, b;
  for (const auto& [slot, v] : importance) {
    a.labels.push_back(slot);
    a.values.push_back(v);
  }
  for (const auto& [slot, v] : logit_drops) {
    b.labels.push_back(slot);
    b.values.push_back(v);
  }
  SpearmanResult r = spearman(a, b);
  if (degenerate) *degenerate = r.degenerate;
  return 0.5 + 0.5 * r.rho;
}

SingleDeletionResult single_deletion(const EvaluationSubject& subject, const std::vector<Scene>& scenes) {
  SingleDeletionResult out;
  out.scenes.resize(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t i) {
    const Scene& scene = scenes[i];
    SingleDeletionScene& sd = out.scenes[i];
    if (scene.part_masks.size() < 2) return;
    sd.included = true;
    Explanation e = subject.explain(scene, scene.class_id);
    sd.importance = part_importance(e.grid, scene.part_masks);
    auto y = static_cast<std::size_t>(scene.class_id);
    double base = subject.logits(scene)[y];
    for (const auto& slot : scene.present_slots()) {
      sd.logit_drops[slot] = base - subject.logits(remove_part(scene, slot))[y];
    }
    bool degenerate = false;
    sd.contribution = single_deletion_contribution(sd.importance.scores, sd.logit_drops, &degenerate);
    sd.rho = {2 * sd.contribution - 1, degenerate};
  });
  std::vector<double> contributions;
  for (const auto& sd : out.scenes) {
    if (sd.included) {
      contributions.push_back(sd.contribution);
    } else {
      ++out.excluded;
    }
  }
  out.value = mean_of(contributions, 0.5);
  return out;
}

CompletenessResult completeness_checks(const EvaluationSubject& subject, const std::vector<Scene>& scenes,
                                       const std::vector<ClassSpec>& classes, const std::vector<double>& thresholds,
                                       const MetricDefinitions& defs) {
  for (double t : thresholds) {
    if (!(t >= 0 && t <= 1)) throw ConfigError("thresholds must lie in [0,1]");
  }
  std::map<int, std::vector<SlotSet>> gt;
  for (const auto& c : classes) gt[c.class_id] = gt_identifying_sets(c, classes);

  CompletenessResult out;
  out.thresholds = thresholds;
  out.scenes.assign(scenes.size(), std::vector<CompletenessCell>(thresholds.size()));
  parallel_for(scenes.size(), [&](std::size_t i) {
    const Scene& scene = scenes[i];
    int original = subject.predict(scene);
    Explanation e = subject.explain(scene, scene.class_id);
    auto gt_it = gt.find(scene.class_id);
    if (gt_it == gt.end()) throw DataError("completeness: scene class has no ClassSpec");
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      CompletenessCell& cell = out.scenes[i][k];
      cell.important = important_parts(e, scene.part_masks, thresholds[k]);
      std::vector<std::string> keep_out, in_p;
      for (const auto& slot : scene.present_slots()) {
        (cell.important.members.count(slot) ? in_p : keep_out).push_back(slot);
      }
      cell.csdc = defs.csdc(cell.important.members, gt_it->second);
      int keeping = keep_out.empty() ? original : subject.predict(remove_parts(scene, keep_out));
      cell.pc = defs.preservation(original, keeping);
      int without = in_p.empty() ? original : subject.predict(remove_parts(scene, in_p));
      cell.dc = defs.deletion(in_p.empty(), original, without);
    }
  });
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    std::vector<double> c, p, d;
    for (const auto& row : out.scenes) {
      c.push_back(row[k].csdc);
      p.push_back(row[k].pc);
      d.push_back(row[k].dc);
    }
    out.csdc.push_back(mean_of(c, 0.0));
    out.pc.push_back(mean_of(p, 0.0));
    out.dc.push_back(mean_of(d, 0.0));
  }
  out.best_csdc = best_of(out.csdc);
  out.best_pc = best_of(out.pc);
  out.best_dc = best_of(out.dc);
  return out;
}

DistractibilityResult distractibility(const EvaluationSubject& subject, const std::vector<Scene>& scenes,
                                      const std::vector<double>& thresholds, double tolerance,
                                      const MetricDefinitions& defs) {
  DistractibilityResult out;
  out.thresholds = thresholds;
  out.scenes.assign(scenes.size(), std::vector<DistractibilityCell>(thresholds.size()));
  parallel_for(scenes.size(), [&](std::size_t i) {
    const Scene& scene = scenes[i];
    auto y = static_cast<std::size_t>(scene.class_id);
    double base = subject.logits(scene)[y];
    Explanation e = subject.explain(scene, scene.class_id);
    std::map<std::string, double> without;  // memoised per part
    for (std::size_t k = 0; k < thresholds.size(); ++k) {
      PartSet p = important_parts(e, scene.part_masks, thresholds[k]);
      for (const auto& slot : scene.present_slots()) {
        if (p.members.count(slot)) continue;
        auto it = without.find(slot);
        if (it == without.end()) it = without.emplace(slot, subject.logits(remove_part(scene, slot))[y]).first;
        DistractibilityCell& cell = out.scenes[i][k];
        ++cell.pairs;
        if (defs.distractor_unaffected(base, it->second, tolerance)) ++cell.hits;
      }
    }
  });
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    long hits = 0, pairs = 0;
    int saturated = 0;
    for (const auto& row : out.scenes) {
      hits += row[k].hits;
      pairs += row[k].pairs;
      if (row[k].pairs == 0) ++saturated;
    }
    out.per_threshold.push_back(pairs == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(pairs));
    out.saturated_scenes.push_back(saturated);
  }
  out.best = best_of(out.per_threshold);
  return out;
}

std::vector<Chimera> make_chimeras(const std::vector<Scene>& scenes, const std::vector<ClassSpec>& classes,
                                   const PartVocabulary& vocabulary, std::uint64_t seed) {
  const std::size_t C = classes.size();
  if (C < 2) throw DataError("make_chimeras: need at least two classes");
  std::map<int, std::size_t> index_of;
  for (std::size_t c = 0; c < C; ++c) index_of[classes[c].class_id] = c;

  std::vector<Chimera> out(scenes.size());
  parallel_for(scenes.size(), [&](std::size_t i) {
    const Scene& scene = scenes[i];
    std::size_t a = index_of.at(scene.class_id);
    std::size_t b = (a + 1 + (i / C) % (C - 1)) % C;
    const ClassSpec& spec_b = classes[b];

    std::vector<std::string> swappable;
    for (const auto& slot : vocabulary.part_slots) {
      if (scene.part_masks.count(slot) && spec_b.assignment.at(slot) != kAbsent) swappable.push_back(slot);
    }
    std::mt19937_64 rng(hash_combine({seed, scene.scene_seed, 0xC41ULL}));
    std::shuffle(swappable.begin(), swappable.end(), rng);
    std::size_t n_swap = swappable.size() / 2;

    Chimera& ch = out[i];
    ch.scene = scene;
    ch.source_id = scene.id;
    ch.class_a = scene.class_id;
    ch.class_b = spec_b.class_id;
    for (std::size_t k = 0; k < swappable.size(); ++k) {
      const std::string& slot = swappable[k];
      int va = scene.provenance.at(slot), vb = spec_b.assignment.at(slot);
      if (k < n_swap) {
        ch.scene = swap_part(ch.scene, vocabulary, slot, vb).scene;
        if (va != vb) ch.b_sourced.insert(slot);
      } else if (va != vb) {
        ch.a_sourced.insert(slot);
      }
    }
    ch.scene.id = scene.id + "~chimera";
  });
  return out;
}

TargetSensitivityResult target_sensitivity(const EvaluationSubject& subject, const std::vector<Chimera>& chimeras,
                                           const MetricDefinitions& defs) {
  TargetSensitivityResult out;
  out.pairs.resize(chimeras.size());
  parallel_for(chimeras.size(), [&](std::size_t i) {
    const Chimera& ch = chimeras[i];
    if (ch.a_sourced.empty() || ch.b_sourced.empty()) return;
    PartImportance pa = part_importance(subject.explain(ch.scene, ch.class_a).grid, ch.scene.part_masks);
    PartImportance pb = part_importance(subject.explain(ch.scene, ch.class_b).grid, ch.scene.part_masks);
    auto share = [](const PartImportance& pi, const SlotSet& slots) {
      if (pi.total_mass <= 0) return 0.0;
      CompensatedSum s;
      for (const auto& slot : slots) s.add(pi.scores.at(slot));
      return s.value() / pi.total_mass;
    };
    out.pairs[i] = defs.target_sensitivity(share(pa, ch.a_sourced), share(pb, ch.a_sourced), share(pb, ch.b_sourced),
                                           share(pa, ch.b_sourced));
  });
  std::vector<double> scores;
  for (const auto& p : out.pairs) {
    if (p) {
      scores.push_back(*p);
    } else {
      ++out.excluded;
    }
  }
  out.value = mean_of(scores, 0.0);
  return out;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"accuracy", "bi", "csdc", "pc", "dc", "d", "sd", "ts"};
  return names;
}

MetricReport evaluate_metrics(const EvaluationSubject& subject, const std::vector<Scene>& scenes,
                              const std::vector<ClassSpec>& classes, const PartVocabulary& vocabulary,
                              const MetricConfig& config, const MetricDefinitions& defs) {
  if (config.thresholds.empty()) throw ConfigError("at least one threshold is required");
  MetricReport report;
  report.method = subject.method();
  report.config = config;

  AccuracyResult acc = accuracy(subject, scenes);
  BackgroundResult bi = background_independence(subject, scenes, config.bi_randomizations, config.seed);
  SingleDeletionResult sd = single_deletion(subject, scenes);
  CompletenessResult comp = completeness_checks(subject, scenes, classes, config.thresholds, defs);
  DistractibilityResult dist = distractibility(subject, scenes, config.thresholds, config.distractor_tolerance, defs);
  TargetSensitivityResult ts = target_sensitivity(subject, make_chimeras(scenes, classes, vocabulary, config.seed), defs);

  report.metrics = {{"accuracy", acc.value}, {"bi", bi.value},     {"csdc", comp.best_csdc}, {"pc", comp.best_pc},
                    {"dc", comp.best_dc},    {"d", dist.best},     {"sd", sd.value},         {"ts", ts.value}};
  report.bi_trials = bi.trials;
  report.sd_excluded = sd.excluded;
  report.ts_excluded = ts.excluded;
  for (std::size_t k = 0; k < config.thresholds.size(); ++k) {
    int pairs = 0;
    for (const auto& row : dist.scenes) pairs += row[k].pairs;
    report.per_threshold.push_back({comp.csdc[k], comp.pc[k], comp.dc[k], dist.per_threshold[k], pairs});
  }
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    SceneDiagnostics d;
    d.scene_id = scenes[i].id;
    d.class_id = scenes[i].class_id;
    d.prediction = acc.predictions[i];
    d.bi_unchanged = bi.unchanged[i];
    d.importance = sd.scenes[i].importance;
    d.logit_drops = sd.scenes[i].logit_drops;
    d.sd_included = sd.scenes[i].included;
    d.sd_degenerate = sd.scenes[i].rho.degenerate;
    d.sd_contribution = sd.scenes[i].contribution;
    for (std::size_t k = 0; k < config.thresholds.size(); ++k) {
      const CompletenessCell& c = comp.scenes[i][k];
      d.per_threshold.push_back({c.important.members, c.csdc, c.pc, c.dc, dist.scenes[i][k].hits, dist.scenes[i][k].pairs});
    }
    d.ts_contribution = ts.pairs[i];
    report.diagnostics.push_back(std::move(d));
  }
  return report;
}

std::map<std::string, double> recompute_from_diagnostics(const MetricReport& report) {
  const auto& diags = report.diagnostics;
  const double n = static_cast<double>(diags.size());
  std::map<std::string, double> out;
  double correct = 0, unchanged = 0, sd_sum = 0, sd_count = 0, ts_sum = 0, ts_count = 0;
  for (const auto& d : diags) {
    correct += d.prediction == d.class_id ? 1 : 0;
    unchanged += d.bi_unchanged;
    if (d.sd_included) {
      sd_sum += d.sd_contribution;
      ++sd_count;
    }
    if (d.ts_contribution) {
      ts_sum += *d.ts_contribution;
      ++ts_count;
    }
  }
  out["accuracy"] = n > 0 ? correct / n : 0.0;
  out["bi"] = n > 0 && report.bi_trials > 0 ? unchanged / (n * report.bi_trials) : 1.0;
  out["sd"] = sd_count > 0 ? sd_sum / sd_count : 0.5;
  out["ts"] = ts_count > 0 ? ts_sum / ts_count : 0.0;

  std::vector<double> csdc, pc, dc, dd;
  for (std::size_t k = 0; k < report.config.thresholds.size(); ++k) {
    double c = 0, p = 0, del = 0, hits = 0, pairs = 0;
    for (const auto& d : diags) {
      c += d.per_threshold[k].csdc;
      p += d.per_threshold[k].pc;
      del += d.per_threshold[k].dc;
      hits += d.per_threshold[k].d_hits;
      pairs += d.per_threshold[k].d_pairs;
    }
    csdc.push_back(n > 0 ? c / n : 0.0);
    pc.push_back(n > 0 ? p / n : 0.0);
    dc.push_back(n > 0 ? del / n : 0.0);
    dd.push_back(pairs > 0 ? hits / pairs : 0.0);
  }
  out["csdc"] = best_of(csdc);
  out["pc"] = best_of(pc);
  out["dc"] = best_of(dc);
  out["d"] = best_of(dd);
  return out;
}

}  // namespace protoeval
