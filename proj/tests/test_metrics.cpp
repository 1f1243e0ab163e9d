#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "protoeval/error.hpp"
#include "protoeval/harness.hpp"
#include "protoeval/metrics.hpp"
#include "protoeval/parallel.hpp"
#include "test_support.hpp"

using namespace protoeval;
using namespace testing_support;

namespace {

// Reference Spearman: rank by counting, then plain Pearson.
std::vector<double> naive_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (double x : v) {
      less += x < v[i];
      equal += x == v[i];
    }
    r[i] = less + (equal + 1) / 2;
  }
  return r;
}

double naive_spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ra = naive_ranks(a), rb = naive_ranks(b);
  double n = static_cast<double>(a.size());
  double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n, mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::map<std::string, double> slot_map(const std::vector<double>& v) {
  const char* names[] = {"feet", "beak", "eyes", "wings", "tail"};
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out[names[i]] = v[i];
  return out;
}

struct TrainedSmall {
  DatasetBundle data;
  Model model;
};

const TrainedSmall& trained() {
  static const TrainedSmall t = [] {
    TrainedSmall out;
    out.data = generate_dataset(small_config(7));
    out.model = train(out.data, small_train_config(7));
    return out;
  }();
  return t;
}

MetricConfig quick_config() {
  MetricConfig c;
  c.bi_randomizations = 3;
  c.seed = 4;
  return c;
}

// Sum of the grid over mask pixels, no compensation.
double mask_sum(const Field& grid, const Mask& mask) {
  double s = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask.values()[i]) s += grid.values()[i];
  }
  return s;
}

}  // namespace

TEST(Spearman, FixedCases) {
  std::vector<double> a{1, 2, 3, 4, 5};
  std::vector<double> rev{5, 4, 3, 2, 1};
  EXPECT_NEAR(spearman(a, a).rho, 1.0, 1e-12);
  EXPECT_NEAR(spearman(a, rev).rho, -1.0, 1e-12);
  EXPECT_NEAR(spearman(std::vector<double>{5, 4, 3, 2, 1}, std::vector<double>{2, 4, 3, 1, 5}).rho, -0.3, 1e-12);
  EXPECT_NEAR(spearman(std::vector<double>{5, 4, 3, 2, 1}, std::vector<double>{3, 4, 5, 1, 2}).rho, 0.5, 1e-12);
}

TEST(Spearman, AverageRanksShareTies) {
  std::vector<double> v{10, 20, 20, 5, 20};
  EXPECT_EQ(average_ranks(v), (std::vector<double>{2, 4, 4, 1, 4}));
}

TEST(Spearman, AllPermutationsOfFive) {
  std::vector<double> base{1, 2, 3, 4, 5}, p = base;
  int count = 0;
  do {
    double d2 = 0;
    for (std::size_t i = 0; i < 5; ++i) d2 += (base[i] - p[i]) * (base[i] - p[i]);
    double closed = 1 - 6 * d2 / (5 * 24);
    EXPECT_NEAR(spearman(base, p).rho, closed, 1e-12);
    EXPECT_NEAR(spearman(base, p).rho, naive_spearman(base, p), 1e-12);
    ++count;
  } while (std::next_permutation(p.begin(), p.end()));
  EXPECT_EQ(count, 120);
}

TEST(Spearman, RandomTiedVectors) {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    std::size_t n = 3 + rng() % 6;
    std::vector<double> a(n), b(n);
    for (auto& x : a) x = static_cast<double>(rng() % 4);
    for (auto& x : b) x = static_cast<double>(rng() % 4);
    SpearmanResult r = spearman(a, b);
    bool flat_a = std::all_of(a.begin(), a.end(), [&](double x) { return x == a[0]; });
    bool flat_b = std::all_of(b.begin(), b.end(), [&](double x) { return x == b[0]; });
    if (flat_a || flat_b) {
      EXPECT_TRUE(r.degenerate);
      EXPECT_EQ(r.rho, 0.0);
    } else {
      EXPECT_FALSE(r.degenerate);
      EXPECT_NEAR(r.rho, naive_spearman(a, b), 1e-12);
    }
  }
}

TEST(Spearman, LabelAlignmentAndErrors) {
  RankableScores a{{"x", "y", "z"}, {1, 2, 3}};
  RankableScores b{{"z", "x", "y"}, {30, 10, 20}};
  EXPECT_NEAR(spearman(a, b).rho, 1.0, 1e-12);
  RankableScores c{{"x", "y", "w"}, {1, 2, 3}};
  EXPECT_THROW(spearman(a, c), DataError);
  EXPECT_THROW(spearman(std::vector<double>{1, 2}, std::vector<double>{1}), DataError);
  EXPECT_THROW(spearman(std::vector<double>{1}, std::vector<double>{1}), DataError);
}

TEST(SingleDeletion, RankSceneContributions) {
  auto doc = load_json("rank_scene.json");
  auto drops = doc["drops"].get<std::map<std::string, double>>();
  PartMasks masks = layout_masks();
  auto bb = part_importance(load_field("rank_scene_bb.pgrd"), masks);
  auto ssm = part_importance(load_field("rank_scene_ssm.pgrd"), masks);
  EXPECT_NEAR(single_deletion_contribution(bb.scores, drops), 0.35, 1e-9);
  EXPECT_NEAR(single_deletion_contribution(ssm.scores, drops), 0.75, 1e-9);
}

TEST(SingleDeletion, InvariantToPositiveScaling) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(0, 10);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> imp(5), drop(5);
    for (auto& x : imp) x = u(rng);
    for (auto& x : drop) x = u(rng) - 3;
    double base = single_deletion_contribution(slot_map(imp), slot_map(drop));
    double scale = 0.01 + u(rng);
    for (auto& x : imp) x *= scale;
    EXPECT_NEAR(single_deletion_contribution(slot_map(imp), slot_map(drop)), base, 1e-12);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 1.0);
  }
}

TEST(MetricDefinitions, BoundaryCases) {
  const auto& d = default_definitions();
  EXPECT_EQ(d.csdc({"a", "b"}, {{"a", "c"}, {"b"}}), 1.0);
  EXPECT_EQ(d.csdc({"a"}, {{"a", "c"}}), 0.5);
  EXPECT_EQ(d.csdc({}, {{"a"}}), 0.0);
  EXPECT_EQ(d.preservation(2, 2), 1.0);
  EXPECT_EQ(d.preservation(2, 1), 0.0);
  EXPECT_EQ(d.deletion(true, 2, 1), 0.0);
  EXPECT_EQ(d.deletion(false, 2, 1), 1.0);
  EXPECT_EQ(d.deletion(false, 2, 2), 0.0);
  EXPECT_TRUE(d.distractor_unaffected(10, 10.4, 0.05));
  EXPECT_FALSE(d.distractor_unaffected(10, 10.6, 0.05));
  EXPECT_EQ(d.target_sensitivity(0.5, 0.2, 0.4, 0.1), 1.0);
  EXPECT_EQ(d.target_sensitivity(0.5, 0.6, 0.4, 0.1), 0.5);
  EXPECT_EQ(d.target_sensitivity(0.2, 0.2, 0.1, 0.1), 0.0);
}

TEST(TwoSceneFixture, MatchesIndependentComputation) {
  TableFixture fx = load_table_fixture();
  TableSubject subject(fx.table);
  MetricReport r = evaluate_metrics(subject, fx.scenes, fx.classes, fx.vocabulary, fx.config);
  auto expected = load_json("two_scene_expected.json");
  for (const auto& name : metric_names()) {
    EXPECT_NEAR(r.metrics.at(name), expected[name].get<double>(), 1e-9) << name;
  }
  ASSERT_EQ(r.per_threshold.size(), fx.config.thresholds.size());
  for (std::size_t k = 0; k < fx.config.thresholds.size(); ++k) {
    const auto& e = expected["per_threshold"][format_number(fx.config.thresholds[k])];
    EXPECT_NEAR(r.per_threshold[k].csdc, e["csdc"].get<double>(), 1e-9);
    EXPECT_NEAR(r.per_threshold[k].pc, e["pc"].get<double>(), 1e-9);
    EXPECT_NEAR(r.per_threshold[k].dc, e["dc"].get<double>(), 1e-9);
    EXPECT_NEAR(r.per_threshold[k].d, e["d"].get<double>(), 1e-9);
  }
}

TEST(Accuracy, RecountsPredictions) {
  const auto& t = trained();
  ProtoPNetSubject subject(t.model, Method::kSummedSimilarity);
  AccuracyResult acc = accuracy(subject, t.data.test);
  int correct = 0;
  for (std::size_t i = 0; i < t.data.test.size(); ++i) {
    auto logits = forward(t.data.test[i].image, t.model).scores;
    int argmax = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    EXPECT_EQ(acc.predictions[i], argmax);
    correct += argmax == t.data.test[i].class_id;
  }
  EXPECT_DOUBLE_EQ(acc.value, static_cast<double>(correct) / static_cast<double>(t.data.test.size()));
}

TEST(BackgroundIndependence, CountsAreBounded) {
  const auto& t = trained();
  ProtoPNetSubject subject(t.model, Method::kSummedSimilarity);
  BackgroundResult bi = background_independence(subject, t.data.test, 4, 2);
  long total = 0;
  for (int u : bi.unchanged) {
    EXPECT_GE(u, 0);
    EXPECT_LE(u, 4);
    total += u;
  }
  EXPECT_DOUBLE_EQ(bi.value, static_cast<double>(total) / (4.0 * static_cast<double>(t.data.test.size())));
  EXPECT_THROW(background_independence(subject, t.data.test, 0, 2), ConfigError);
}

TEST(BackgroundIndependence, BackgroundBlindSubjectScoresOne) {
  // Table subject only reacts to background seeds divisible by 3; remove that bonus.
  TableFixture fx = load_table_fixture();
  fx.table["background_bonus"] = {0.0, 0.0};
  TableSubject subject(fx.table);
  EXPECT_EQ(background_independence(subject, fx.scenes, 8, 1).value, 1.0);
}

TEST(Chimeras, ProvenanceIsConsistent) {
  const auto& t = trained();
  auto chimeras = make_chimeras(t.data.test, t.data.classes, t.data.vocabulary, 11);
  ASSERT_EQ(chimeras.size(), t.data.test.size());
  for (std::size_t i = 0; i < chimeras.size(); ++i) {
    const Chimera& ch = chimeras[i];
    EXPECT_NE(ch.class_a, ch.class_b);
    EXPECT_EQ(ch.class_a, t.data.test[i].class_id);
    for (const auto& slot : ch.a_sourced) {
      EXPECT_EQ(ch.b_sourced.count(slot), 0u);
      EXPECT_EQ(ch.scene.provenance.at(slot), t.data.class_spec(ch.class_a).assignment.at(slot));
    }
    for (const auto& slot : ch.b_sourced) {
      EXPECT_EQ(ch.scene.provenance.at(slot), t.data.class_spec(ch.class_b).assignment.at(slot));
    }
  }
}

TEST(TargetSensitivity, MatchesDirectShareComputation) {
  const auto& t = trained();
  ProtoPNetSubject subject(t.model, Method::kSummedSimilarity);
  // Twenty chimeras drawn from the training split.
  std::vector<Scene> first(t.data.train.begin(), t.data.train.begin() + 20);
  auto chimeras = make_chimeras(first, t.data.classes, t.data.vocabulary, 5);
  TargetSensitivityResult ts = target_sensitivity(subject, chimeras);
  double sum = 0;
  int used = 0;
  for (std::size_t i = 0; i < chimeras.size(); ++i) {
    const Chimera& ch = chimeras[i];
    if (ch.a_sourced.empty() || ch.b_sourced.empty()) {
      EXPECT_FALSE(ts.pairs[i].has_value());
      continue;
    }
    Field ga = subject.explain(ch.scene, ch.class_a).grid.values;
    Field gb = subject.explain(ch.scene, ch.class_b).grid.values;
    double ta = std::accumulate(ga.values().begin(), ga.values().end(), 0.0);
    double tb = std::accumulate(gb.values().begin(), gb.values().end(), 0.0);
    auto share = [&](const Field& g, double total, const SlotSet& slots) {
      double s = 0;
      for (const auto& slot : slots) s += mask_sum(g, ch.scene.part_masks.at(slot));
      return total > 0 ? s / total : 0.0;
    };
    double a_ok = share(ga, ta, ch.a_sourced) > share(gb, tb, ch.a_sourced) ? 1 : 0;
    double b_ok = share(gb, tb, ch.b_sourced) > share(ga, ta, ch.b_sourced) ? 1 : 0;
    ASSERT_TRUE(ts.pairs[i].has_value());
    EXPECT_EQ(*ts.pairs[i], 0.5 * a_ok + 0.5 * b_ok);
    sum += 0.5 * a_ok + 0.5 * b_ok;
    ++used;
  }
  EXPECT_GT(used, 0);
  EXPECT_NEAR(ts.value, sum / used, 1e-12);
}

TEST(Report, DiagnosticsReproduceAggregates) {
  const auto& t = trained();
  for (Method m : {Method::kBoundingBox, Method::kSummedSimilarity}) {
    ProtoPNetSubject subject(t.model, m);
    MetricReport r = evaluate_metrics(subject, t.data.test, t.data.classes, t.data.vocabulary, quick_config());
    auto again = recompute_from_diagnostics(r);
    for (const auto& name : metric_names()) {
      EXPECT_NEAR(again.at(name), r.metrics.at(name), 1e-9) << name;
      EXPECT_GE(r.metrics.at(name), 0.0);
      EXPECT_LE(r.metrics.at(name), 1.0);
    }
  }
}

TEST(Report, DeterministicAcrossThreadCounts) {
  const auto& t = trained();
  ProtoPNetSubject subject(t.model, Method::kBoundingBox);
  MetricReport a, b;
  {
    ThreadLimit one(1);
    a = evaluate_metrics(subject, t.data.test, t.data.classes, t.data.vocabulary, quick_config());
  }
  {
    ThreadLimit four(4);
    b = evaluate_metrics(subject, t.data.test, t.data.classes, t.data.vocabulary, quick_config());
  }
  EXPECT_EQ(a.metrics, b.metrics);
  ASSERT_EQ(a.diagnostics.size(), b.diagnostics.size());
  for (std::size_t i = 0; i < a.diagnostics.size(); ++i) {
    EXPECT_EQ(a.diagnostics[i].sd_contribution, b.diagnostics[i].sd_contribution);
    EXPECT_EQ(a.diagnostics[i].ts_contribution, b.diagnostics[i].ts_contribution);
  }
}
