#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "protoeval/error.hpp"
#include "protoeval/harness.hpp"
#include "test_support.hpp"

using namespace protoeval;
using namespace testing_support;
using nlohmann::json;

namespace {

struct Trained {
  DatasetBundle data;
  Model model;
  json bb, ssm;
};

const Trained& trained() {
  static const Trained t = [] {
    Trained out;
    out.data = generate_dataset(small_config(11));
    out.model = train(out.data, small_train_config(11));
    MetricConfig mc;
    mc.bi_randomizations = 2;
    json ctx = run_context(out.data, out.model, 0.95);
    out.bb = report_to_json(evaluate(out.model, out.data, Method::kBoundingBox, mc), ctx);
    out.ssm = report_to_json(evaluate(out.model, out.data, Method::kSummedSimilarity, mc), ctx);
    return out;
  }();
  return t;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json with_metrics(json report, const std::map<std::string, double>& values) {
  for (const auto& [k, v] : values) report["metrics"][k] = v;
  return report;
}

}  // namespace

TEST(Config, JsonRoundTrips) {
  RunConfig rc;
  rc.dataset.num_classes = 6;
  rc.metrics.thresholds = {0.05, 0.3};
  rc.seeds = {4, 9};
  rc.methods = {Method::kSummedSimilarity};
  rc.box_percentile = 0.9;
  json j = to_json(rc);
  EXPECT_EQ(to_json(run_config_from_json(j)), j);
  EXPECT_EQ(to_json(generation_config_from_json(to_json(rc.dataset))), to_json(rc.dataset));
  EXPECT_EQ(to_json(metric_config_from_json(to_json(rc.metrics))), to_json(rc.metrics));
}

TEST(Config, ValidationRejectsOutOfRangeKnobs) {
  auto bad = [](auto mutate) {
    RunConfig rc;
    mutate(rc);
    return rc;
  };
  EXPECT_NO_THROW(RunConfig{}.validate());
  EXPECT_THROW(bad([](RunConfig& r) { r.methods.clear(); }).validate(), ConfigError);
  EXPECT_THROW(bad([](RunConfig& r) { r.seeds.clear(); }).validate(), ConfigError);
  EXPECT_THROW(bad([](RunConfig& r) { r.box_percentile = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](RunConfig& r) { r.train.epsilon = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](RunConfig& r) { r.metrics.bi_randomizations = 0; }).validate(), ConfigError);
  EXPECT_THROW(bad([](RunConfig& r) { r.metrics.thresholds = {0.2, 1.5}; }).validate(), ConfigError);
  EXPECT_THROW(bad([](RunConfig& r) { r.metrics.thresholds.clear(); }).validate(), ConfigError);
  EXPECT_THROW(bad([](RunConfig& r) { r.train.prototypes_per_class = 0; }).validate(), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"seeds", "three"}}), ConfigError);
}

TEST(Config, ParseThresholdsAndFormatNumber) {
  EXPECT_EQ(parse_thresholds("0.01,0.1,0.25,0.5"), (std::vector<double>{0.01, 0.1, 0.25, 0.5}));
  EXPECT_THROW(parse_thresholds(""), ConfigError);
  EXPECT_THROW(parse_thresholds("0.1,abc"), ConfigError);
  EXPECT_THROW(parse_thresholds("1.2"), ConfigError);
  EXPECT_EQ(format_number(0.25), "0.25");
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(1.0), "1");
}

TEST(Files, DatasetRoundTrip) {
  TempDir dir("harness");
  DatasetBundle bundle = generate_dataset(small_config(2));
  save_dataset(bundle, dir.path() / "ds");
  DatasetBundle back = load_dataset(dir.path() / "ds");
  ASSERT_EQ(back.train.size(), bundle.train.size());
  ASSERT_EQ(back.test.size(), bundle.test.size());
  for (std::size_t i = 0; i < bundle.test.size(); ++i) EXPECT_EQ(back.test[i], bundle.test[i]);
  EXPECT_EQ(back.classes, bundle.classes);
  EXPECT_EQ(load_scene(dir.path() / "ds", bundle.test[0].id), bundle.test[0]);
  EXPECT_THROW(load_scene(dir.path() / "ds", "no-such-scene"), DataError);
  EXPECT_THROW(load_dataset(dir.path() / "missing"), DataError);
}

TEST(Files, ModelRoundTrip) {
  TempDir dir("harness");
  const auto& t = trained();
  save_model(t.model, dir.path() / "m.json");
  EXPECT_EQ(load_model(dir.path() / "m.json"), t.model);
}

TEST(Reports, SchemaAndRoundTrip) {
  const auto& t = trained();
  EXPECT_TRUE(validate_report_json(t.bb).empty());
  EXPECT_TRUE(validate_report_json(t.ssm).empty());
  json doc = t.ssm;
  EXPECT_EQ(report_to_json(report_from_json(doc), doc["config"]["run"]), doc);

  json broken = doc;
  broken["metrics"].erase("sd");
  EXPECT_FALSE(validate_report_json(broken).empty());
  broken = doc;
  broken["metrics"]["pc"] = 1.5;
  EXPECT_FALSE(validate_report_json(broken).empty());
}

TEST(Reports, ByteIdenticalAcrossRuns) {
  TempDir dir("harness");
  const auto& t = trained();
  MetricConfig mc;
  mc.bi_randomizations = 2;
  json again = report_to_json(evaluate(t.model, t.data, Method::kBoundingBox, mc), run_context(t.data, t.model, 0.95));
  write_json(dir.path() / "a.json", t.bb);
  write_json(dir.path() / "b.json", again);
  EXPECT_EQ(slurp(dir.path() / "a.json"), slurp(dir.path() / "b.json"));
}

TEST(Compare, IdenticalReportsAreInconclusive) {
  const auto& t = trained();
  ComparisonTable table = compare(t.bb, t.bb);
  EXPECT_EQ(table.verdict, "inconclusive");
  for (const auto& row : table.rows) {
    EXPECT_EQ(row.delta, 0.0);
    EXPECT_EQ(row.winner, "tie");
  }
}

TEST(Compare, DirectionalPattern) {
  const auto& t = trained();
  json bb = with_metrics(t.bb, {{"csdc", 0.8}, {"pc", 0.9}, {"dc", 0.7}, {"sd", 0.4}, {"d", 0.3}, {"ts", 0.5}});
  json ssm = with_metrics(t.ssm, {{"csdc", 0.6}, {"pc", 0.8}, {"dc", 0.5}, {"sd", 0.6}, {"d", 0.5}, {"ts", 0.7}});
  ComparisonTable ab = compare(bb, ssm), ba = compare(ssm, bb);
  EXPECT_EQ(ab.verdict, "holds");
  EXPECT_EQ(ba.verdict, "holds");
  ASSERT_EQ(ab.rows.size(), ba.rows.size());
  for (std::size_t i = 0; i < ab.rows.size(); ++i) {
    EXPECT_EQ(ab.rows[i].delta, -ba.rows[i].delta);
    EXPECT_EQ(ab.rows[i].winner, ba.rows[i].winner);
  }
  json flipped = with_metrics(ssm, {{"sd", 0.3}});
  EXPECT_EQ(compare(bb, flipped).verdict, "violated");
}

TEST(Compare, RejectsMismatchedConfigsAndMalformedReports) {
  const auto& t = trained();
  json other = t.ssm;
  other["config"]["metrics"]["distractor_tolerance"] = 0.2;
  EXPECT_THROW(compare(t.bb, other), ConfigError);
  json broken = t.ssm;
  broken.erase("metrics");
  EXPECT_THROW(compare(t.bb, broken), DataError);
}

TEST(Compare, CsvLayout) {
  const auto& t = trained();
  std::string csv = comparison_csv(compare(t.bb, t.ssm));
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "metric,bb,ssm,delta,winner");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, static_cast<int>(metric_names().size()) + 1);
  EXPECT_NE(csv.find("verdict,"), std::string::npos);
}

TEST(Overlay, ZeroAttributionKeepsTheImage) {
  const Scene& s = trained().data.test[0];
  OverlayOptions opts;
  opts.outlines = false;
  Grid<std::uint8_t> rgb = overlay_pixels(s, Field(s.height(), s.width()), opts);
  for (std::size_t r = 0; r < s.height(); ++r) {
    for (std::size_t c = 0; c < s.width(); ++c) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        EXPECT_EQ(rgb(r, c, ch), static_cast<std::uint8_t>(std::lround(std::clamp<double>(s.image(r, c, ch), 0, 1) * 255)));
      }
    }
  }
  EXPECT_THROW(overlay_pixels(s, Field(3, 3), opts), DimensionError);
}

TEST(Overlay, BoxAttributionTintsOnlyTheBox) {
  const Scene& s = trained().data.test[1];
  OverlayOptions opts;
  opts.outlines = false;
  Field f(s.height(), s.width());
  BoxBounds box{5, 7, 20, 30};
  for (std::size_t r = 0; r < f.rows(); ++r) {
    for (std::size_t c = 0; c < f.cols(); ++c) f(r, c) = box.contains(r, c) ? 2.0 : 0.0;
  }
  Grid<std::uint8_t> plain = overlay_pixels(s, Field(s.height(), s.width()), opts);
  Grid<std::uint8_t> tinted = overlay_pixels(s, f, opts);
  for (std::size_t r = 0; r < f.rows(); ++r) {
    for (std::size_t c = 0; c < f.cols(); ++c) {
      if (box.contains(r, c)) continue;
      for (std::size_t ch = 0; ch < 3; ++ch) EXPECT_EQ(tinted(r, c, ch), plain(r, c, ch));
    }
  }
}

TEST(Overlay, PngIsDeterministic) {
  TempDir dir("harness");
  const auto& t = trained();
  const Scene& s = t.data.test[2];
  ProtoPNetSubject subject(t.model, Method::kSummedSimilarity);
  Explanation e = subject.explain(s, s.class_id);
  render_overlay(s, e.grid, dir.path() / "a.png");
  render_overlay(s, e.grid, dir.path() / "b.png");
  std::string a = slurp(dir.path() / "a.png");
  EXPECT_EQ(a, slurp(dir.path() / "b.png"));
  ASSERT_GT(a.size(), 8u);
  EXPECT_EQ(a.substr(1, 3), "PNG");
}
