#include "protoeval/harness.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "protoeval/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace protoeval {

namespace {

const char* shape_name(Shape s) {
  switch (s) {
    case Shape::kRectangle: return "rectangle";
    case Shape::kEllipse: return "ellipse";
    case Shape::kTriangle: return "triangle";
    case Shape::kDiamond: return "diamond";
  }
  return "rectangle";
}

Shape shape_from_name(const std::string& name) {
  for (Shape s : {Shape::kRectangle, Shape::kEllipse, Shape::kTriangle, Shape::kDiamond}) {
    if (name == shape_name(s)) return s;
  }
  throw DataError("unknown shape '" + name + "'");
}

json assignment_to_json(const Assignment& a) {
  json out = json::object();
  for (const auto& [slot, v] : a) out[slot] = v == kAbsent ? json(nullptr) : json(v);
  return out;
}

Assignment assignment_from_json(const json& doc) {
  Assignment a;
  for (const auto& [slot, v] : doc.items()) a[slot] = v.is_null() ? kAbsent : v.get<int>();
  return a;
}

json vocabulary_to_json(const PartVocabulary& vocab) {
  json variants = json::object(), regions = json::object();
  for (std::size_t s = 0; s < vocab.part_slots.size(); ++s) {
    json vs = json::array();
    for (const auto& v : vocab.variants[s]) {
      vs.push_back({{"shape", shape_name(v.shape)}, {"color", v.color}, {"size", v.size}});
    }
    variants[vocab.part_slots[s]] = std::move(vs);
    const SlotRegion& r = vocab.regions[s];
    regions[vocab.part_slots[s]] = {r.row0, r.col0, r.row1, r.col1};
  }
  return {{"part_slots", vocab.part_slots}, {"variants", variants}, {"regions", regions}};
}

PartVocabulary vocabulary_from_json(const json& doc) {
  PartVocabulary vocab;
  vocab.part_slots = doc.at("part_slots").get<std::vector<std::string>>();
  for (const auto& slot : vocab.part_slots) {
    std::vector<VariantDescriptor> vs;
    for (const auto& jv : doc.at("variants").at(slot)) {
      vs.push_back({shape_from_name(jv.at("shape").get<std::string>()), jv.at("color").get<std::array<float, 3>>(),
                    jv.at("size").get<double>()});
    }
    vocab.variants.push_back(std::move(vs));
    auto r = doc.at("regions").at(slot).get<std::array<double, 4>>();
    vocab.regions.push_back({r[0], r[1], r[2], r[3]});
  }
  vocab.validate();
  return vocab;
}

json scene_metadata(const Scene& scene, const std::string& partition) {
  return {{"id", scene.id},
          {"partition", partition},
          {"class_id", scene.class_id},
          {"provenance", assignment_to_json(scene.provenance)},
          {"scene_seed", scene.scene_seed},
          {"background_seed", scene.background_seed},
          {"height", scene.height()},
          {"width", scene.width()}};
}

json slot_set_json(const SlotSet& s) { return json(std::vector<std::string>(s.begin(), s.end())); }

template <typename Error = DataError, typename F>
auto wrap_json_errors(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw Error(what + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

void RunConfig::validate() const {
  if (methods.empty()) throw ConfigError("run config: at least one method is required");
  if (seeds.empty()) throw ConfigError("run config: seeds must be non-empty");
  if (!(box_percentile > 0 && box_percentile <= 1)) throw ConfigError("run config: box percentile must be in (0,1]");
  if (!(train.epsilon > 0 && train.epsilon < 1)) throw ConfigError("run config: epsilon must be in (0,1)");
  if (!(metrics.distractor_tolerance >= 0)) throw ConfigError("run config: distractor tolerance must be >= 0");
  if (metrics.bi_randomizations < 1) throw ConfigError("run config: bi_randomizations must be >= 1");
  if (metrics.thresholds.empty()) throw ConfigError("run config: threshold sweep is empty");
  for (double t : metrics.thresholds) {
    if (!(t >= 0 && t <= 1)) throw ConfigError("run config: thresholds must lie in [0,1]");
  }
  if (train.prototypes_per_class < 1) throw ConfigError("run config: prototypes_per_class must be >= 1");
}

json to_json(const GenerationConfig& c) {
  return {{"num_classes", c.num_classes}, {"part_slots", c.part_slots}, {"variants_per_slot", c.variants_per_slot},
          {"height", c.height},           {"width", c.width},           {"train_count", c.train_count},
          {"test_count", c.test_count},   {"seed", c.seed},             {"augment_fraction", c.augment_fraction}};
}

GenerationConfig generation_config_from_json(const json& doc) {
  return wrap_json_errors<ConfigError>("generation config", [&] {
    GenerationConfig c;
    c.num_classes = doc.value("num_classes", c.num_classes);
    c.part_slots = doc.value("part_slots", c.part_slots);
    c.variants_per_slot = doc.value("variants_per_slot", c.variants_per_slot);
    c.height = doc.value("height", c.height);
    c.width = doc.value("width", c.width);
    c.train_count = doc.value("train_count", c.train_count);
    c.test_count = doc.value("test_count", c.test_count);
    c.seed = doc.value("seed", c.seed);
    c.augment_fraction = doc.value("augment_fraction", c.augment_fraction);
    return c;
  });
}

json to_json(const MetricConfig& c) {
  return {{"thresholds", c.thresholds},
          {"distractor_tolerance", c.distractor_tolerance},
          {"bi_randomizations", c.bi_randomizations},
          {"seed", c.seed}};
}

MetricConfig metric_config_from_json(const json& doc) {
  return wrap_json_errors<ConfigError>("metric config", [&] {
    MetricConfig c;
    c.thresholds = doc.value("thresholds", c.thresholds);
    c.distractor_tolerance = doc.value("distractor_tolerance", c.distractor_tolerance);
    c.bi_randomizations = doc.value("bi_randomizations", c.bi_randomizations);
    c.seed = doc.value("seed", c.seed);
    return c;
  });
}

json to_json(const RunConfig& c) {
  std::vector<std::string> methods;
  for (Method m : c.methods) methods.push_back(method_name(m));
  return {{"dataset", to_json(c.dataset)}, {"train", to_json(c.train)},          {"methods", methods},
          {"metrics", to_json(c.metrics)}, {"seeds", c.seeds},                   {"output_dir", c.output_dir.string()},
          {"box_percentile", c.box_percentile}};
}

RunConfig run_config_from_json(const json& doc) {
  RunConfig c = wrap_json_errors<ConfigError>("run config", [&] {
    RunConfig r;
    if (doc.contains("dataset")) r.dataset = generation_config_from_json(doc["dataset"]);
    if (doc.contains("train")) r.train = train_config_from_json(doc["train"]);
    if (doc.contains("metrics")) r.metrics = metric_config_from_json(doc["metrics"]);
    if (doc.contains("methods")) {
      r.methods.clear();
      for (const auto& m : doc["methods"]) r.methods.push_back(parse_method(m.get<std::string>()));
    }
    r.seeds = doc.value("seeds", r.seeds);
    r.output_dir = doc.value("output_dir", std::string{});
    r.box_percentile = doc.value("box_percentile", r.box_percentile);
    return r;
  });
  c.validate();
  return c;
}

std::string format_number(double value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

std::vector<double> parse_thresholds(const std::string& csv) {
  std::vector<double> out;
  std::stringstream in(csv);
  std::string item;
  while (std::getline(in, item, ',')) {
    double t = 0;
    auto res = std::from_chars(item.data(), item.data() + item.size(), t);
    if (res.ec != std::errc{} || res.ptr != item.data() + item.size() || !(t >= 0 && t <= 1)) {
      throw ConfigError("invalid threshold '" + item + "' (expected a number in [0,1])");
    }
    out.push_back(t);
  }
  if (out.empty()) throw ConfigError("threshold list is empty");
  return out;
}

// ---------------------------------------------------------------------------

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw DataError("write failed: " + path.string());
}

void save_dataset(const DatasetBundle& bundle, const fs::path& dir) {
  fs::create_directories(dir / "scenes");
  auto save_partition = [&](const std::vector<Scene>& scenes, const std::string& partition) {
    for (const auto& scene : scenes) {
      fs::path base = dir / "scenes" / scene.id;
      write_grid(base.string() + ".img", scene.image);
      for (const auto& [slot, mask] : scene.part_masks) write_grid(base.string() + ".mask." + slot, mask);
      write_json(base.string() + ".json", scene_metadata(scene, partition));
    }
  };
  save_partition(bundle.train, "train");
  save_partition(bundle.test, "test");
  write_json(dir / "vocab.json", vocabulary_to_json(bundle.vocabulary));
  json classes = json::array();
  for (const auto& c : bundle.classes) classes.push_back({{"class_id", c.class_id}, {"assignment", assignment_to_json(c.assignment)}});
  write_json(dir / "classes.json", classes);
  write_json(dir / "config.json", to_json(bundle.config));
}

Scene load_scene(const fs::path& dataset_dir, const std::string& scene_id) {
  fs::path base = dataset_dir / "scenes" / scene_id;
  json meta = read_json(base.string() + ".json");
  return wrap_json_errors("scene " + scene_id, [&] {
    Scene scene;
    scene.id = meta.at("id").get<std::string>();
    scene.class_id = meta.at("class_id").get<int>();
    scene.provenance = assignment_from_json(meta.at("provenance"));
    scene.scene_seed = meta.at("scene_seed").get<std::uint64_t>();
    scene.background_seed = meta.at("background_seed").get<std::uint64_t>();
    scene.image = read_float_grid(base.string() + ".img");
    if (scene.image.channels() != 3) throw DataError("scene " + scene_id + ": image must have 3 channels");
    for (const auto& [slot, variant] : scene.provenance) {
      if (variant == kAbsent) continue;
      Mask mask = read_mask_grid(base.string() + ".mask." + slot);
      if (mask.rows() != scene.height() || mask.cols() != scene.width()) {
        throw DimensionError("scene " + scene_id + ": mask '" + slot + "' dims differ from image");
      }
      scene.part_masks.emplace(slot, std::move(mask));
    }
    return scene;
  });
}

DatasetBundle load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir / "scenes")) throw DataError("not a dataset directory: " + dir.string());
  DatasetBundle bundle;
  bundle.config = generation_config_from_json(read_json(dir / "config.json"));
  bundle.vocabulary = wrap_json_errors("vocab.json", [&] { return vocabulary_from_json(read_json(dir / "vocab.json")); });
  for (const auto& jc : read_json(dir / "classes.json")) {
    bundle.classes.push_back(wrap_json_errors("classes.json", [&] {
      return ClassSpec{jc.at("class_id").get<int>(), assignment_from_json(jc.at("assignment"))};
    }));
  }
  std::vector<std::string> ids;
  for (const auto& entry : fs::directory_iterator(dir / "scenes")) {
    if (entry.path().extension() == ".json") ids.push_back(entry.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) {
    std::string partition = read_json(dir / "scenes" / (id + ".json")).value("partition", "");
    Scene scene = load_scene(dir, id);
    if (partition == "train") {
      bundle.train.push_back(std::move(scene));
    } else if (partition == "test") {
      bundle.test.push_back(std::move(scene));
    } else {
      throw DataError("scene " + id + " has unknown partition '" + partition + "'");
    }
  }
  for (const auto& s : bundle.train) bundle.class_spec(s.class_id);
  for (const auto& s : bundle.test) bundle.class_spec(s.class_id);
  return bundle;
}

void save_model(const Model& model, const fs::path& path) { write_json(path, model_to_json(model)); }
Model load_model(const fs::path& path) { return model_from_json(read_json(path)); }

json attribution_sidecar(const AttributionGrid& grid) {
  return {{"method_tag", method_name(grid.method)},
          {"class_id", grid.class_id},
          {"rows", grid.values.rows()},
          {"cols", grid.values.cols()}};
}

// ---------------------------------------------------------------------------

json report_to_json(const MetricReport& report, const json& context) {
  const auto& ts = report.config.thresholds;
  json per_threshold = json::object();
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const ThresholdMetrics& m = report.per_threshold[k];
    per_threshold[format_number(ts[k])] = {{"csdc", m.csdc}, {"pc", m.pc}, {"dc", m.dc}, {"d", m.d}, {"d_pairs", m.d_pairs}};
  }
  json diagnostics = json::array();
  for (const auto& d : report.diagnostics) {
    json per_t = json::object();
    for (std::size_t k = 0; k < ts.size(); ++k) {
      const ThresholdDiagnostics& td = d.per_threshold[k];
      per_t[format_number(ts[k])] = {{"important_parts", slot_set_json(td.important)},
                                     {"csdc", td.csdc},
                                     {"pc", td.pc},
                                     {"dc", td.dc},
                                     {"d_hits", td.d_hits},
                                     {"d_pairs", td.d_pairs}};
    }
    diagnostics.push_back({{"scene_id", d.scene_id},
                           {"class_id", d.class_id},
                           {"prediction", d.prediction},
                           {"bi_unchanged", d.bi_unchanged},
                           {"part_importance",
                            {{"scores", d.importance.scores},
                             {"background_residual", d.importance.background_residual},
                             {"total_mass", d.importance.total_mass}}},
                           {"logit_drops", d.logit_drops},
                           {"sd", {{"included", d.sd_included}, {"degenerate", d.sd_degenerate}, {"contribution", d.sd_contribution}}},
                           {"per_threshold", per_t},
                           {"ts", d.ts_contribution ? json(*d.ts_contribution) : json(nullptr)}});
  }
  return {{"method", method_name(report.method)},
          {"config", {{"metrics", to_json(report.config)}, {"run", context}}},
          {"metrics", report.metrics},
          {"per_threshold", per_threshold},
          {"counts",
           {{"scenes", report.diagnostics.size()},
            {"bi_trials", report.bi_trials},
            {"sd_excluded", report.sd_excluded},
            {"ts_excluded", report.ts_excluded}}},
          {"diagnostics", diagnostics}};
}

MetricReport report_from_json(const json& doc) {
  return wrap_json_errors("report", [&] {
    MetricReport r;
    r.method = parse_method(doc.at("method").get<std::string>());
    r.config = metric_config_from_json(doc.at("config").at("metrics"));
    r.metrics = doc.at("metrics").get<std::map<std::string, double>>();
    const auto& ts = r.config.thresholds;
    for (double t : ts) {
      const json& m = doc.at("per_threshold").at(format_number(t));
      r.per_threshold.push_back({m.at("csdc").get<double>(), m.at("pc").get<double>(), m.at("dc").get<double>(),
                                 m.at("d").get<double>(), m.at("d_pairs").get<int>()});
    }
    const json& counts = doc.at("counts");
    r.bi_trials = counts.at("bi_trials").get<int>();
    r.sd_excluded = counts.at("sd_excluded").get<int>();
    r.ts_excluded = counts.at("ts_excluded").get<int>();
    for (const auto& jd : doc.at("diagnostics")) {
      SceneDiagnostics d;
      d.scene_id = jd.at("scene_id").get<std::string>();
      d.class_id = jd.at("class_id").get<int>();
      d.prediction = jd.at("prediction").get<int>();
      d.bi_unchanged = jd.at("bi_unchanged").get<int>();
      const json& pi = jd.at("part_importance");
      d.importance.scores = pi.at("scores").get<std::map<std::string, double>>();
      d.importance.background_residual = pi.at("background_residual").get<double>();
      d.importance.total_mass = pi.at("total_mass").get<double>();
      d.logit_drops = jd.at("logit_drops").get<std::map<std::string, double>>();
      d.sd_included = jd.at("sd").at("included").get<bool>();
      d.sd_degenerate = jd.at("sd").at("degenerate").get<bool>();
      d.sd_contribution = jd.at("sd").at("contribution").get<double>();
      for (double t : ts) {
        const json& jt = jd.at("per_threshold").at(format_number(t));
        auto parts = jt.at("important_parts").get<std::vector<std::string>>();
        d.per_threshold.push_back({SlotSet(parts.begin(), parts.end()), jt.at("csdc").get<double>(),
                                   jt.at("pc").get<double>(), jt.at("dc").get<double>(), jt.at("d_hits").get<int>(),
                                   jt.at("d_pairs").get<int>()});
      }
      if (!jd.at("ts").is_null()) d.ts_contribution = jd.at("ts").get<double>();
      r.diagnostics.push_back(std::move(d));
    }
    return r;
  });
}

std::vector<std::string> validate_report_json(const json& doc) {
  std::vector<std::string> errors;
  auto need = [&](const json& obj, const std::string& key, auto pred, const std::string& what) {
    if (!obj.is_object() || !obj.contains(key)) {
      errors.push_back("missing '" + key + "'");
      return false;
    }
    if (!pred(obj.at(key))) {
      errors.push_back("'" + key + "' must be " + what);
      return false;
    }
    return true;
  };
  auto is_obj = [](const json& j) { return j.is_object(); };
  auto is_num = [](const json& j) { return j.is_number(); };
  auto is_unit = [](const json& j) { return j.is_number() && j.get<double>() >= 0 && j.get<double>() <= 1; };

  if (!doc.is_object()) return {"report must be a JSON object"};
  need(doc, "method", [](const json& j) { return j == "bb" || j == "ssm"; }, "\"bb\" or \"ssm\"");
  if (need(doc, "config", is_obj, "an object")) need(doc["config"], "metrics", is_obj, "an object");
  if (need(doc, "metrics", is_obj, "an object")) {
    for (const auto& name : metric_names()) need(doc["metrics"], name, is_unit, "a number in [0,1]");
  }
  std::vector<std::string> keys;
  if (need(doc, "per_threshold", is_obj, "an object")) {
    for (const auto& [t, m] : doc["per_threshold"].items()) {
      keys.push_back(t);
      for (const char* name : {"csdc", "pc", "dc", "d"}) need(m, name, is_unit, "a number in [0,1]");
      need(m, "d_pairs", is_num, "a number");
    }
  }
  if (need(doc, "diagnostics", [](const json& j) { return j.is_array(); }, "an array")) {
    for (const auto& d : doc["diagnostics"]) {
      need(d, "scene_id", [](const json& j) { return j.is_string(); }, "a string");
      for (const char* name : {"class_id", "prediction", "bi_unchanged"}) need(d, name, is_num, "a number");
      if (need(d, "part_importance", is_obj, "an object")) {
        need(d["part_importance"], "scores", is_obj, "an object");
        need(d["part_importance"], "total_mass", is_num, "a number");
        need(d["part_importance"], "background_residual", is_num, "a number");
      }
      need(d, "logit_drops", is_obj, "an object");
      if (need(d, "sd", is_obj, "an object")) need(d["sd"], "contribution", is_unit, "a number in [0,1]");
      need(d, "ts", [](const json& j) { return j.is_null() || (j.is_number() && j >= 0 && j <= 1); },
           "null or a number in [0,1]");
      if (need(d, "per_threshold", is_obj, "an object")) {
        for (const auto& t : keys) {
          if (need(d["per_threshold"], t, is_obj, "an object")) {
            need(d["per_threshold"][t], "important_parts", [](const json& j) { return j.is_array(); }, "an array");
          }
        }
      }
    }
  }
  return errors;
}

MetricReport evaluate(const Model& model, const DatasetBundle& dataset, Method method, const MetricConfig& config,
                      double box_percentile) {
  if (model.num_classes != static_cast<int>(dataset.classes.size())) {
    throw DataError("evaluate: model has " + std::to_string(model.num_classes) + " classes but the dataset has " +
                    std::to_string(dataset.classes.size()));
  }
  if (dataset.test.empty()) throw DataError("evaluate: dataset has no test scenes");
  ProtoPNetSubject subject(model, method, box_percentile);
  return evaluate_metrics(subject, dataset.test, dataset.classes, dataset.vocabulary, config);
}

json run_context(const DatasetBundle& dataset, const Model& model, double box_percentile) {
  return {{"dataset", to_json(dataset.config)}, {"train", to_json(model.train_config)}, {"box_percentile", box_percentile}};
}

ComparisonTable compare(const json& report_a, const json& report_b) {
  for (const json* r : {&report_a, &report_b}) {
    auto errors = validate_report_json(*r);
    if (!errors.empty()) throw DataError("compare: malformed report: " + errors.front());
  }
  if (report_a.at("config") != report_b.at("config")) {
    throw ConfigError("compare: reports were produced with different configurations");
  }
  ComparisonTable table;
  table.method_a = report_a.at("method").get<std::string>();
  table.method_b = report_b.at("method").get<std::string>();
  bool all_zero = true;
  std::map<std::string, double> bb, ssm;
  for (const auto& name : metric_names()) {
    ComparisonRow row;
    row.metric = name;
    row.a = report_a.at("metrics").at(name).get<double>();
    row.b = report_b.at("metrics").at(name).get<double>();
    row.delta = row.b - row.a;
    row.winner = row.a > row.b ? table.method_a : row.b > row.a ? table.method_b : "tie";
    all_zero = all_zero && row.delta == 0;
    (table.method_a == "bb" ? bb : ssm)[name] = row.a;
    (table.method_b == "bb" ? bb : ssm)[name] = row.b;
    table.rows.push_back(row);
  }
  bool pairing = table.method_a != table.method_b;
  if (!pairing || all_zero) {
    table.verdict = "inconclusive";
  } else {
    bool holds = true, strict = false;
    for (const char* up : {"sd", "d", "ts"}) {
      holds = holds && ssm[up] >= bb[up];
      strict = strict || ssm[up] > bb[up];
    }
    for (const char* down : {"csdc", "pc", "dc"}) {
      holds = holds && bb[down] >= ssm[down];
      strict = strict || bb[down] > ssm[down];
    }
    table.verdict = holds && strict ? "holds" : holds ? "inconclusive" : "violated";
  }
  return table;
}

std::string comparison_csv(const ComparisonTable& table) {
  std::ostringstream out;
  out << "metric," << table.method_a << ',' << table.method_b << ",delta,winner\n";
  for (const auto& row : table.rows) {
    out << row.metric << ',' << format_number(row.a) << ',' << format_number(row.b) << ',' << format_number(row.delta)
        << ',' << row.winner << '\n';
  }
  out << "verdict," << table.verdict << ",,,\n";
  return out.str();
}

std::vector<SeedRun> run_pipeline(const RunConfig& config) {
  config.validate();
  std::vector<SeedRun> runs;
  for (std::uint64_t seed : config.seeds) {
    SeedRun run;
    run.seed = seed;
    GenerationConfig gen = config.dataset;
    gen.seed = seed;
    TrainConfig tc = config.train;
    tc.seed = seed;
    MetricConfig mc = config.metrics;
    mc.seed = seed;

    run.dataset = generate_dataset(gen);
    run.model = train(run.dataset, tc);
    json context = run_context(run.dataset, run.model, config.box_percentile);
    for (Method m : config.methods) {
      run.reports.push_back(report_to_json(evaluate(run.model, run.dataset, m, mc, config.box_percentile), context));
    }
    if (run.reports.size() >= 2) run.comparison = compare(run.reports[0], run.reports[1]);

    if (!config.output_dir.empty()) {
      fs::path dir = config.output_dir / ("seed_" + std::to_string(seed));
      fs::create_directories(dir);
      save_dataset(run.dataset, dir / "dataset");
      save_model(run.model, dir / "model.json");
      for (std::size_t i = 0; i < config.methods.size(); ++i) {
        write_json(dir / ("report_" + method_name(config.methods[i]) + ".json"), run.reports[i]);
      }
      if (run.comparison) {
        std::ofstream(dir / "comparison.csv") << comparison_csv(*run.comparison);
      }
    }
    runs.push_back(std::move(run));
  }
  return runs;
}

}  // namespace protoeval
