// Command-line front end: generate, train, explain, evaluate, compare, render, run.

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "protoeval/error.hpp"
#include "protoeval/harness.hpp"

namespace fs = std::filesystem;
using namespace protoeval;

namespace {

constexpr int kConfigExit = 2;
constexpr int kDataExit = 3;

int cmd_generate(const std::string& config_path, const std::string& out, std::optional<std::uint64_t> seed) {
  GenerationConfig config;
  if (!config_path.empty()) {
    nlohmann::json doc;
    try {
      doc = read_json(config_path);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    config = generation_config_from_json(doc.contains("dataset") ? doc["dataset"] : doc);
  }
  if (seed) config.seed = *seed;
  DatasetBundle bundle = generate_dataset(config);
  save_dataset(bundle, out);
  std::cout << "generated " << bundle.train.size() << " train / " << bundle.test.size() << " test scenes, "
            << bundle.classes.size() << " classes -> " << out << '\n';
  return 0;
}

int cmd_train(const std::string& dataset_dir, const std::string& out, std::optional<std::uint64_t> seed,
              const std::string& config_path) {
  TrainConfig config;
  if (!config_path.empty()) {
    nlohmann::json doc = read_json(config_path);
    config = train_config_from_json(doc.contains("train") ? doc["train"] : doc);
  }
  if (seed) config.seed = *seed;
  DatasetBundle bundle = load_dataset(dataset_dir);
  Model model = train(bundle, config);
  save_model(model, out);
  std::cout << "trained " << model.prototypes.size() << " prototypes -> " << out << '\n';
  return 0;
}

int cmd_explain(const std::string& model_path, const std::string& dataset_dir, const std::string& scene_id,
                const std::string& method_name_arg, std::optional<int> class_id, double percentile,
                const std::string& out) {
  Method method = parse_method(method_name_arg);
  Model model = load_model(model_path);
  Scene scene = load_scene(dataset_dir, scene_id);
  Logits logits = forward(scene.image, model);
  int target = class_id.value_or(logits.argmax());
  if (target < 0 || target >= model.num_classes) throw ConfigError("explain: class id out of range");
  Explanation e = explain(logits, model, method, target, scene.height(), scene.width(), percentile);
  write_grid(out, e.grid.values);
  write_json(out + ".json", attribution_sidecar(e.grid));
  std::cout << "explained " << scene_id << " for class " << target << " -> " << out << '\n';
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& dataset_dir, const std::string& method_arg,
                 const std::string& thresholds, double tolerance, int randomizations, std::uint64_t seed,
                 double percentile, const std::string& out) {
  Method method = parse_method(method_arg);
  MetricConfig config;
  if (!thresholds.empty()) config.thresholds = parse_thresholds(thresholds);
  config.distractor_tolerance = tolerance;
  config.bi_randomizations = randomizations;
  config.seed = seed;
  RunConfig check;
  check.metrics = config;
  check.box_percentile = percentile;
  check.validate();

  Model model = load_model(model_path);
  DatasetBundle bundle = load_dataset(dataset_dir);
  MetricReport report = evaluate(model, bundle, method, config, percentile);
  write_json(out, report_to_json(report, run_context(bundle, model, percentile)));
  for (const auto& name : metric_names()) std::cout << name << ' ' << format_number(report.metrics.at(name)) << '\n';
  return 0;
}

int cmd_compare(const std::string& a, const std::string& b, const std::string& out) {
  ComparisonTable table = compare(read_json(a), read_json(b));
  std::string csv = comparison_csv(table);
  if (out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream(out) << csv;
    std::cout << "verdict: " << table.verdict << '\n';
  }
  return 0;
}

int cmd_render(const std::string& dataset_dir, const std::string& scene_id, const std::string& grid_path,
               const std::string& out) {
  Scene scene = load_scene(dataset_dir, scene_id);
  AttributionGrid grid;
  grid.values = [&] {
    Image f = read_float_grid(grid_path);
    if (f.channels() != 1) throw DimensionError("render: attribution grid must have one channel");
    Field g(f.rows(), f.cols(), 1);
    std::copy(f.values().begin(), f.values().end(), g.values().begin());
    return g;
  }();
  render_overlay(scene, grid, out);
  std::cout << "rendered " << out << '\n';
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out) {
  RunConfig config;
  if (!config_path.empty()) {
    nlohmann::json doc;
    try {
      doc = read_json(config_path);
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
    config = run_config_from_json(doc);
  }
  if (!out.empty()) config.output_dir = out;
  auto runs = run_pipeline(config);
  for (const auto& run : runs) {
    std::cout << "seed " << run.seed;
    for (const auto& report : run.reports) {
      std::cout << "  [" << report["method"].get<std::string>() << "]";
      for (const auto& name : metric_names()) {
        std::cout << ' ' << name << '=' << format_number(report["metrics"][name].get<double>());
      }
    }
    if (run.comparison) std::cout << "  verdict=" << run.comparison->verdict;
    std::cout << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Synthetic-scene benchmark for prototype network attribution maps"};
  app.require_subcommand(1);

  std::string config_path, out, dataset_dir, model_path, scene_id, method = "ssm", grid_path, a, b;
  std::string thresholds = "0.01,0.1,0.25,0.5";
  std::optional<std::uint64_t> seed;
  std::optional<int> class_id;
  double percentile = 0.95, tolerance = 0.05;
  int randomizations = 10;
  std::uint64_t metric_seed = 1;

  auto* gen = app.add_subcommand("generate", "Generate a synthetic scene dataset");
  gen->add_option("--config", config_path, "Generation config JSON");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Dataset seed (overrides the config)");

  auto* tr = app.add_subcommand("train", "Train a prototype network");
  tr->add_option("--dataset", dataset_dir, "Dataset directory")->required();
  tr->add_option("--out", out, "Model JSON path")->required();
  tr->add_option("--seed", seed, "Training seed");
  tr->add_option("--config", config_path, "Training config JSON");

  auto* ex = app.add_subcommand("explain", "Write an attribution grid for one scene");
  ex->add_option("--model", model_path)->required();
  ex->add_option("--dataset", dataset_dir)->required();
  ex->add_option("--scene", scene_id)->required();
  ex->add_option("--method", method)->check(CLI::IsMember({"bb", "ssm"}));
  ex->add_option("--class", class_id, "Class to explain (default: predicted)");
  ex->add_option("--box-percentile", percentile);
  ex->add_option("--out", out)->required();

  auto* ev = app.add_subcommand("evaluate", "Run the metric suite over the test split");
  ev->add_option("--model", model_path)->required();
  ev->add_option("--dataset", dataset_dir)->required();
  ev->add_option("--method", method)->check(CLI::IsMember({"bb", "ssm"}));
  ev->add_option("--thresholds", thresholds);
  ev->add_option("--distractor-tolerance", tolerance);
  ev->add_option("--bi-randomizations", randomizations);
  ev->add_option("--seed", metric_seed);
  ev->add_option("--box-percentile", percentile);
  ev->add_option("--out", out)->required();

  auto* cmp = app.add_subcommand("compare", "Compare two reports");
  cmp->add_option("--a", a)->required();
  cmp->add_option("--b", b)->required();
  cmp->add_option("--out", out, "CSV path (default: stdout)");

  auto* rn = app.add_subcommand("render", "Render an attribution overlay PNG");
  rn->add_option("--dataset", dataset_dir, "Dataset holding the scene")->required();
  rn->add_option("--scene", scene_id)->required();
  rn->add_option("--grid", grid_path)->required();
  rn->add_option("--out", out)->required();

  auto* run = app.add_subcommand("run", "Generate, train, evaluate and compare for every seed");
  run->add_option("--config", config_path, "Run config JSON");
  run->add_option("--out", out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    if (*gen) return cmd_generate(config_path, out, seed);
    if (*tr) return cmd_train(dataset_dir, out, seed, config_path);
    if (*ex) return cmd_explain(model_path, dataset_dir, scene_id, method, class_id, percentile, out);
    if (*ev) {
      return cmd_evaluate(model_path, dataset_dir, method, thresholds, tolerance, randomizations, metric_seed,
                          percentile, out);
    }
    if (*cmp) return cmd_compare(a, b, out);
    if (*rn) return cmd_render(dataset_dir, scene_id, grid_path, out);
    if (*run) return cmd_run(config_path, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigExit;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataExit;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kDataExit;
  }
  return 0;
}
