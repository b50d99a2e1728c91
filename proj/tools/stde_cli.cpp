// stde: command-line front end.
//
//   stde attack   run one attack per (source, target) pair
//   stde bench    run the synthetic region-trigger suite
//   stde metrics  recompute the summary of a records.jsonl file
//   stde convert  .stv <-> directory of PPM/PGM frames
//   stde synth    write one toy instance to disk

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "stde/harness.hpp"

namespace {

using namespace stde;

// Parse-time values for `attack`; unset options leave config values alone.
struct AttackArgs {
  std::string config;
  std::string source;
  std::uint32_t source_label = 0;
  std::string target;
  std::uint32_t target_label = 0;
  std::string mode;
  std::string attack;
  std::string oracle;
  std::string texture;
  std::string out;
  std::size_t workers = 1;
  std::uint64_t seed = 0;
  StdeParams p;
  std::string norm;
  bool no_crossover = false;
  bool export_frames = false;
  bool force = false;
  bool dump_config = false;
};

std::string one_line(std::string text) {
  for (auto& c : text) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  return text;
}

ExperimentConfig build_config(const CLI::App& cmd, const AttackArgs& a) {
  nlohmann::json doc = nlohmann::json::object();
  std::filesystem::path base = std::filesystem::current_path();
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw ConfigError("cannot open config " + a.config);
    try {
      doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(a.config + ": " + e.what());
    }
    base = std::filesystem::absolute(a.config).parent_path();
  }
  auto given = [&](const char* name) { return cmd.count(name) > 0; };

  // The mode brings its own param defaults; explicit param flags below win.
  if (given("--mode")) doc["mode"] = a.mode;
  if (given("--attack")) doc["attack"] = a.attack;
  if (given("--oracle")) doc["oracle"] = a.oracle;
  if (given("--texture")) doc["texture"] = a.texture;
  if (given("--seed")) doc["seed"] = a.seed;
  if (given("--workers")) doc["workers"] = a.workers;
  if (given("--source")) {
    nlohmann::json pair{{"source", std::filesystem::absolute(a.source).string()}, {"source_label", a.source_label}};
    if (given("--target")) pair["target"] = std::filesystem::absolute(a.target).string();
    pair["target_label"] = a.target_label;
    doc["pairs"] = nlohmann::json::array({pair});
  }
  if (given("--out")) doc["output_dir"] = std::filesystem::absolute(a.out).string();

  auto& params = doc["params"];
  if (params.is_null()) params = nlohmann::json::object();
  if (given("--budget")) params["budget"] = a.p.budget;
  if (given("--population")) params["population"] = a.p.population;
  if (given("--mu")) params["mu"] = a.p.mu;
  if (given("--cf")) params["cf"] = a.p.cf;
  if (given("--gamma")) params["gamma"] = a.p.gamma;
  if (given("--alpha")) params["alpha"] = a.p.alpha;
  if (given("--lambda")) params["lambda"] = a.p.lambda;
  if (given("--epsilon")) params["epsilon"] = a.p.epsilon;
  if (given("--init-retries")) params["init_retry_budget"] = a.p.init_retry_budget;
  if (given("--norm")) params["norm"] = a.norm;
  if (a.no_crossover) params["crossover"] = false;
  return parse_experiment_config(doc, base);
}

void export_adversarial_frames(const ExperimentConfig& config, const std::vector<AttackRecord>& records) {
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    if (!r.success || !r.individual) continue;
    const auto [source, texture] = load_pair_videos(config, k);
    const Shape& s = source.shape();
    const MaskVolume mask = synth_mask(*r.individual, s.height, s.width);
    export_frames(compose(source, texture, mask), mask, config.output_dir / ("frames_" + std::to_string(k)));
  }
}

void add_attack(CLI::App& app, AttackArgs& a, std::function<int()>& action) {
  auto* cmd = app.add_subcommand("attack", "Attack each (source, target) pair and write records.jsonl + summary.json");
  cmd->add_option("--config", a.config, "Experiment config (JSON); flags override its values")->check(CLI::ExistingFile);
  cmd->add_option("--source", a.source, "Source video (.stv)");
  cmd->add_option("--source-label", a.source_label, "Label of the source video");
  cmd->add_option("--target", a.target, "Target video (.stv), used as the patch texture");
  cmd->add_option("--target-label", a.target_label, "Target label (targeted mode)");
  cmd->add_option("--mode", a.mode, "untargeted | targeted")->check(CLI::IsMember({"untargeted", "targeted"}));
  cmd->add_option("--attack", a.attack, "stde | stde_spatial_only | random_search")
      ->check(CLI::IsMember({"stde", "stde_spatial_only", "random_search"}));
  cmd->add_option("--oracle", a.oracle,
                  "region_trigger:x0,y0,x1,y1:coverage:frames:label | linear:classes:seed | subprocess:<command>");
  cmd->add_option("--texture", a.texture, "target | gaussian | monochrome")
      ->check(CLI::IsMember({"target", "gaussian", "monochrome"}));
  cmd->add_option("--out", a.out, "Output directory");
  cmd->add_option("--workers", a.workers, "Attacks run in parallel")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", a.seed, "Master seed; pair seeds derive from it");
  cmd->add_option("--budget", a.p.budget, "Query budget Q");
  cmd->add_option("--population", a.p.population, "Population size N");
  cmd->add_option("--mu", a.p.mu, "Initial rectangle side rate");
  cmd->add_option("--cf", a.p.cf, "Initial keyframe rate");
  cmd->add_option("--gamma", a.p.gamma, "Mutation and crossover step");
  cmd->add_option("--alpha", a.p.alpha, "Keyframe bits flipped per temporal crossover");
  cmd->add_option("--lambda", a.p.lambda, "Weight of the temporal overlap term");
  cmd->add_option("--epsilon", a.p.epsilon, "Stop once the best fitness is <= epsilon");
  cmd->add_option("--init-retries", a.p.init_retry_budget, "Samples tried per population slot");
  cmd->add_option("--norm", a.norm, "l0 | l2")->check(CLI::IsMember({"l0", "l2"}));
  cmd->add_flag("--no-crossover", a.no_crossover, "Skip spatial and temporal crossover");
  cmd->add_flag("--export-frames", a.export_frames, "Write adversarial frames and overlays per pair");
  cmd->add_flag("--force", a.force, "Overwrite a non-empty output directory");
  cmd->add_flag("--dump-config", a.dump_config, "Print the resolved config and exit");
  cmd->callback([cmd, &a, &action] {
    action = [cmd, &a] {
      const ExperimentConfig config = build_config(*cmd, a);
      if (a.dump_config) {
        std::cout << to_json(config).dump(2) << '\n';
        return 0;
      }
      const auto result = run_experiment(config, a.force);
      if (a.export_frames) export_adversarial_frames(config, result.records);
      std::cout << nlohmann::json(result.summary).dump(2) << '\n';
      return 0;
    };
  });
}

void print_bench_table(const std::vector<BenchResult>& results) {
  std::printf("%-18s %8s %10s %10s %12s %8s\n", "attack", "FR(%)", "AOA(%)", "AQN", "median_area", "records");
  for (const auto& r : results) {
    const auto& m = r.summary;
    std::printf("%-18s %8.2f %10s %10.1f %12.1f %8zu\n", to_string(r.attack).c_str(), m.fr,
                m.aoa ? std::to_string(*m.aoa).substr(0, 8).c_str() : "-", m.aqn, r.median_area, m.records);
  }
}

void add_bench(CLI::App& app, std::function<int()>& action) {
  static std::string suite_path;
  static std::string out;
  static bool force = false;
  auto* cmd = app.add_subcommand("bench", "Run the synthetic region-trigger suite and print a metrics table");
  cmd->add_option("--suite", suite_path, "Suite description (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", out, "Write <attack>.jsonl and bench.json here");
  cmd->add_flag("--force", force, "Overwrite a non-empty output directory");
  cmd->callback([&action] {
    action = [] {
      std::ifstream in(suite_path);
      nlohmann::json doc;
      try {
        doc = nlohmann::json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError(suite_path + ": " + e.what());
      }
      const ToySuiteSpec spec = parse_toy_suite(doc);
      std::filesystem::path dir;
      if (!out.empty()) {
        dir = out;
        if (std::filesystem::exists(dir) && !std::filesystem::is_empty(dir) && !force) {
          throw ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
        }
      }
      const auto results = run_bench(spec);
      print_bench_table(results);
      if (!out.empty()) {
        std::filesystem::create_directories(dir);
        nlohmann::json summary = nlohmann::json::array();
        for (const auto& r : results) {
          write_records(dir / (to_string(r.attack) + ".jsonl"), r.records);
          summary.push_back({{"attack", to_string(r.attack)}, {"metrics", r.summary}, {"median_area", r.median_area}});
        }
        std::ofstream(dir / "bench.json") << summary.dump(2) << '\n';
      }
      return 0;
    };
  });
}

void add_metrics(CLI::App& app, std::function<int()>& action) {
  static std::string records_path;
  static std::string saliency_dir;
  auto* cmd = app.add_subcommand("metrics", "Recompute FR, AOA, AOA* and AQN from records.jsonl");
  cmd->add_option("--records", records_path, "records.jsonl")->required()->check(CLI::ExistingFile);
  cmd->add_option("--saliency", saliency_dir, "Directory of <pair_index>.stv single-channel saliency masks")
      ->check(CLI::ExistingDirectory);
  cmd->callback([&action] {
    action = [] {
      const auto records = read_records(records_path);
      SaliencyMap saliency;
      if (!saliency_dir.empty()) {
        for (const auto& r : records) {
          const auto path = std::filesystem::path(saliency_dir) / (std::to_string(r.pair_index) + ".stv");
          if (std::filesystem::exists(path) && !saliency.count(r.pair_index)) {
            saliency.emplace(r.pair_index, load_saliency(path));
          }
        }
      }
      const auto m = compute_metrics(records, saliency.empty() ? nullptr : &saliency);
      std::cout << nlohmann::json(m).dump(2) << '\n';
      return 0;
    };
  });
}

void add_convert(CLI::App& app, std::function<int()>& action) {
  static std::string input;
  static std::string output;
  auto* cmd = app.add_subcommand("convert", "Convert a .stv file to a frame directory, or a frame directory to .stv");
  cmd->add_option("input", input, ".stv file or directory of frame_NNN.ppm/pgm")->required()->check(CLI::ExistingPath);
  cmd->add_option("output", output, "Frame directory or .stv file")->required();
  cmd->callback([&action] {
    action = [] {
      if (std::filesystem::is_directory(input)) {
        save_video(import_frames(input), output);
      } else {
        export_frames(load_video(input), std::nullopt, output);
      }
      return 0;
    };
  });
}

void add_synth(CLI::App& app, std::function<int()>& action) {
  static std::string out;
  static std::string suite_path;
  static std::size_t index = 0;
  auto* cmd = app.add_subcommand("synth", "Write one toy instance (source.stv, target.stv) and print its oracle spec");
  cmd->add_option("--out", out, "Destination directory")->required();
  cmd->add_option("--suite", suite_path, "Suite description (JSON); built-in defaults otherwise")
      ->check(CLI::ExistingFile);
  cmd->add_option("--index", index, "Instance index within the suite");
  cmd->callback([&action] {
    action = [] {
      ToySuiteSpec spec;
      if (!suite_path.empty()) {
        std::ifstream in(suite_path);
        spec = parse_toy_suite(nlohmann::json::parse(in));
      }
      const auto inst = make_toy_instance(spec, index);
      std::filesystem::create_directories(out);
      save_video(inst.source, std::filesystem::path(out) / "source.stv");
      save_video(inst.target, std::filesystem::path(out) / "target.stv");
      const auto& t = inst.trigger;
      std::printf("region_trigger:%d,%d,%d,%d:%g:%zu:%u\n", t.region.x0, t.region.y0, t.region.x1, t.region.y1,
                  t.coverage, t.frames_required, t.trigger.id);
      return 0;
    };
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse spatio-temporal patch attacks on video classifiers"};
  app.require_subcommand(1);
  std::function<int()> action;
  AttackArgs attack_args;
  add_attack(app, attack_args, action);
  add_bench(app, action);
  add_metrics(app, action);
  add_convert(app, action);
  add_synth(app, action);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "stde: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    return action ? action() : 0;
  } catch (const ConfigError& e) {
    std::cerr << "stde: config error: " << one_line(e.what()) << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "stde: error: " << one_line(e.what()) << '\n';
    return 1;
  }
}
