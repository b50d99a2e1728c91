#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "stde/harness.hpp"
#include "test_support.hpp"

namespace stde {
namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

AttackRecord record_with(bool success, std::size_t area, std::uint64_t queries, Shape shape = {8, 32, 32, 3}) {
  AttackRecord r;
  r.attack = "stde";
  r.success = success;
  r.final_area = area;
  r.queries = queries;
  r.shape = shape;
  return r;
}

TEST(Metrics, WorkedExamples) {
  std::vector<AttackRecord> records{record_with(true, 16, 100)};
  auto m = compute_metrics(records);
  EXPECT_DOUBLE_EQ(m.fr, 100.0);
  ASSERT_TRUE(m.aoa.has_value());
  EXPECT_DOUBLE_EQ(*m.aoa, 100.0 * 16 / 8192);
  EXPECT_NEAR(*m.aoa, 0.195, 1e-3);
  EXPECT_FALSE(m.aoa_star.has_value());

  records = {record_with(false, 0, 10), record_with(false, 0, 30)};
  m = compute_metrics(records);
  EXPECT_EQ(m.fr, 0.0);
  EXPECT_FALSE(m.aoa.has_value());
  EXPECT_EQ(m.aqn, 20.0);
}

TEST(Metrics, AoaOverSuccessesAqnOverAll) {
  std::vector<AttackRecord> records{record_with(true, 64, 100), record_with(true, 128, 300), record_with(false, 0, 500)};
  const auto m = compute_metrics(records);
  EXPECT_NEAR(m.fr, 200.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(*m.aoa, 100.0 * 96 / 8192);
  EXPECT_DOUBLE_EQ(m.aqn, 300.0);
  EXPECT_EQ(m.successes, 2u);
  EXPECT_FALSE(m.partial);
}

TEST(Metrics, SaliencyEqualToPatchGivesFullOverlap) {
  auto r = record_with(true, 16, 10, {2, 16, 16, 3});
  r.individual = Individual{{{2, 2, 6, 6}, {0, 0, 0, 0}}, {true, false}};
  SaliencyMap sal;
  sal.emplace(0, synth_mask(*r.individual, 16, 16));
  std::vector<AttackRecord> records{r};
  auto m = compute_metrics(records, &sal);
  ASSERT_TRUE(m.aoa_star.has_value());
  EXPECT_DOUBLE_EQ(*m.aoa_star, 100.0);

  MaskVolume half(2, 16, 16);
  half.fill_rect(0, 2, 2, 6, 6);
  half.fill_rect(1, 2, 2, 6, 6);
  sal[0] = half;
  m = compute_metrics(records, &sal);
  EXPECT_DOUBLE_EQ(*m.aoa_star, 50.0);

  sal[0] = MaskVolume(3, 16, 16);
  EXPECT_THROW(compute_metrics(records, &sal), std::invalid_argument);
}

TEST(Metrics, Errors) {
  EXPECT_THROW(compute_metrics({}), std::invalid_argument);
  std::vector<AttackRecord> mixed{record_with(true, 1, 1), record_with(true, 1, 1, {4, 32, 32, 3})};
  EXPECT_THROW(compute_metrics(mixed), std::invalid_argument);
}

TEST(Metrics, PartialFlag) {
  auto aborted = record_with(false, 0, 5);
  aborted.status = AttackStatus::Aborted;
  std::vector<AttackRecord> records{record_with(true, 4, 5), aborted};
  EXPECT_TRUE(compute_metrics(records).partial);
}

TEST(Records, JsonRoundTrip) {
  auto r = record_with(true, 16, 42);
  r.fitness = Fitness{12.0};
  r.individual = Individual{{{1, 2, 3, 4}}, {true}};
  r.trajectory = {{1, Fitness::infinite()}, {40, Fitness{20}}, {42, Fitness{12}}};
  r.params = nlohmann::json{{"budget", 42}};
  const nlohmann::json j = r;
  EXPECT_TRUE(j["trajectory"][0][1].is_null());
  EXPECT_EQ(j["status"], "completed");
  EXPECT_EQ(j.get<AttackRecord>(), r);
}

TEST(Records, OccludedPercent) { EXPECT_DOUBLE_EQ(occluded_percent(64, {8, 32, 32, 3}), 100.0 * 64 / 8192); }

TEST(Oracles, Shorthand) {
  auto j = parse_oracle_shorthand("region_trigger:8,8,16,16:0.5:2:1");
  EXPECT_EQ(j["rect"], (nlohmann::json{8, 8, 16, 16}));
  EXPECT_EQ(j["frames"], 2);
  EXPECT_EQ(j["trigger_label"], 1);
  j = parse_oracle_shorthand("linear:5:9");
  EXPECT_EQ(j["classes"], 5);
  j = parse_oracle_shorthand("subprocess:python3 model.py --fast");
  EXPECT_EQ(j["command"], "python3 model.py --fast");
  EXPECT_THROW(parse_oracle_shorthand("region_trigger:8,8,16:0.5:2:1"), ConfigError);
  EXPECT_THROW(parse_oracle_shorthand("linear:x:1"), ConfigError);
  EXPECT_THROW(parse_oracle_shorthand("resnet:1"), ConfigError);
  EXPECT_THROW(parse_oracle_shorthand("subprocess:"), ConfigError);
}

TEST(Oracles, MakeOracle) {
  const VideoTensor clean(Shape{2, 32, 32, 3}, std::uint8_t{0});
  auto o = make_oracle(parse_oracle_shorthand("region_trigger:8,8,16,16:0.5:2:1"), clean, Label{4});
  EXPECT_EQ(o->query(clean), Label{4});
  EXPECT_THROW(make_oracle(parse_oracle_shorthand("region_trigger:30,30,40,40:0.5:2:1"), clean, Label{0}), ConfigError);
  EXPECT_THROW(make_oracle(nlohmann::json{{"type", "linear"}}, clean, Label{0}), ConfigError);
}

struct ExperimentDir {
  std::filesystem::path root;
  nlohmann::json doc;

  explicit ExperimentDir(const std::string& name, std::size_t pairs = 2) : root(testing::scratch_dir(name)) {
    ToySuiteSpec spec;
    doc = {{"attack", "stde"},
           {"mode", "untargeted"},
           {"seed", 11},
           {"params", {{"budget", 3000}}},
           {"oracle", "region_trigger:12,12,20,20:0.5:2:1"},
           {"pairs", nlohmann::json::array()}};
    for (std::size_t k = 0; k < pairs; ++k) {
      auto inst = make_toy_instance(spec, k);
      save_video(inst.source, root / ("src" + std::to_string(k) + ".stv"));
      save_video(inst.target, root / ("tgt" + std::to_string(k) + ".stv"));
      doc["pairs"].push_back({{"source", "src" + std::to_string(k) + ".stv"},
                              {"source_label", 0},
                              {"target", "tgt" + std::to_string(k) + ".stv"},
                              {"target_label", 1}});
    }
  }
  ~ExperimentDir() { std::filesystem::remove_all(root); }

  ExperimentConfig config(const std::string& out) {
    auto d = doc;
    d["output_dir"] = out;
    return parse_experiment_config(d, root);
  }
};

TEST(Experiment, TwoPairsWriteRecordsAndSummary) {
  ExperimentDir dir("exp2");
  const auto result = run_experiment(dir.config("out"));
  ASSERT_EQ(result.records.size(), 2u);
  for (const auto& r : result.records) EXPECT_EQ(r.status, AttackStatus::Completed) << r.error;
  std::ifstream in(dir.root / "out" / "records.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 2u);
  const auto summary = nlohmann::json::parse(slurp(dir.root / "out" / "summary.json"));
  EXPECT_EQ(summary["attack"], "stde");
  EXPECT_EQ(summary["metrics"].get<MetricsSummary>(), result.summary);
  EXPECT_EQ(result.records[0].pair_index, 0u);
  EXPECT_EQ(result.records[1].pair_index, 1u);
  EXPECT_EQ(result.records[1].seed, pair_seed(11, 1));
}

TEST(Experiment, RefusesNonEmptyOutputUnlessForced) {
  ExperimentDir dir("dup", 1);
  run_experiment(dir.config("out"));
  EXPECT_THROW(run_experiment(dir.config("out")), ConfigError);
  EXPECT_NO_THROW(run_experiment(dir.config("out"), true));
}

TEST(Experiment, SameSeedSameBytes) {
  ExperimentDir dir("det");
  run_experiment(dir.config("a"));
  auto parallel = dir.config("b");
  parallel.workers = 2;
  run_experiment(parallel);
  EXPECT_EQ(slurp(dir.root / "a" / "records.jsonl"), slurp(dir.root / "b" / "records.jsonl"));
  EXPECT_EQ(slurp(dir.root / "a" / "summary.json"), slurp(dir.root / "b" / "summary.json"));
}

TEST(Experiment, PersistedRecordsRecomputeSameMetrics) {
  ExperimentDir dir("recompute");
  const auto result = run_experiment(dir.config("out"));
  const auto back = read_records(dir.root / "out" / "records.jsonl");
  ASSERT_EQ(back, result.records);
  EXPECT_EQ(compute_metrics(back), result.summary);
  for (const auto& r : back) {
    ASSERT_TRUE(r.individual.has_value());
    EXPECT_DOUBLE_EQ(r.aoa, occluded_percent(area_of(*r.individual, 32, 32), r.shape));
  }
}

TEST(Experiment, PerPairFailureBecomesErrorRecord) {
  ExperimentDir dir("fail");
  auto config = dir.config("out");
  std::filesystem::remove(dir.root / "tgt1.stv");
  config.texture = TextureKind::GaussianNoise;  // target file no longer needed
  std::ofstream(dir.root / "src1.stv") << "garbage";
  const auto result = run_experiment(config);
  EXPECT_EQ(result.records[1].status, AttackStatus::Error);
  EXPECT_FALSE(result.records[1].error.empty());
  EXPECT_TRUE(result.summary.partial);
  EXPECT_EQ(result.summary.records, 2u);
}

TEST(Experiment, PairSeedsAreStable) {
  EXPECT_EQ(pair_seed(11, 3), derive_seed(11, 3));
  EXPECT_EQ(pair_seed(11, 3), pair_seed(11, 3));
  EXPECT_NE(pair_seed(11, 3), pair_seed(11, 4));
  EXPECT_EQ(pair_seed(0, 0), 0x6E789E6AA1B965F4ULL);
}

TEST(Config, ParseErrors) {
  ExperimentDir dir("cfg", 1);
  auto bad = dir.doc;
  bad["budgett"] = 3;
  EXPECT_THROW(parse_experiment_config(bad, dir.root), ConfigError);
  bad = dir.doc;
  bad["params"]["gama"] = 2;
  EXPECT_THROW(parse_experiment_config(bad, dir.root), ConfigError);
  bad = dir.doc;
  bad["attack"] = "pgd";
  EXPECT_THROW(parse_experiment_config(bad, dir.root), ConfigError);
  bad = dir.doc;
  bad["mode"] = "targeted";
  bad["pairs"][0]["target_label"] = 0;
  EXPECT_THROW(parse_experiment_config(bad, dir.root).validate(), ConfigError);
  bad = dir.doc;
  bad["pairs"][0]["source"] = "nowhere.stv";
  EXPECT_THROW(parse_experiment_config(bad, dir.root).validate(), ConfigError);
}

TEST(Config, ModeDefaultsThenOverrides) {
  ExperimentDir dir("defaults", 1);
  auto doc = dir.doc;
  doc["mode"] = "targeted";
  doc["params"] = {{"gamma", 2}};
  const auto c = parse_experiment_config(doc, dir.root);
  EXPECT_EQ(c.params.budget, 50'000u);
  EXPECT_EQ(c.params.alpha, 2);
  EXPECT_EQ(c.params.gamma, 2);
}

TEST(Config, HashIgnoresWorkersAndOutput) {
  ExperimentDir dir("hash", 1);
  auto a = dir.config("x");
  auto b = dir.config("y");
  b.workers = 4;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 12;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(ToySuite, InstanceProperties) {
  const ToySuiteSpec spec;
  for (std::size_t k = 0; k < 20; ++k) {
    const auto inst = make_toy_instance(spec, k);
    EXPECT_EQ(inst.trigger.region.area(), 64);
    EXPECT_EQ(l0_diff(inst.source, inst.target), inst.source.data().size());
    EXPECT_EQ(make_toy_instance(spec, k).source, inst.source);
  }
  EXPECT_THROW(parse_toy_suite(nlohmann::json{{"region_side", 20}}), ConfigError);
}

TEST(Median, OddAndEven) {
  EXPECT_EQ(median({3, 1, 2}), 2.0);
  EXPECT_EQ(median({4, 1, 3, 2}), 2.5);
  EXPECT_EQ(median({}), 0.0);
}

}  // namespace
}  // namespace stde
