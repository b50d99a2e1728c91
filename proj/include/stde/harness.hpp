#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stde/baseline.hpp"
#include "stde/optimizer.hpp"

namespace stde {

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class AttackKind { Stde, StdeSpatialOnly, RandomSearch };

AttackKind parse_attack_kind(const std::string& name);
std::string to_string(AttackKind kind);

// ---------------------------------------------------------------------------
// Oracle specs
//
// JSON forms:
//   {"type":"region_trigger","rect":[x0,y0,x1,y1],"coverage":0.5,"frames":2,"trigger_label":1}
//   {"type":"linear","classes":K,"seed":S,"scale":1.0}
//   {"type":"subprocess","command":"...","workdir":"...","timeout_ms":60000}
// CLI shorthand:
//   region_trigger:x0,y0,x1,y1:coverage:frames:trigger_label
//   linear:classes:seed
//   subprocess:<shell command>

nlohmann::json parse_oracle_shorthand(const std::string& text);

/// Builds an oracle for one (clean video, clean label) pair. Region-trigger
/// oracles register `clean` as their reference and `clean_label` as base.
std::unique_ptr<DecisionOracle> make_oracle(const nlohmann::json& spec, const VideoTensor& clean, Label clean_label);

// ---------------------------------------------------------------------------
// Metrics

struct MetricsSummary {
  double fr = 0.0;
  std::optional<double> aoa;
  std::optional<double> aoa_star;
  double aqn = 0.0;
  std::size_t records = 0;
  std::size_t successes = 0;
  bool partial = false;  // some attack aborted or could not be set up

  friend bool operator==(const MetricsSummary&, const MetricsSummary&) = default;
};

void to_json(nlohmann::json& j, const MetricsSummary& m);
void from_json(const nlohmann::json& j, MetricsSummary& m);

/// Saliency masks keyed by record pair_index.
using SaliencyMap = std::map<std::size_t, MaskVolume>;

/// FR over all records, AOA over successful ones, AOA* over successful ones
/// that have a saliency mask (absent if none), AQN over all records.
MetricsSummary compute_metrics(std::span<const AttackRecord> records, const SaliencyMap* saliency = nullptr);

/// Single-channel ".stv" saliency video; nonzero samples are salient.
MaskVolume load_saliency(const std::filesystem::path& path);

std::vector<AttackRecord> read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, std::span<const AttackRecord> records);

// ---------------------------------------------------------------------------
// Single attacks

/// Dispatches to the attack named by `kind`, using `params` (random search
/// takes its sampler, budget, lambda and seed from them).
AttackRecord run_named_attack(AttackKind kind, const AttackGoal& goal, DecisionOracle& oracle,
                              const VideoTensor& source, const VideoTensor& texture, const StdeParams& params);

// ---------------------------------------------------------------------------
// Experiments

struct VideoPair {
  std::filesystem::path source;
  Label source_label;
  std::filesystem::path target;
  Label target_label;
  std::optional<std::filesystem::path> saliency;
};

struct ExperimentConfig {
  AttackKind attack = AttackKind::Stde;
  AttackMode mode = AttackMode::Untargeted;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  TextureKind texture = TextureKind::TargetVideo;
  StdeParams params;  // mode defaults + overrides; seed replaced per pair
  nlohmann::json oracle;
  std::vector<VideoPair> pairs;
  std::filesystem::path output_dir;

  void validate() const;
};

/// Parses the JSON document. Relative paths resolve against `base_dir`.
/// `params` overrides apply on top of the mode defaults.
ExperimentConfig parse_experiment_config(const nlohmann::json& doc, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

/// Hex FNV-1a of the canonical config dump.
std::string config_hash(const ExperimentConfig& config);

/// Seed handed to pair `index`: derive_seed(master, index).
std::uint64_t pair_seed(std::uint64_t master, std::size_t index) noexcept;

struct ExperimentResult {
  std::vector<AttackRecord> records;
  MetricsSummary summary;
};

/// Runs one attack per pair (up to `workers` in parallel), writes
/// records.jsonl and summary.json into the output directory. Refuses a
/// non-empty output directory unless `force`.
ExperimentResult run_experiment(const ExperimentConfig& config, bool force = false);

/// Source video and patch texture for pair `index`, as the attack sees them.
std::pair<VideoTensor, VideoTensor> load_pair_videos(const ExperimentConfig& config, std::size_t index);

/// Runs the attack for pair `index` alone; never throws for per-pair
/// problems (they become an error record).
AttackRecord run_pair(const ExperimentConfig& config, std::size_t index);

// ---------------------------------------------------------------------------
// Synthetic region-trigger suite

struct ToySuiteSpec {
  std::size_t instances = 20;
  std::uint64_t seed = 1;
  Shape shape{8, 32, 32, 3};
  int region_side = 8;
  double coverage = 0.5;
  std::size_t frames_required = 2;
  AttackMode mode = AttackMode::Untargeted;
  std::size_t trials = 1;
  std::vector<AttackKind> attacks{AttackKind::Stde, AttackKind::StdeSpatialOnly, AttackKind::RandomSearch};
  nlohmann::json params = nlohmann::json::object();
  std::size_t workers = 1;
};

ToySuiteSpec parse_toy_suite(const nlohmann::json& doc);

/// Random source video, a target that differs from it at every sample, and a
/// hidden square placed away from the frame border.
struct ToyInstance {
  VideoTensor source;
  VideoTensor target;
  RegionTriggerSpec trigger;
  Label source_label{0};
  Label target_label{1};
};

ToyInstance make_toy_instance(const ToySuiteSpec& spec, std::size_t index);

struct BenchResult {
  AttackKind attack;
  std::vector<AttackRecord> records;
  MetricsSummary summary;
  double median_area = 0.0;  // over successful records
};

std::vector<BenchResult> run_bench(const ToySuiteSpec& spec);

/// Median of `values` (mean of the middle pair for even sizes); 0 if empty.
double median(std::vector<double> values);

}  // namespace stde
