#include "stde/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include "stde/rng.hpp"

namespace stde {

namespace {

void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& body) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t k = 0; k < count; ++k) body(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t k = next.fetch_add(1); k < count; k = next.fetch_add(1)) body(k);
    });
  }
  for (auto& t : pool) t.join();
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::string part;
  std::istringstream in(text);
  while (std::getline(in, part, sep)) parts.push_back(part);
  return parts;
}

template <typename T>
T parse_number(const std::string& text, const char* what) {
  try {
    std::size_t used = 0;
    if constexpr (std::is_floating_point_v<T>) {
      const double v = std::stod(text, &used);
      if (used == text.size()) return static_cast<T>(v);
    } else {
      const long long v = std::stoll(text, &used);
      if (used == text.size()) return static_cast<T>(v);
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(std::string("bad ") + what + " '" + text + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "stde") return AttackKind::Stde;
  if (name == "stde_spatial_only") return AttackKind::StdeSpatialOnly;
  if (name == "random_search") return AttackKind::RandomSearch;
  throw ConfigError("unknown attack '" + name + "' (expected stde, stde_spatial_only or random_search)");
}

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::Stde: return "stde";
    case AttackKind::StdeSpatialOnly: return "stde_spatial_only";
    case AttackKind::RandomSearch: return "random_search";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Oracles

nlohmann::json parse_oracle_shorthand(const std::string& text) {
  const auto colon = text.find(':');
  const std::string type = text.substr(0, colon);
  const std::string rest = colon == std::string::npos ? "" : text.substr(colon + 1);
  if (type == "subprocess") {
    if (rest.empty()) throw ConfigError("subprocess oracle needs a command: subprocess:<command>");
    return {{"type", "subprocess"}, {"command", rest}};
  }
  const auto fields = split(rest, ':');
  if (type == "region_trigger") {
    if (fields.size() != 4) {
      throw ConfigError("region_trigger oracle expects region_trigger:x0,y0,x1,y1:coverage:frames:trigger_label");
    }
    const auto coords = split(fields[0], ',');
    if (coords.size() != 4) throw ConfigError("region_trigger rect must be x0,y0,x1,y1");
    nlohmann::json rect = nlohmann::json::array();
    for (const auto& c : coords) rect.push_back(parse_number<int>(c, "rect coordinate"));
    return {{"type", "region_trigger"},
            {"rect", rect},
            {"coverage", parse_number<double>(fields[1], "coverage")},
            {"frames", parse_number<std::size_t>(fields[2], "frame count")},
            {"trigger_label", parse_number<std::uint32_t>(fields[3], "trigger label")}};
  }
  if (type == "linear") {
    if (fields.size() != 2) throw ConfigError("linear oracle expects linear:classes:seed");
    return {{"type", "linear"},
            {"classes", parse_number<std::size_t>(fields[0], "class count")},
            {"seed", parse_number<std::uint64_t>(fields[1], "seed")}};
  }
  throw ConfigError("unknown oracle type '" + type + "' (expected region_trigger, linear or subprocess)");
}

std::unique_ptr<DecisionOracle> make_oracle(const nlohmann::json& spec, const VideoTensor& clean, Label clean_label) {
  try {
    const std::string type = spec.at("type").get<std::string>();
    if (type == "region_trigger") {
      const auto& r = spec.at("rect");
      if (!r.is_array() || r.size() != 4) throw ConfigError("region_trigger rect must be [x0,y0,x1,y1]");
      RegionTriggerSpec rt;
      rt.base = clean_label;
      rt.trigger = Label{spec.at("trigger_label").get<std::uint32_t>()};
      rt.region = Rect{r[0].get<int>(), r[1].get<int>(), r[2].get<int>(), r[3].get<int>()};
      rt.coverage = spec.value("coverage", 0.5);
      rt.frames_required = spec.value("frames", std::size_t{1});
      return std::make_unique<RegionTriggerOracle>(rt, clean);
    }
    if (type == "linear") {
      return LinearPixelOracle::random(clean.shape(), spec.at("classes").get<std::size_t>(),
                                       spec.value("seed", std::uint64_t{0}), spec.value("scale", 1.0f));
    }
    if (type == "subprocess") {
      SubprocessOptions opts;
      opts.command = spec.at("command").get<std::string>();
      if (spec.contains("workdir")) opts.workdir = spec["workdir"].get<std::string>();
      opts.timeout = std::chrono::milliseconds(spec.value("timeout_ms", std::int64_t{60'000}));
      return std::make_unique<SubprocessOracle>(clean.shape(), opts);
    }
    throw ConfigError("unknown oracle type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad oracle spec: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bad oracle spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Metrics

void to_json(nlohmann::json& j, const MetricsSummary& m) {
  j = nlohmann::json{{"fr", m.fr},
                     {"aoa", m.aoa ? nlohmann::json(*m.aoa) : nlohmann::json(nullptr)},
                     {"aoa_star", m.aoa_star ? nlohmann::json(*m.aoa_star) : nlohmann::json(nullptr)},
                     {"aqn", m.aqn},
                     {"records", m.records},
                     {"successes", m.successes},
                     {"partial", m.partial}};
}

void from_json(const nlohmann::json& j, MetricsSummary& m) {
  m.fr = j.at("fr").get<double>();
  m.aoa = j.at("aoa").is_null() ? std::nullopt : std::optional<double>(j["aoa"].get<double>());
  m.aoa_star = j.at("aoa_star").is_null() ? std::nullopt : std::optional<double>(j["aoa_star"].get<double>());
  m.aqn = j.at("aqn").get<double>();
  m.records = j.at("records").get<std::size_t>();
  m.successes = j.at("successes").get<std::size_t>();
  m.partial = j.value("partial", false);
}

MetricsSummary compute_metrics(std::span<const AttackRecord> records, const SaliencyMap* saliency) {
  if (records.empty()) throw std::invalid_argument("compute_metrics: no records");
  const Shape& shape = records.front().shape;
  MetricsSummary m;
  m.records = records.size();
  double aoa_sum = 0.0;
  double star_sum = 0.0;
  std::size_t star_count = 0;
  double queries = 0.0;
  for (const auto& r : records) {
    if (r.shape.frames != shape.frames || r.shape.height != shape.height || r.shape.width != shape.width) {
      throw std::invalid_argument("compute_metrics: records have different video shapes");
    }
    queries += static_cast<double>(r.queries);
    if (r.status == AttackStatus::Aborted || r.status == AttackStatus::Error) m.partial = true;
    if (!r.success) continue;
    ++m.successes;
    aoa_sum += occluded_percent(r.final_area, r.shape);
    if (!saliency || !r.individual) continue;
    const auto it = saliency->find(r.pair_index);
    if (it == saliency->end()) continue;
    const MaskVolume& sal = it->second;
    if (sal.frames() != r.shape.frames || sal.height() != r.shape.height || sal.width() != r.shape.width) {
      throw std::invalid_argument("compute_metrics: saliency mask shape does not match record " +
                                  std::to_string(r.pair_index));
    }
    const std::size_t sal_area = mask_area(sal);
    if (sal_area == 0) {
      throw std::invalid_argument("compute_metrics: empty saliency mask for record " + std::to_string(r.pair_index));
    }
    const MaskVolume patch = synth_mask(*r.individual, r.shape.height, r.shape.width);
    std::size_t overlap = 0;
    for (std::size_t k = 0; k < patch.size(); ++k) overlap += (patch.test_flat(k) && sal.test_flat(k)) ? 1 : 0;
    star_sum += 100.0 * static_cast<double>(overlap) / static_cast<double>(sal_area);
    ++star_count;
  }
  m.fr = 100.0 * static_cast<double>(m.successes) / static_cast<double>(m.records);
  if (m.successes > 0) m.aoa = aoa_sum / static_cast<double>(m.successes);
  if (star_count > 0) m.aoa_star = star_sum / static_cast<double>(star_count);
  m.aqn = queries / static_cast<double>(m.records);
  return m;
}

MaskVolume load_saliency(const std::filesystem::path& path) {
  const VideoTensor v = load_video(path);
  if (v.channels() != 1) throw std::invalid_argument("saliency video must have one channel: " + path.string());
  MaskVolume m(v.frames(), v.height(), v.width());
  const auto data = v.data();
  for (std::size_t k = 0; k < data.size(); ++k) {
    if (data[k] != 0) m.set(k / (v.height() * v.width()), (k / v.width()) % v.height(), k % v.width());
  }
  return m;
}

std::vector<AttackRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<AttackRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      records.push_back(nlohmann::json::parse(line).get<AttackRecord>());
    } catch (const std::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

void write_records(const std::filesystem::path& path, std::span<const AttackRecord> records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& r : records) out << nlohmann::json(r).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Attacks

AttackRecord run_named_attack(AttackKind kind, const AttackGoal& goal, DecisionOracle& oracle,
                              const VideoTensor& source, const VideoTensor& texture, const StdeParams& params) {
  switch (kind) {
    case AttackKind::Stde: return run_attack(goal, oracle, source, texture, params);
    case AttackKind::StdeSpatialOnly: return run_attack_spatial_only(goal, oracle, source, texture, params);
    case AttackKind::RandomSearch:
      return run_random_search(goal, oracle, source, texture, RandomSearchParams::from(params));
  }
  throw std::logic_error("unhandled attack kind");
}

// ---------------------------------------------------------------------------
// Experiments

void ExperimentConfig::validate() const {
  if (pairs.empty()) throw ConfigError("experiment has no pairs");
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (!oracle.is_object() || !oracle.contains("type")) throw ConfigError("experiment needs an oracle spec");
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto& p = pairs[k];
    if (mode == AttackMode::Targeted && p.source_label == p.target_label) {
      throw ConfigError("pair " + std::to_string(k) + ": targeted pairs need different source and target labels");
    }
    if (!std::filesystem::exists(p.source)) throw ConfigError("pair " + std::to_string(k) + ": missing " + p.source.string());
    if (texture == TextureKind::TargetVideo && p.target.empty()) {
      throw ConfigError("pair " + std::to_string(k) + ": no target video (give one or pick a synthetic texture)");
    }
    if (texture == TextureKind::TargetVideo && !std::filesystem::exists(p.target)) {
      throw ConfigError("pair " + std::to_string(k) + ": missing " + p.target.string());
    }
    if (p.saliency && !std::filesystem::exists(*p.saliency)) {
      throw ConfigError("pair " + std::to_string(k) + ": missing " + p.saliency->string());
    }
  }
  try {
    StdeParams check = params;
    check.validate(std::numeric_limits<std::size_t>::max());  // alpha vs T is checked per video
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("bad params: ") + e.what());
  }
}

ExperimentConfig parse_experiment_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  static const char* const kKnown[] = {"attack", "mode", "seed", "workers", "texture", "params", "oracle", "pairs",
                                       "output_dir"};
  try {
    if (!doc.is_object()) throw ConfigError("config must be a JSON object");
    for (const auto& [key, _] : doc.items()) {
      if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
        throw ConfigError("unknown config key '" + key + "'");
      }
    }
    ExperimentConfig c;
    c.attack = parse_attack_kind(doc.value("attack", std::string{"stde"}));
    c.mode = parse_attack_mode(doc.value("mode", std::string{"untargeted"}));
    c.seed = doc.value("seed", std::uint64_t{0});
    c.workers = doc.value("workers", std::size_t{1});
    c.texture = parse_texture_kind(doc.value("texture", std::string{"target"}));
    c.params = StdeParams::defaults(c.mode);
    if (doc.contains("params")) from_json(doc["params"], c.params);
    c.params.seed = c.seed;
    c.oracle = doc.value("oracle", nlohmann::json::object());
    if (c.oracle.is_string()) c.oracle = parse_oracle_shorthand(c.oracle.get<std::string>());
    for (const auto& p : doc.value("pairs", nlohmann::json::array())) {
      VideoPair pair;
      pair.source = resolve(base_dir, p.at("source").get<std::string>());
      pair.source_label = Label{p.at("source_label").get<std::uint32_t>()};
      pair.target = p.contains("target") ? resolve(base_dir, p["target"].get<std::string>()) : std::filesystem::path{};
      pair.target_label = Label{p.value("target_label", std::uint32_t{0})};
      if (p.contains("saliency")) pair.saliency = resolve(base_dir, p["saliency"].get<std::string>());
      c.pairs.push_back(std::move(pair));
    }
    c.output_dir = resolve(base_dir, doc.value("output_dir", std::string{"out"}));
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_experiment_config(doc, std::filesystem::absolute(path).parent_path());
}

nlohmann::json to_json(const ExperimentConfig& c) {
  auto pairs = nlohmann::json::array();
  for (const auto& p : c.pairs) {
    nlohmann::json j{{"source", p.source.string()},
                     {"source_label", p.source_label.id},
                     {"target", p.target.string()},
                     {"target_label", p.target_label.id}};
    if (p.saliency) j["saliency"] = p.saliency->string();
    pairs.push_back(std::move(j));
  }
  return {{"attack", to_string(c.attack)},
          {"mode", to_string(c.mode)},
          {"seed", c.seed},
          {"workers", c.workers},
          {"texture", to_string(c.texture)},
          {"params", c.params},
          {"oracle", c.oracle},
          {"pairs", std::move(pairs)},
          {"output_dir", c.output_dir.string()}};
}

std::string config_hash(const ExperimentConfig& config) {
  nlohmann::json doc = to_json(config);
  // Parallelism and destination do not change results.
  doc.erase("workers");
  doc.erase("output_dir");
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(doc.dump())));
  return buf;
}

std::uint64_t pair_seed(std::uint64_t master, std::size_t index) noexcept { return derive_seed(master, index); }

std::pair<VideoTensor, VideoTensor> load_pair_videos(const ExperimentConfig& config, std::size_t index) {
  const VideoPair& pair = config.pairs.at(index);
  VideoTensor source = load_video(pair.source);
  VideoTensor texture = config.texture == TextureKind::TargetVideo
                            ? load_video(pair.target)
                            : synthesize_texture(config.texture, source.shape(),
                                                 derive_seed(pair_seed(config.seed, index), "texture"));
  return {std::move(source), std::move(texture)};
}

AttackRecord run_pair(const ExperimentConfig& config, std::size_t index) {
  const VideoPair& pair = config.pairs.at(index);
  StdeParams params = config.params;
  params.seed = pair_seed(config.seed, index);

  AttackRecord record;
  try {
    const auto [source, texture] = load_pair_videos(config, index);
    auto oracle = make_oracle(config.oracle, source, pair.source_label);
    const AttackGoal goal = config.mode == AttackMode::Targeted ? AttackGoal::targeted(pair.source_label, pair.target_label)
                                                                : AttackGoal::untargeted(pair.source_label);
    record = run_named_attack(config.attack, goal, *oracle, source, texture, params);
  } catch (const std::exception& e) {
    record = AttackRecord{};
    record.attack = to_string(config.attack);
    record.mode = config.mode;
    record.status = AttackStatus::Error;
    record.seed = params.seed;
    record.params = params;
    record.error = e.what();
  }
  record.source = pair.source.string();
  record.pair_index = index;
  return record;
}

ExperimentResult run_experiment(const ExperimentConfig& config, bool force) {
  config.validate();
  const auto& dir = config.output_dir;
  if (std::filesystem::exists(dir) && !std::filesystem::is_empty(dir) && !force) {
    throw ConfigError("output directory " + dir.string() + " is not empty (use --force to overwrite)");
  }
  std::filesystem::create_directories(dir);

  ExperimentResult result;
  result.records.resize(config.pairs.size());
  parallel_for(config.pairs.size(), config.workers, [&](std::size_t k) { result.records[k] = run_pair(config, k); });

  // Error records have no shape; only well-formed ones enter the metrics
  // shape check, but every record counts toward FR and AQN.
  std::vector<AttackRecord> for_metrics = result.records;
  Shape shape;
  for (const auto& r : for_metrics) {
    if (r.status != AttackStatus::Error) {
      shape = r.shape;
      break;
    }
  }
  for (auto& r : for_metrics) {
    if (r.status == AttackStatus::Error) r.shape = shape;
  }

  SaliencyMap saliency;
  for (std::size_t k = 0; k < config.pairs.size(); ++k) {
    if (config.pairs[k].saliency) saliency.emplace(k, load_saliency(*config.pairs[k].saliency));
  }
  result.summary = compute_metrics(for_metrics, saliency.empty() ? nullptr : &saliency);

  write_records(dir / "records.jsonl", result.records);
  std::ofstream out(dir / "summary.json", std::ios::trunc);
  if (!out) throw IoError("cannot write summary.json");
  out << nlohmann::json{{"attack", to_string(config.attack)},
                        {"mode", to_string(config.mode)},
                        {"config_hash", config_hash(config)},
                        {"metrics", result.summary}}
             .dump(2)
      << '\n';
  return result;
}

// ---------------------------------------------------------------------------
// Toy suite

ToySuiteSpec parse_toy_suite(const nlohmann::json& doc) {
  try {
    ToySuiteSpec s;
    s.instances = doc.value("instances", s.instances);
    s.seed = doc.value("seed", s.seed);
    s.shape.frames = doc.value("frames", s.shape.frames);
    s.shape.height = doc.value("height", s.shape.height);
    s.shape.width = doc.value("width", s.shape.width);
    s.shape.channels = doc.value("channels", s.shape.channels);
    s.region_side = doc.value("region_side", s.region_side);
    s.coverage = doc.value("coverage", s.coverage);
    s.frames_required = doc.value("frames_required", s.frames_required);
    s.mode = parse_attack_mode(doc.value("mode", std::string{"untargeted"}));
    s.trials = doc.value("trials", s.trials);
    s.workers = doc.value("workers", s.workers);
    if (doc.contains("attacks")) {
      s.attacks.clear();
      for (const auto& a : doc["attacks"]) s.attacks.push_back(parse_attack_kind(a.get<std::string>()));
    }
    s.params = doc.value("params", nlohmann::json::object());
    if (s.instances == 0 || s.trials == 0) throw ConfigError("suite needs at least one instance and trial");
    if (s.region_side < 1 || static_cast<std::size_t>(s.region_side) * 2 > std::min(s.shape.height, s.shape.width)) {
      throw ConfigError("region_side must be in [1, min(H, W)/2]");
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed suite: ") + e.what());
  }
}

ToyInstance make_toy_instance(const ToySuiteSpec& spec, std::size_t index) {
  Rng rng(derive_seed(spec.seed, index));
  ToyInstance inst;
  inst.source = VideoTensor(spec.shape);
  for (auto& v : inst.source.data()) v = static_cast<std::uint8_t>(rng.below(256));
  inst.target = inst.source;
  for (auto& v : inst.target.data()) v = static_cast<std::uint8_t>(v + 128);

  // Keep the hidden square in the central band, a quarter of the frame away
  // from each border, so uniform sampling reaches it at a useful rate.
  const int side = spec.region_side;
  auto place = [&](std::size_t extent) {
    const int margin = static_cast<int>(extent) / 4;
    const int hi = std::max(margin, static_cast<int>(extent) - margin - side);
    return static_cast<int>(rng.uniform_int(margin, hi));
  };
  const int x0 = place(spec.shape.width);
  const int y0 = place(spec.shape.height);
  inst.trigger.base = inst.source_label;
  inst.trigger.trigger = inst.target_label;
  inst.trigger.region = Rect{x0, y0, x0 + side, y0 + side};
  inst.trigger.coverage = spec.coverage;
  inst.trigger.frames_required = spec.frames_required;
  inst.trigger.validate(spec.shape);
  return inst;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<BenchResult> run_bench(const ToySuiteSpec& spec) {
  StdeParams base = StdeParams::defaults(spec.mode);
  from_json(spec.params, base);

  std::vector<ToyInstance> instances;
  for (std::size_t k = 0; k < spec.instances; ++k) instances.push_back(make_toy_instance(spec, k));

  std::vector<BenchResult> results;
  for (const AttackKind kind : spec.attacks) {
    BenchResult br{kind, std::vector<AttackRecord>(spec.instances * spec.trials), {}, 0.0};
    parallel_for(br.records.size(), spec.workers, [&](std::size_t k) {
      const std::size_t inst_index = k / spec.trials;
      const ToyInstance& inst = instances[inst_index];
      StdeParams params = base;
      params.seed = derive_seed(derive_seed(spec.seed, inst_index), k % spec.trials);
      RegionTriggerOracle oracle(inst.trigger, inst.source);
      const AttackGoal goal = spec.mode == AttackMode::Targeted ? AttackGoal::targeted(inst.source_label, inst.target_label)
                                                                : AttackGoal::untargeted(inst.source_label);
      br.records[k] = run_named_attack(kind, goal, oracle, inst.source, inst.target, params);
      br.records[k].pair_index = inst_index;
    });
    br.summary = compute_metrics(br.records);
    std::vector<double> areas;
    for (const auto& r : br.records) {
      if (r.success) areas.push_back(static_cast<double>(r.final_area));
    }
    br.median_area = median(std::move(areas));
    results.push_back(std::move(br));
  }
  return results;
}

}  // namespace stde
