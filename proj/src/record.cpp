#include "stde/record.hpp"

#include <stdexcept>

namespace stde {

AttackMode parse_attack_mode(const std::string& name) {
  if (name == "untargeted") return AttackMode::Untargeted;
  if (name == "targeted") return AttackMode::Targeted;
  throw std::invalid_argument("unknown mode '" + name + "' (expected untargeted or targeted)");
}

std::string to_string(AttackMode mode) { return mode == AttackMode::Targeted ? "targeted" : "untargeted"; }

void AttackGoal::validate() const {
  if (mode == AttackMode::Targeted && target == clean) {
    throw std::invalid_argument("targeted attack needs a target label different from the clean label");
  }
}

std::string to_string(AttackStatus status) {
  switch (status) {
    case AttackStatus::Completed: return "completed";
    case AttackStatus::Misclassified: return "misclassified";
    case AttackStatus::InitFailed: return "init_failed";
    case AttackStatus::Aborted: return "aborted";
    case AttackStatus::Stalled: return "stalled";
    case AttackStatus::Error: return "error";
  }
  return "unknown";
}

AttackStatus parse_attack_status(const std::string& name) {
  for (auto s : {AttackStatus::Completed, AttackStatus::Misclassified, AttackStatus::InitFailed,
                 AttackStatus::Aborted, AttackStatus::Stalled, AttackStatus::Error}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown attack status '" + name + "'");
}

double occluded_percent(std::size_t area, const Shape& shape) noexcept {
  const auto cells = shape.cells();
  return cells == 0 ? 0.0 : 100.0 * static_cast<double>(area) / static_cast<double>(cells);
}

namespace {

nlohmann::json fitness_json(Fitness f) { return f.finite() ? nlohmann::json(f.value) : nlohmann::json(nullptr); }

Fitness fitness_from(const nlohmann::json& j) { return j.is_null() ? Fitness::infinite() : Fitness{j.get<double>()}; }

}  // namespace

void to_json(nlohmann::json& j, const AttackRecord& r) {
  auto trajectory = nlohmann::json::array();
  for (const auto& p : r.trajectory) trajectory.push_back({p.queries, fitness_json(p.best)});
  j = nlohmann::json{
      {"attack", r.attack},
      {"mode", to_string(r.mode)},
      {"status", to_string(r.status)},
      {"success", r.success},
      {"queries", r.queries},
      {"final_area", r.final_area},
      {"aoa", r.aoa},
      {"keyframes", r.keyframes},
      {"fitness", fitness_json(r.fitness)},
      {"l0", r.l0},
      {"seed", r.seed},
      {"params", r.params},
      {"shape", {r.shape.frames, r.shape.height, r.shape.width, r.shape.channels}},
      {"trajectory", std::move(trajectory)},
      {"individual", r.individual ? nlohmann::json(*r.individual) : nlohmann::json(nullptr)},
      {"pair_index", r.pair_index},
  };
  if (!r.source.empty()) j["source"] = r.source;
  if (!r.error.empty()) j["error"] = r.error;
}

void from_json(const nlohmann::json& j, AttackRecord& r) {
  r.attack = j.at("attack").get<std::string>();
  r.mode = parse_attack_mode(j.at("mode").get<std::string>());
  r.status = parse_attack_status(j.at("status").get<std::string>());
  r.success = j.at("success").get<bool>();
  r.queries = j.at("queries").get<std::uint64_t>();
  r.final_area = j.at("final_area").get<std::size_t>();
  r.aoa = j.at("aoa").get<double>();
  r.keyframes = j.at("keyframes").get<std::size_t>();
  r.fitness = fitness_from(j.at("fitness"));
  r.l0 = j.value("l0", std::size_t{0});
  r.seed = j.at("seed").get<std::uint64_t>();
  r.params = j.value("params", nlohmann::json::object());
  const auto& shape = j.at("shape");
  if (!shape.is_array() || shape.size() != 4) throw std::invalid_argument("record shape must be [T,H,W,C]");
  r.shape = Shape{shape[0].get<std::size_t>(), shape[1].get<std::size_t>(), shape[2].get<std::size_t>(),
                  shape[3].get<std::size_t>()};
  r.trajectory.clear();
  for (const auto& p : j.at("trajectory")) {
    r.trajectory.push_back({p.at(0).get<std::uint64_t>(), fitness_from(p.at(1))});
  }
  if (const auto& ind = j.at("individual"); ind.is_null()) {
    r.individual.reset();
  } else {
    r.individual = ind.get<Individual>();
  }
  r.pair_index = j.value("pair_index", std::size_t{0});
  r.source = j.value("source", std::string{});
  r.error = j.value("error", std::string{});
}

}  // namespace stde
