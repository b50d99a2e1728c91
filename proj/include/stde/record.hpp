#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "stde/encoding.hpp"
#include "stde/oracle.hpp"
#include "stde/video.hpp"

namespace stde {

enum class AttackMode { Untargeted, Targeted };

AttackMode parse_attack_mode(const std::string& name);
std::string to_string(AttackMode mode);

/// What counts as adversarial: any label other than `clean` (untargeted) or
/// exactly `target` (targeted).
struct AttackGoal {
  AttackMode mode = AttackMode::Untargeted;
  Label clean;
  Label target;

  static AttackGoal untargeted(Label clean) { return {AttackMode::Untargeted, clean, {}}; }
  static AttackGoal targeted(Label clean, Label target) { return {AttackMode::Targeted, clean, target}; }

  void validate() const;
  bool satisfied_by(Label label) const noexcept {
    return mode == AttackMode::Untargeted ? label != clean : label == target;
  }
};

/// Lower is better; +inf means the candidate was not adversarial.
struct Fitness {
  double value = std::numeric_limits<double>::infinity();

  static Fitness infinite() noexcept { return {}; }
  bool finite() const noexcept { return value != std::numeric_limits<double>::infinity(); }
  friend auto operator<=>(const Fitness&, const Fitness&) = default;
};

enum class AttackStatus {
  Completed,      // loop ran to budget or epsilon
  Misclassified,  // clean video did not carry the clean label
  InitFailed,     // population could not be filled with adversarial members
  Aborted,        // oracle transport failure; partial results
  Stalled,        // candidates kept rasterizing to nothing
  Error,          // the pair could not be set up (bad file, bad oracle spec)
};

std::string to_string(AttackStatus status);
AttackStatus parse_attack_status(const std::string& name);

struct TrajectoryPoint {
  std::uint64_t queries = 0;
  Fitness best;
  friend bool operator==(const TrajectoryPoint&, const TrajectoryPoint&) = default;
};

/// Outcome of one attack. Serialized as one JSON object per line.
struct AttackRecord {
  std::string attack;  // stde | stde_spatial_only | random_search
  AttackMode mode = AttackMode::Untargeted;
  AttackStatus status = AttackStatus::Completed;
  bool success = false;
  std::uint64_t queries = 0;
  std::size_t final_area = 0;
  double aoa = 0.0;
  std::size_t keyframes = 0;
  Fitness fitness;
  std::size_t l0 = 0;  // element-level difference of the final video
  std::uint64_t seed = 0;
  nlohmann::json params = nlohmann::json::object();
  std::vector<TrajectoryPoint> trajectory;
  std::optional<Individual> individual;
  Shape shape;
  std::string error;
  std::string source;  // empty when not run from an experiment
  std::size_t pair_index = 0;

  friend bool operator==(const AttackRecord&, const AttackRecord&) = default;
};

void to_json(nlohmann::json& j, const AttackRecord& record);
void from_json(const nlohmann::json& j, AttackRecord& record);

/// Percentage of the T*H*W volume covered by `area` cells.
double occluded_percent(std::size_t area, const Shape& shape) noexcept;

}  // namespace stde
