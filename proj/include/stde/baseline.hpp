#pragma once

#include <cstdint>

#include <nlohmann/json_fwd.hpp>

#include "stde/optimizer.hpp"

namespace stde {

/// Pure random search over the same encoding and fitness as STDE.
struct RandomSearchParams {
  double mu = 0.4;
  double cf = 0.6;
  std::uint64_t budget = 10'000;
  std::uint64_t seed = 0;
  double lambda = 1.0;

  SamplerConfig sampler() const { return {mu, cf}; }
  void validate() const;
  /// Sampler, budget, lambda and seed taken from STDE params.
  static RandomSearchParams from(const StdeParams& params);
};

void to_json(nlohmann::json& j, const RandomSearchParams& p);
void from_json(const nlohmann::json& j, RandomSearchParams& p);

/// Checks the clean video (one query), then samples fresh individuals until
/// the budget is spent, keeping the best finite fitness seen.
AttackRecord run_random_search(const AttackGoal& goal, DecisionOracle& oracle, const VideoTensor& source,
                               const VideoTensor& texture, const RandomSearchParams& params);

}  // namespace stde
