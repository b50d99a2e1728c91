#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stde/encoding.hpp"
#include "stde/oracle.hpp"
#include "stde/record.hpp"
#include "stde/rng.hpp"
#include "stde/video.hpp"

namespace stde {

/// Area term of the fitness: patch cell count, or the Euclidean pixel
/// distance (norm ablation).
enum class FitnessNorm { L0, L2 };

FitnessNorm parse_fitness_norm(const std::string& name);
std::string to_string(FitnessNorm norm);

struct StdeParams {
  std::size_t population = 15;
  double mu = 0.4;
  double cf = 0.6;
  int gamma = 1;
  int alpha = 1;
  double lambda = 1.0;
  std::uint64_t budget = 10'000;
  double epsilon = 0.0;
  std::uint64_t seed = 0;
  std::size_t init_retry_budget = 1'000;
  bool crossover = true;
  FitnessNorm norm = FitnessNorm::L0;

  /// Untargeted: Q=10,000, cf=0.6, alpha=1. Targeted: Q=50,000, cf=0.7,
  /// alpha=2. Shared: N=15, mu=0.4, gamma=1, lambda=1.0.
  static StdeParams defaults(AttackMode mode);

  SamplerConfig sampler() const { return {mu, cf}; }
  /// Throws std::invalid_argument. `frames` bounds alpha.
  void validate(std::size_t frames) const;
};

void to_json(nlohmann::json& j, const StdeParams& p);
/// Missing keys keep the values already in `p`.
void from_json(const nlohmann::json& j, StdeParams& p);

/// Population could not be filled; carries nothing but the reason, the
/// query count lives in the oracle.
class InitializationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Sum over consecutive keyframe pairs (frame order, non-keyframes skipped)
/// of the overlap area of their rectangles.
std::size_t temporal_intersection(const Individual& individual, std::size_t height, std::size_t width);

/// Offline part of the fitness: area - lambda * temporal_intersection.
double l0_score(const Individual& individual, std::size_t height, std::size_t width, double lambda);

/// Everything a fitness evaluation needs besides the candidate.
struct AttackProblem {
  AttackGoal goal;
  DecisionOracle& oracle;
  const VideoTensor& source;
  const VideoTensor& texture;
  double lambda = 1.0;
  FitnessNorm norm = FitnessNorm::L0;
};

/// +inf without a query if the candidate rasterizes to nothing; otherwise
/// one query, and the area score when the goal holds, +inf when not.
Fitness fitness(const AttackProblem& problem, const Individual& individual);

/// P_best + gamma * (P_i - P_j) and FK_best & (FK_i | FK_j), unrepaired.
Individual differential_mutation(const Individual& best, const Individual& i, const Individual& j, int gamma);

/// differential_mutation followed by repair.
Individual mutate(const Individual& best, const Individual& i, const Individual& j, int gamma, std::size_t height,
                  std::size_t width);

/// Adds gamma * k, k uniform in {-1, 0, 1}, to every coordinate; repairs.
Individual s_cross(Individual individual, int gamma, Rng& rng, std::size_t height, std::size_t width);

/// Flips exactly `alpha` distinct keyframe bits chosen uniformly.
Individual t_cross(Individual individual, int alpha, Rng& rng);

struct PopulationState {
  std::vector<Individual> members;
  std::vector<Fitness> fitness;
  std::vector<TrajectoryPoint> trajectory;

  std::size_t size() const noexcept { return members.size(); }
  /// Index of the smallest fitness (first on ties).
  std::size_t best() const;
  /// Index of the largest fitness (first on ties).
  std::size_t worst() const;
  Fitness best_fitness() const { return fitness[best()]; }
};

/// Replaces the worst member iff `candidate_fitness` is strictly smaller.
bool select(PopulationState& state, Individual candidate, Fitness candidate_fitness);

/// Per-step log used by tests and diagnostics.
struct MutationEvent {
  std::size_t best_keyframes = 0;
  std::size_t mutated_keyframes = 0;  // after mutate, before t_cross
};

struct EvaluationEvent {
  bool queried = false;
  Fitness fitness;
  bool replaced = false;
  Fitness best_after;
  std::size_t population_size = 0;
  std::uint64_t queries_after = 0;
};

struct AttackTrace {
  std::uint64_t clean_check_queries = 0;
  std::uint64_t init_queries = 0;
  std::uint64_t init_attempts = 0;
  std::uint64_t loop_queries = 0;
  std::uint64_t short_circuits = 0;
  std::vector<MutationEvent> mutations;
  std::vector<EvaluationEvent> evaluations;
  PopulationState final_population;
};

/// Samples until N adversarial members are found. Throws
/// InitializationError when a slot exhausts `init_retry_budget` attempts or
/// the oracle's counter reaches the query budget.
PopulationState init_population(const AttackProblem& problem, const StdeParams& params, Rng& rng,
                                AttackTrace* trace = nullptr);

/// Full spatial-temporal evolution. The clean video is checked first (one
/// query); transport errors abort with the partial record.
AttackRecord run_attack(const AttackGoal& goal, DecisionOracle& oracle, const VideoTensor& source,
                        const VideoTensor& texture, const StdeParams& params, AttackTrace* trace = nullptr);

/// Spatial-only variant: keyframe vectors stay as initialized; temporal
/// mutation and t_cross are skipped.
AttackRecord run_attack_spatial_only(const AttackGoal& goal, DecisionOracle& oracle, const VideoTensor& source,
                                     const VideoTensor& texture, const StdeParams& params,
                                     AttackTrace* trace = nullptr);

/// Fills area, AOA, keyframe count, l0 and fitness from `best`.
void finalize_record(AttackRecord& record, const Individual& best, Fitness best_fitness, const VideoTensor& source,
                     const VideoTensor& texture);

}  // namespace stde
