#include "stde/baseline.hpp"

#include <nlohmann/json.hpp>

namespace stde {

void RandomSearchParams::validate() const {
  sampler().validate();
  if (budget < 1) throw std::invalid_argument("query budget must be >= 1");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
}

RandomSearchParams RandomSearchParams::from(const StdeParams& params) {
  return {params.mu, params.cf, params.budget, params.seed, params.lambda};
}

void to_json(nlohmann::json& j, const RandomSearchParams& p) {
  j = nlohmann::json{{"mu", p.mu}, {"cf", p.cf}, {"budget", p.budget}, {"seed", p.seed}, {"lambda", p.lambda}};
}

void from_json(const nlohmann::json& j, RandomSearchParams& p) {
  p.mu = j.value("mu", p.mu);
  p.cf = j.value("cf", p.cf);
  p.budget = j.value("budget", p.budget);
  p.seed = j.value("seed", p.seed);
  p.lambda = j.value("lambda", p.lambda);
}

AttackRecord run_random_search(const AttackGoal& goal, DecisionOracle& oracle, const VideoTensor& source,
                               const VideoTensor& texture, const RandomSearchParams& params) {
  goal.validate();
  params.validate();
  const Shape& s = source.shape();
  if (texture.shape() != s) {
    throw CompositionError("texture shape " + to_string(texture.shape()) + " differs from source " + to_string(s));
  }

  AttackRecord record;
  record.attack = "random_search";
  record.mode = goal.mode;
  record.seed = params.seed;
  record.params = params;
  record.shape = s;

  Rng rng = Rng(params.seed).split("init");
  const AttackProblem problem{goal, oracle, source, texture, params.lambda, FitnessNorm::L0};
  const std::uint64_t start = oracle.queries();
  auto spent = [&] { return oracle.queries() - start; };

  std::optional<Individual> best;
  Fitness best_fitness = Fitness::infinite();
  try {
    const Label clean = oracle.query(source);
    record.trajectory.push_back({spent(), Fitness::infinite()});
    if (clean != goal.clean) {
      record.status = AttackStatus::Misclassified;
      record.error = "clean video classified as " + std::to_string(clean.id) + ", expected " +
                     std::to_string(goal.clean.id);
      record.queries = spent();
      return record;
    }
    while (spent() < params.budget) {
      Individual candidate = sample_individual(rng, s.frames, s.height, s.width, params.sampler());
      const Fitness f = fitness(problem, candidate);
      if (f < best_fitness) {
        best_fitness = f;
        best = std::move(candidate);
        record.trajectory.push_back({spent(), best_fitness});
      }
    }
  } catch (const TransportError& e) {
    record.status = AttackStatus::Aborted;
    record.error = e.what();
  }

  record.queries = spent();
  if (best) {
    finalize_record(record, *best, best_fitness, source, texture);
    record.success = true;
  }
  if (record.trajectory.empty() || record.trajectory.back().queries != record.queries) {
    record.trajectory.push_back({record.queries, best_fitness});
  }
  return record;
}

}  // namespace stde
