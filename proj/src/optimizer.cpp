#include "stde/optimizer.hpp"

#include <algorithm>
#include <numeric>

#include <nlohmann/json.hpp>

namespace stde {

namespace {

// Loop iterations in a row whose candidate rasterized to nothing before
// the attack is declared stalled. Such iterations cost no queries, so the
// budget alone cannot end them.
constexpr std::size_t kMaxConsecutiveEmpty = 100'000;

}  // namespace

FitnessNorm parse_fitness_norm(const std::string& name) {
  if (name == "l0") return FitnessNorm::L0;
  if (name == "l2") return FitnessNorm::L2;
  throw std::invalid_argument("unknown fitness norm '" + name + "' (expected l0 or l2)");
}

std::string to_string(FitnessNorm norm) { return norm == FitnessNorm::L2 ? "l2" : "l0"; }

StdeParams StdeParams::defaults(AttackMode mode) {
  StdeParams p;
  if (mode == AttackMode::Targeted) {
    p.budget = 50'000;
    p.cf = 0.7;
    p.alpha = 2;
  }
  return p;
}

void StdeParams::validate(std::size_t frames) const {
  if (population < 4) throw std::invalid_argument("population size must be >= 4");
  sampler().validate();
  if (gamma < 1) throw std::invalid_argument("gamma must be an integer >= 1");
  if (alpha < 0) throw std::invalid_argument("alpha must be >= 0");
  if (static_cast<std::size_t>(alpha) > frames) throw std::invalid_argument("alpha cannot exceed the frame count");
  if (!(lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  if (budget < 1) throw std::invalid_argument("query budget must be >= 1");
  if (init_retry_budget < 1) throw std::invalid_argument("init retry budget must be >= 1");
}

void to_json(nlohmann::json& j, const StdeParams& p) {
  j = nlohmann::json{{"population", p.population},
                     {"mu", p.mu},
                     {"cf", p.cf},
                     {"gamma", p.gamma},
                     {"alpha", p.alpha},
                     {"lambda", p.lambda},
                     {"budget", p.budget},
                     {"epsilon", p.epsilon},
                     {"seed", p.seed},
                     {"init_retry_budget", p.init_retry_budget},
                     {"crossover", p.crossover},
                     {"norm", to_string(p.norm)}};
}

void from_json(const nlohmann::json& j, StdeParams& p) {
  if (!j.is_object()) throw std::invalid_argument("params must be a JSON object");
  static const char* const kKnown[] = {"population", "mu",   "cf",   "gamma",           "alpha",
                                       "lambda",     "budget", "epsilon", "seed", "init_retry_budget",
                                       "crossover",  "norm"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown)) {
      throw std::invalid_argument("unknown params key '" + key + "'");
    }
  }
  p.population = j.value("population", p.population);
  p.mu = j.value("mu", p.mu);
  p.cf = j.value("cf", p.cf);
  p.gamma = j.value("gamma", p.gamma);
  p.alpha = j.value("alpha", p.alpha);
  p.lambda = j.value("lambda", p.lambda);
  p.budget = j.value("budget", p.budget);
  p.epsilon = j.value("epsilon", p.epsilon);
  p.seed = j.value("seed", p.seed);
  p.init_retry_budget = j.value("init_retry_budget", p.init_retry_budget);
  p.crossover = j.value("crossover", p.crossover);
  if (j.contains("norm")) p.norm = parse_fitness_norm(j["norm"].get<std::string>());
}

std::size_t temporal_intersection(const Individual& individual, std::size_t height, std::size_t width) {
  std::size_t total = 0;
  const Rect* previous = nullptr;
  Rect prev_rect;
  for (std::size_t t = 0; t < individual.frames(); ++t) {
    if (!individual.fk[t]) continue;
    const Rect r = repair(individual.rects[t], height, width);
    if (previous) total += static_cast<std::size_t>(intersection_area(prev_rect, r));
    prev_rect = r;
    previous = &prev_rect;
  }
  return total;
}

double l0_score(const Individual& individual, std::size_t height, std::size_t width, double lambda) {
  return static_cast<double>(area_of(individual, height, width)) -
         lambda * static_cast<double>(temporal_intersection(individual, height, width));
}

Fitness fitness(const AttackProblem& problem, const Individual& individual) {
  const Shape& s = problem.source.shape();
  if (area_of(individual, s.height, s.width) == 0) return Fitness::infinite();
  const MaskVolume mask = synth_mask(individual, s.height, s.width);
  const VideoTensor adversarial = compose(problem.source, problem.texture, mask);
  const Label label = problem.oracle.query(adversarial);
  if (!problem.goal.satisfied_by(label)) return Fitness::infinite();
  const double it = static_cast<double>(temporal_intersection(individual, s.height, s.width));
  if (problem.norm == FitnessNorm::L2) return Fitness{l2_diff(problem.source, adversarial) - problem.lambda * it};
  return Fitness{static_cast<double>(mask_area(mask)) - problem.lambda * it};
}

Individual differential_mutation(const Individual& best, const Individual& i, const Individual& j, int gamma) {
  const std::size_t frames = best.frames();
  if (i.frames() != frames || j.frames() != frames) throw std::invalid_argument("mutation: frame counts differ");
  Individual out;
  out.rects.resize(frames);
  out.fk.resize(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    const Rect& b = best.rects[t];
    const Rect& p = i.rects[t];
    const Rect& q = j.rects[t];
    out.rects[t] = Rect{b.x0 + gamma * (p.x0 - q.x0), b.y0 + gamma * (p.y0 - q.y0), b.x1 + gamma * (p.x1 - q.x1),
                        b.y1 + gamma * (p.y1 - q.y1)};
    out.fk[t] = best.fk[t] && (i.fk[t] || j.fk[t]);
  }
  return out;
}

Individual mutate(const Individual& best, const Individual& i, const Individual& j, int gamma, std::size_t height,
                  std::size_t width) {
  return repair(differential_mutation(best, i, j, gamma), height, width);
}

Individual s_cross(Individual individual, int gamma, Rng& rng, std::size_t height, std::size_t width) {
  auto noise = [&] { return gamma * static_cast<int>(rng.uniform_int(-1, 1)); };
  for (auto& r : individual.rects) {
    r.x0 += noise();
    r.y0 += noise();
    r.x1 += noise();
    r.y1 += noise();
  }
  return repair(std::move(individual), height, width);
}

Individual t_cross(Individual individual, int alpha, Rng& rng) {
  const std::size_t frames = individual.frames();
  if (alpha < 0 || static_cast<std::size_t>(alpha) > frames) {
    throw std::invalid_argument("t_cross: alpha must be in [0, T]");
  }
  std::vector<std::size_t> order(frames);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t k = 0; k < static_cast<std::size_t>(alpha); ++k) {
    const auto pick = k + static_cast<std::size_t>(rng.below(frames - k));
    std::swap(order[k], order[pick]);
    individual.fk[order[k]] = !individual.fk[order[k]];
  }
  return individual;
}

std::size_t PopulationState::best() const {
  if (fitness.empty()) throw std::logic_error("empty population");
  return static_cast<std::size_t>(std::min_element(fitness.begin(), fitness.end()) - fitness.begin());
}

std::size_t PopulationState::worst() const {
  if (fitness.empty()) throw std::logic_error("empty population");
  // First maximum, so ties resolve to the lowest index like best().
  std::size_t w = 0;
  for (std::size_t k = 1; k < fitness.size(); ++k) {
    if (fitness[k] > fitness[w]) w = k;
  }
  return w;
}

bool select(PopulationState& state, Individual candidate, Fitness candidate_fitness) {
  const std::size_t w = state.worst();
  if (!(candidate_fitness < state.fitness[w])) return false;
  state.members[w] = std::move(candidate);
  state.fitness[w] = candidate_fitness;
  return true;
}

PopulationState init_population(const AttackProblem& problem, const StdeParams& params, Rng& rng, AttackTrace* trace) {
  const Shape& s = problem.source.shape();
  const SamplerConfig sampler = params.sampler();
  PopulationState state;
  const std::uint64_t before = problem.oracle.queries();
  for (std::size_t slot = 0; slot < params.population; ++slot) {
    bool filled = false;
    for (std::size_t attempt = 0; attempt < params.init_retry_budget; ++attempt) {
      if (problem.oracle.queries() >= params.budget) {
        throw InitializationError("query budget exhausted while initializing slot " + std::to_string(slot));
      }
      Individual candidate = sample_individual(rng, s.frames, s.height, s.width, sampler);
      const Fitness f = fitness(problem, candidate);
      if (trace) ++trace->init_attempts;
      if (f.finite()) {
        state.members.push_back(std::move(candidate));
        state.fitness.push_back(f);
        filled = true;
        break;
      }
    }
    if (trace) trace->init_queries = problem.oracle.queries() - before;
    if (!filled) {
      throw InitializationError("slot " + std::to_string(slot) + " found no adversarial sample in " +
                                std::to_string(params.init_retry_budget) + " attempts");
    }
  }
  state.trajectory.push_back({problem.oracle.queries(), state.best_fitness()});
  return state;
}

void finalize_record(AttackRecord& record, const Individual& best, Fitness best_fitness, const VideoTensor& source,
                     const VideoTensor& texture) {
  const Shape& s = source.shape();
  record.individual = best;
  record.fitness = best_fitness;
  record.final_area = area_of(best, s.height, s.width);
  record.aoa = occluded_percent(record.final_area, s);
  record.keyframes = keyframe_count(best);
  record.l0 = l0_diff(compose(source, texture, synth_mask(best, s.height, s.width)), source);
}

namespace {

AttackRecord evolve(const AttackGoal& goal, DecisionOracle& oracle, const VideoTensor& source,
                    const VideoTensor& texture, const StdeParams& params, bool temporal, AttackTrace* trace) {
  goal.validate();
  const Shape& s = source.shape();
  params.validate(s.frames);
  if (texture.shape() != s) {
    throw CompositionError("texture shape " + to_string(texture.shape()) + " differs from source " + to_string(s));
  }

  AttackRecord record;
  record.attack = temporal ? "stde" : "stde_spatial_only";
  record.mode = goal.mode;
  record.seed = params.seed;
  record.params = params;
  record.shape = s;

  const Rng root(params.seed);
  Rng init_rng = root.split("init");
  Rng mutation_rng = root.split("mutation");
  Rng crossover_rng = root.split("crossover");

  const AttackProblem problem{goal, oracle, source, texture, params.lambda, params.norm};
  const std::uint64_t start = oracle.queries();
  auto spent = [&] { return oracle.queries() - start; };

  PopulationState state;
  bool initialized = false;
  try {
    const Label clean = oracle.query(source);
    if (trace) trace->clean_check_queries = 1;
    record.trajectory.push_back({spent(), Fitness::infinite()});
    if (clean != goal.clean) {
      record.status = AttackStatus::Misclassified;
      record.error = "clean video classified as " + std::to_string(clean.id) + ", expected " +
                     std::to_string(goal.clean.id);
      record.queries = spent();
      return record;
    }

    // The budget covers the clean check, so init sees it as already spent.
    StdeParams init_params = params;
    init_params.budget = params.budget + start;
    state = init_population(problem, init_params, init_rng, trace);
    initialized = true;
    record.trajectory.push_back({spent(), state.best_fitness()});

    std::size_t consecutive_empty = 0;
    while (state.best_fitness().value > params.epsilon && spent() < params.budget) {
      const std::size_t best = state.best();

      // i != j, both != best; worst may be drawn.
      std::vector<std::size_t> others;
      others.reserve(state.size() - 1);
      for (std::size_t k = 0; k < state.size(); ++k) {
        if (k != best) others.push_back(k);
      }
      const auto a = static_cast<std::size_t>(mutation_rng.below(others.size()));
      std::swap(others[a], others.back());
      const std::size_t i = others.back();
      others.pop_back();
      const std::size_t j = others[static_cast<std::size_t>(mutation_rng.below(others.size()))];

      const Individual& base = state.members[best];
      Individual candidate = mutate(base, state.members[i], state.members[j], params.gamma, s.height, s.width);
      if (!temporal) candidate.fk = base.fk;
      if (trace) trace->mutations.push_back({keyframe_count(base), keyframe_count(candidate)});
      if (params.crossover) {
        candidate = s_cross(std::move(candidate), params.gamma, crossover_rng, s.height, s.width);
        if (temporal) candidate = t_cross(std::move(candidate), params.alpha, crossover_rng);
      }

      const std::uint64_t before = oracle.queries();
      const Fitness f = fitness(problem, candidate);
      const bool queried = oracle.queries() != before;
      const Fitness previous_best = state.best_fitness();
      const bool replaced = select(state, std::move(candidate), f);
      const Fitness best_after = state.best_fitness();
      if (best_after < previous_best) record.trajectory.push_back({spent(), best_after});

      if (trace) {
        (queried ? trace->loop_queries : trace->short_circuits) += 1;
        trace->evaluations.push_back({queried, f, replaced, best_after, state.size(), oracle.queries()});
      }
      consecutive_empty = queried ? 0 : consecutive_empty + 1;
      if (consecutive_empty >= kMaxConsecutiveEmpty) {
        record.status = AttackStatus::Stalled;
        record.error = "candidates rasterized to empty masks " + std::to_string(kMaxConsecutiveEmpty) +
                       " times in a row";
        break;
      }
    }
  } catch (const InitializationError& e) {
    record.status = AttackStatus::InitFailed;
    record.error = e.what();
    record.queries = spent();
    return record;
  } catch (const TransportError& e) {
    record.status = AttackStatus::Aborted;
    record.error = e.what();
    record.queries = spent();
    if (initialized) {
      const std::size_t best = state.best();
      finalize_record(record, state.members[best], state.fitness[best], source, texture);
      record.success = state.fitness[best].finite();
    }
    if (trace) trace->final_population = state;
    return record;
  }

  record.queries = spent();
  const std::size_t best = state.best();
  finalize_record(record, state.members[best], state.fitness[best], source, texture);
  record.success = state.fitness[best].finite();
  if (record.trajectory.back().queries != record.queries) {
    record.trajectory.push_back({record.queries, state.best_fitness()});
  }
  if (trace) trace->final_population = std::move(state);
  return record;
}

}  // namespace

AttackRecord run_attack(const AttackGoal& goal, DecisionOracle& oracle, const VideoTensor& source,
                        const VideoTensor& texture, const StdeParams& params, AttackTrace* trace) {
  return evolve(goal, oracle, source, texture, params, true, trace);
}

AttackRecord run_attack_spatial_only(const AttackGoal& goal, DecisionOracle& oracle, const VideoTensor& source,
                                     const VideoTensor& texture, const StdeParams& params, AttackTrace* trace) {
  return evolve(goal, oracle, source, texture, params, false, trace);
}

}  // namespace stde
