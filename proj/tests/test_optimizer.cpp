#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "stde/harness.hpp"
#include "stde/optimizer.hpp"
#include "test_support.hpp"

namespace stde {
namespace {

using testing::ConstantOracle;
using testing::random_video;

struct Fixture {
  VideoTensor source;
  VideoTensor texture;
  ConstantOracle oracle;
  AttackProblem problem;

  explicit Fixture(Shape shape, AttackGoal goal = AttackGoal::untargeted(Label{0}))
      : source(shape, std::uint8_t{0}),
        texture(shape, std::uint8_t{200}),
        oracle(source, Label{0}, Label{1}),
        problem{goal, oracle, source, texture, 1.0, FitnessNorm::L0} {}
};

// Overlap count by rasterizing both rects.
std::size_t brute_overlap(const Rect& a, const Rect& b, int extent) {
  std::size_t n = 0;
  for (int y = 0; y < extent; ++y) {
    for (int x = 0; x < extent; ++x) {
      n += x >= a.x0 && x < a.x1 && y >= a.y0 && y < a.y1 && x >= b.x0 && x < b.x1 && y >= b.y0 && y < b.y1;
    }
  }
  return n;
}

TEST(Fitness, SingleKeyframe) {
  Fixture f({1, 32, 32, 3});
  EXPECT_EQ(fitness(f.problem, Individual{{{0, 0, 4, 4}}, {true}}).value, 16.0);
  EXPECT_EQ(f.oracle.queries(), 1u);
}

TEST(Fitness, GoalNotMetIsInfinite) {
  Fixture f({1, 32, 32, 3}, AttackGoal::targeted(Label{0}, Label{5}));
  EXPECT_FALSE(fitness(f.problem, Individual{{{0, 0, 4, 4}}, {true}}).finite());
  EXPECT_EQ(f.oracle.queries(), 1u);
}

TEST(Fitness, TwoOverlappingKeyframes) {
  const Rect a{0, 0, 4, 4}, b{2, 2, 6, 6};
  ASSERT_EQ(brute_overlap(a, b, 32), 4u);
  Fixture f({2, 32, 32, 3});
  EXPECT_EQ(fitness(f.problem, Individual{{a, b}, {true, true}}).value, 16.0 + 16.0 - 4.0);
}

TEST(Fitness, EmptyMaskShortCircuits) {
  Fixture f({2, 8, 8, 3});
  EXPECT_FALSE(fitness(f.problem, Individual{{{0, 0, 4, 4}, {0, 0, 4, 4}}, {false, false}}).finite());
  EXPECT_FALSE(fitness(f.problem, Individual{{{3, 3, 3, 7}, {0, 0, 0, 0}}, {true, true}}).finite());
  EXPECT_EQ(f.oracle.queries(), 0u);
}

TEST(Fitness, L2Norm) {
  Fixture f({2, 8, 8, 1});
  f.problem.norm = FitnessNorm::L2;
  // 4 cells changed by 200: sqrt(4 * 200^2) = 400.
  EXPECT_DOUBLE_EQ(fitness(f.problem, Individual{{{0, 0, 2, 2}, {0, 0, 0, 0}}, {true, false}}).value, 400.0);
  EXPECT_DOUBLE_EQ(fitness(f.problem, Individual{{{0, 0, 2, 2}, {0, 0, 2, 2}}, {true, true}}).value,
                   std::sqrt(8.0) * 200.0 - 4.0);
}

TEST(TemporalIntersection, Examples) {
  const Rect r{0, 0, 4, 4};
  EXPECT_EQ(temporal_intersection(Individual{{r}, {true}}, 32, 32), 0u);
  EXPECT_EQ(temporal_intersection(Individual{{r, r}, {false, true}}, 32, 32), 0u);
  EXPECT_EQ(temporal_intersection(Individual{{r, r, r}, {true, true, true}}, 32, 32), 32u);
  EXPECT_EQ(temporal_intersection(Individual{{r, {4, 4, 8, 8}}, {true, true}}, 32, 32), 0u);
  // Non-keyframes are skipped: frames 0 and 2 form the only pair.
  EXPECT_EQ(temporal_intersection(Individual{{r, {20, 20, 24, 24}, {2, 2, 6, 6}}, {true, false, true}}, 32, 32), 4u);
}

TEST(TemporalIntersection, MatchesBruteForceOverConsecutivePairs) {
  Rng rng(31);
  for (int round = 0; round < 300; ++round) {
    Individual ind = sample_individual(rng, 6, 16, 16, {0.6, 0.5});
    for (std::size_t t = 0; t < 6; ++t) ind.fk[t] = rng.below(2) == 1;
    std::size_t expected = 0;
    int previous = -1;
    for (int t = 0; t < 6; ++t) {
      if (!ind.fk[t]) continue;
      if (previous >= 0) expected += brute_overlap(ind.rects[previous], ind.rects[t], 16);
      previous = t;
    }
    EXPECT_EQ(temporal_intersection(ind, 16, 16), expected);
  }
}

TEST(Mutate, WorkedExample) {
  const Individual best{{{10, 10, 20, 20}}, {true}};
  const Individual i{{{5, 5, 15, 15}}, {true}};
  const Individual j{{{3, 4, 12, 13}}, {true}};
  EXPECT_EQ(mutate(best, i, j, 1, 32, 32).rects[0], (Rect{12, 11, 23, 22}));
}

TEST(Mutate, KeyframeExample) {
  const std::vector<Rect> r(4);
  const auto out = differential_mutation({r, {true, false, true, false}}, {r, {false, true, true, false}},
                                         {r, {false, false, true, true}}, 1);
  EXPECT_EQ(out.fk, (std::vector<bool>{false, false, true, false}));
}

TEST(Mutate, EqualDonorsLeaveBestSpatially) {
  Rng rng(4);
  const auto best = sample_individual(rng, 5, 32, 32, {0.4, 0.6});
  const auto i = sample_individual(rng, 5, 32, 32, {0.4, 0.6});
  EXPECT_EQ(mutate(best, i, i, 3, 32, 32).rects, best.rects);
}

TEST(Mutate, OutputAlwaysRepaired) {
  Rng rng(12);
  for (int round = 0; round < 500; ++round) {
    const auto a = sample_individual(rng, 4, 20, 20, {0.8, 0.5});
    const auto b = sample_individual(rng, 4, 20, 20, {0.8, 0.5});
    const auto c = sample_individual(rng, 4, 20, 20, {0.8, 0.5});
    EXPECT_TRUE(is_repaired(mutate(a, b, c, 3, 20, 20), 20, 20));
  }
}

TEST(SCross, MovesEachCoordinateByAtMostGamma) {
  Rng rng(2);
  for (int round = 0; round < 300; ++round) {
    const auto ind = sample_individual(rng, 4, 32, 32, {0.4, 0.6});
    const auto out = s_cross(ind, 1, rng, 32, 32);
    EXPECT_EQ(out.fk, ind.fk);
    for (std::size_t t = 0; t < 4; ++t) {
      const auto& a = ind.rects[t];
      const auto& b = out.rects[t];
      for (int d : {a.x0 - b.x0, a.y0 - b.y0, a.x1 - b.x1, a.y1 - b.y1}) EXPECT_LE(std::abs(d), 1);
    }
    EXPECT_TRUE(is_repaired(out, 32, 32));
  }
}

TEST(SCross, ClampsAtBorder) {
  Rng rng(5);
  for (int round = 0; round < 100; ++round) {
    const auto out = s_cross(Individual{{{0, 0, 32, 32}}, {true}}, 1, rng, 32, 32);
    EXPECT_GE(out.rects[0].x0, 0);
    EXPECT_LE(out.rects[0].x1, 32);
  }
}

TEST(TCross, FlipsExactlyAlphaBits) {
  Rng rng(6);
  const Individual zero{std::vector<Rect>(2), {false, false}};
  EXPECT_EQ(t_cross(zero, 0, rng), zero);
  std::set<std::vector<bool>> seen;
  for (int round = 0; round < 100; ++round) {
    const auto out = t_cross(zero, 1, rng);
    EXPECT_EQ(keyframe_count(out), 1u);
    seen.insert(out.fk);
  }
  EXPECT_EQ(seen.size(), 2u);
  for (int round = 0; round < 200; ++round) {
    Individual ind{std::vector<Rect>(7), std::vector<bool>(7)};
    for (std::size_t t = 0; t < 7; ++t) ind.fk[t] = rng.below(2) == 1;
    const auto out = t_cross(ind, 3, rng);
    std::size_t flipped = 0;
    for (std::size_t t = 0; t < 7; ++t) flipped += ind.fk[t] != out.fk[t];
    EXPECT_EQ(flipped, 3u);
  }
  EXPECT_THROW(t_cross(zero, 3, rng), std::invalid_argument);
}

PopulationState population_of(std::vector<double> values) {
  PopulationState s;
  for (double v : values) {
    s.members.push_back(Individual{{{0, 0, 1, 1}}, {true}});
    s.fitness.push_back(Fitness{v});
  }
  return s;
}

TEST(Select, StrictImprovementReplacesWorst) {
  auto s = population_of({3, 12, 7});
  EXPECT_FALSE(select(s, Individual{}, Fitness::infinite()));
  EXPECT_FALSE(select(s, Individual{}, Fitness{12}));
  EXPECT_TRUE(select(s, Individual{{{1, 1, 2, 2}}, {true}}, Fitness{10}));
  EXPECT_EQ(s.fitness[1].value, 10);
  EXPECT_EQ(s.worst(), 1u);
  EXPECT_EQ(s.size(), 3u);
  EXPECT_TRUE(select(s, Individual{}, Fitness{1}));
  EXPECT_EQ(s.best(), 1u);
  EXPECT_EQ(s.worst(), 2u);
}

TEST(Select, InfiniteWorstIsReplacedByFinite) {
  auto s = population_of({3, std::numeric_limits<double>::infinity()});
  EXPECT_TRUE(select(s, Individual{}, Fitness{50}));
}

ToyInstance toy(std::size_t index = 0) { return make_toy_instance(ToySuiteSpec{}, index); }

TEST(Init, FillsEverySlotOnToyInstance) {
  auto inst = toy();
  RegionTriggerOracle oracle(inst.trigger, inst.source);
  const AttackProblem problem{AttackGoal::untargeted(inst.source_label), oracle, inst.source, inst.target};
  auto params = StdeParams::defaults(AttackMode::Untargeted);
  Rng rng(1);
  AttackTrace trace;
  const auto state = init_population(problem, params, rng, &trace);
  ASSERT_EQ(state.size(), 15u);
  for (const auto& f : state.fitness) EXPECT_TRUE(f.finite());
  EXPECT_EQ(trace.init_queries, oracle.queries());
  EXPECT_GE(trace.init_attempts, 15u);
}

TEST(Init, NeverTargetFails) {
  Fixture f({3, 8, 8, 3}, AttackGoal::targeted(Label{0}, Label{2}));
  auto params = StdeParams::defaults(AttackMode::Targeted);
  params.init_retry_budget = 20;
  Rng rng(1);
  EXPECT_THROW(init_population(f.problem, params, rng), InitializationError);

  Fixture g({3, 8, 8, 3}, AttackGoal::targeted(Label{0}, Label{2}));
  params.alpha = 1;
  const auto record = run_attack(g.problem.goal, g.oracle, g.source, g.texture, params);
  EXPECT_EQ(record.status, AttackStatus::InitFailed);
  EXPECT_FALSE(record.success);
  EXPECT_EQ(record.queries, 1u + 20u);
}

TEST(Params, Defaults) {
  const auto u = StdeParams::defaults(AttackMode::Untargeted);
  EXPECT_EQ(u.budget, 10'000u);
  EXPECT_EQ(u.cf, 0.6);
  EXPECT_EQ(u.alpha, 1);
  const auto t = StdeParams::defaults(AttackMode::Targeted);
  EXPECT_EQ(t.budget, 50'000u);
  EXPECT_EQ(t.cf, 0.7);
  EXPECT_EQ(t.alpha, 2);
  for (const auto& p : {u, t}) {
    EXPECT_EQ(p.population, 15u);
    EXPECT_EQ(p.mu, 0.4);
    EXPECT_EQ(p.gamma, 1);
    EXPECT_EQ(p.lambda, 1.0);
    EXPECT_EQ(p.epsilon, 0.0);
  }
}

TEST(Params, Validation) {
  auto p = StdeParams::defaults(AttackMode::Untargeted);
  EXPECT_NO_THROW(p.validate(8));
  p.alpha = 9;
  EXPECT_THROW(p.validate(8), std::invalid_argument);
  p = StdeParams::defaults(AttackMode::Untargeted);
  p.gamma = 0;
  EXPECT_THROW(p.validate(8), std::invalid_argument);
  p = StdeParams::defaults(AttackMode::Untargeted);
  p.budget = 0;
  EXPECT_THROW(p.validate(8), std::invalid_argument);
}

TEST(Params, JsonRoundTripAndUnknownKeys) {
  auto p = StdeParams::defaults(AttackMode::Targeted);
  p.seed = 42;
  p.norm = FitnessNorm::L2;
  const nlohmann::json j = p;
  StdeParams back;
  from_json(j, back);
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_THROW(from_json(nlohmann::json{{"popsize", 3}}, back), std::invalid_argument);
}

struct ToyRun {
  ToyInstance inst;
  RegionTriggerOracle oracle;
  AttackTrace trace;
  AttackRecord record;

  ToyRun(std::uint64_t seed, std::uint64_t budget, bool temporal = true)
      : inst(toy(seed % 20)), oracle(inst.trigger, inst.source) {
    auto params = StdeParams::defaults(AttackMode::Untargeted);
    params.budget = budget;
    params.seed = seed;
    const auto goal = AttackGoal::untargeted(inst.source_label);
    record = temporal ? run_attack(goal, oracle, inst.source, inst.target, params, &trace)
                      : run_attack_spatial_only(goal, oracle, inst.source, inst.target, params, &trace);
  }
};

TEST(Attack, DeterministicRecord) {
  ToyRun a(3, 2000), b(3, 2000);
  EXPECT_EQ(nlohmann::json(a.record).dump(), nlohmann::json(b.record).dump());
  ToyRun c(4, 2000);
  EXPECT_NE(nlohmann::json(a.record).dump(), nlohmann::json(c.record).dump());
}

TEST(Attack, BudgetAndAccounting) {
  for (std::uint64_t budget : {1500u, 2000u, 3001u}) {
    ToyRun run(5, budget);
    ASSERT_EQ(run.record.status, AttackStatus::Completed);
    EXPECT_LE(run.record.queries, budget + 1);
    EXPECT_EQ(run.record.queries, run.oracle.queries());
    EXPECT_EQ(run.record.queries, 1 + run.trace.init_queries + run.trace.loop_queries);
  }
}

TEST(Attack, TrajectoryAndPopulationInvariants) {
  ToyRun run(7, 3000);
  ASSERT_TRUE(run.record.success);
  const auto& traj = run.record.trajectory;
  ASSERT_GE(traj.size(), 2u);
  EXPECT_EQ(traj.front().queries, 1u);
  EXPECT_FALSE(traj.front().best.finite());
  EXPECT_EQ(traj.back().queries, run.record.queries);
  for (std::size_t k = 2; k < traj.size(); ++k) {
    EXPECT_LE(traj[k].best, traj[k - 1].best);
    EXPECT_GE(traj[k].queries, traj[k - 1].queries);
  }
  const auto& pop = run.trace.final_population;
  ASSERT_EQ(pop.size(), 15u);
  for (std::size_t k = 0; k < pop.size(); ++k) {
    EXPECT_TRUE(is_repaired(pop.members[k], 32, 32));
    EXPECT_EQ(pop.fitness[k].value, l0_score(pop.members[k], 32, 32, 1.0));
  }
  EXPECT_EQ(run.record.fitness.value, l0_score(*run.record.individual, 32, 32, 1.0));
  EXPECT_EQ(run.record.final_area, area_of(*run.record.individual, 32, 32));
  EXPECT_EQ(run.record.l0, run.record.final_area * 3);
}

TEST(Attack, SpatialOnlyKeepsKeyframeVectors) {
  ToyRun run(9, 2000, false);
  EXPECT_EQ(run.record.attack, "stde_spatial_only");
  for (const auto& event : run.trace.mutations) EXPECT_EQ(event.best_keyframes, event.mutated_keyframes);
  for (const auto& m : run.trace.final_population.members) EXPECT_EQ(keyframe_count(m), 5u);
}

TEST(Attack, MisclassifiedCleanVideoStopsAfterOneQuery) {
  Fixture f({2, 8, 8, 3}, AttackGoal::untargeted(Label{7}));
  const auto record = run_attack(f.problem.goal, f.oracle, f.source, f.texture, StdeParams{});
  EXPECT_EQ(record.status, AttackStatus::Misclassified);
  EXPECT_EQ(record.queries, 1u);
}

TEST(Attack, ModelCrashAbortsWithQueriesPreserved) {
  const Shape shape{4, 8, 8, 1};
  const VideoTensor source(shape, std::uint8_t{10});
  const VideoTensor texture(shape, std::uint8_t{250});
  SubprocessOracle oracle(shape, {std::string(STDE_FAKE_MODEL) + " --crash-after 40",
                                  testing::scratch_dir("crash"), std::chrono::milliseconds(10'000)});
  auto params = StdeParams::defaults(AttackMode::Untargeted);
  params.budget = 500;
  const auto record = run_attack(AttackGoal::untargeted(Label{0}), oracle, source, texture, params);
  EXPECT_EQ(record.status, AttackStatus::Aborted);
  EXPECT_EQ(record.queries, 40u);
  EXPECT_TRUE(record.success);
  EXPECT_TRUE(record.individual.has_value());
  EXPECT_FALSE(record.error.empty());
}

TEST(Attack, EpsilonStopsEarly) {
  // With a huge epsilon the first initialized population already qualifies.
  auto inst = toy(1);
  RegionTriggerOracle oracle(inst.trigger, inst.source);
  auto params = StdeParams::defaults(AttackMode::Untargeted);
  params.epsilon = 1e9;
  AttackTrace trace;
  const auto record =
      run_attack(AttackGoal::untargeted(inst.source_label), oracle, inst.source, inst.target, params, &trace);
  EXPECT_TRUE(record.success);
  EXPECT_EQ(trace.loop_queries, 0u);
  EXPECT_EQ(record.queries, 1 + trace.init_queries);
}

}  // namespace
}  // namespace stde
