#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "stde/baseline.hpp"
#include "stde/harness.hpp"
#include "test_support.hpp"

namespace stde {
namespace {

TEST(RandomSearch, DeterministicRecord) {
  const auto inst = make_toy_instance(ToySuiteSpec{}, 2);
  RandomSearchParams params;
  params.budget = 800;
  params.seed = 5;
  RegionTriggerOracle a(inst.trigger, inst.source), b(inst.trigger, inst.source);
  const auto goal = AttackGoal::untargeted(inst.source_label);
  const auto ra = run_random_search(goal, a, inst.source, inst.target, params);
  const auto rb = run_random_search(goal, b, inst.source, inst.target, params);
  EXPECT_EQ(nlohmann::json(ra).dump(), nlohmann::json(rb).dump());
  EXPECT_EQ(ra.attack, "random_search");
  EXPECT_EQ(ra.queries, a.queries());
  EXPECT_LE(ra.queries, params.budget + 1);
}

TEST(RandomSearch, AlwaysAdversarialKeepsMinimumSample) {
  const Shape shape{4, 16, 16, 3};
  const VideoTensor source(shape, std::uint8_t{0});
  const VideoTensor texture(shape, std::uint8_t{255});
  testing::ConstantOracle oracle(source, Label{0}, Label{1});
  RandomSearchParams params;
  params.budget = 300;
  params.seed = 9;
  const auto record = run_random_search(AttackGoal::untargeted(Label{0}), oracle, source, texture, params);

  // Replay the sampler stream to find the smallest score it produced.
  Rng rng = Rng(params.seed).split("init");
  double best = std::numeric_limits<double>::infinity();
  for (std::uint64_t q = 1; q < params.budget; ++q) {
    const auto ind = sample_individual(rng, 4, 16, 16, params.sampler());
    best = std::min(best, l0_score(ind, 16, 16, params.lambda));
  }
  ASSERT_TRUE(record.success);
  EXPECT_EQ(record.fitness.value, best);
  EXPECT_EQ(record.queries, params.budget);
}

TEST(RandomSearch, TrajectoryNonIncreasing) {
  const auto inst = make_toy_instance(ToySuiteSpec{}, 4);
  RegionTriggerOracle oracle(inst.trigger, inst.source);
  RandomSearchParams params;
  params.budget = 1500;
  const auto record =
      run_random_search(AttackGoal::untargeted(inst.source_label), oracle, inst.source, inst.target, params);
  for (std::size_t k = 2; k < record.trajectory.size(); ++k) {
    EXPECT_LE(record.trajectory[k].best, record.trajectory[k - 1].best);
  }
}

TEST(RandomSearch, NoAdversarialSampleIsFailure) {
  const Shape shape{2, 8, 8, 3};
  const VideoTensor source(shape, std::uint8_t{0});
  testing::ConstantOracle oracle(source, Label{0}, Label{1});
  RandomSearchParams params;
  params.budget = 50;
  const auto record =
      run_random_search(AttackGoal::targeted(Label{0}, Label{3}), oracle, source, VideoTensor(shape, 9), params);
  EXPECT_FALSE(record.success);
  EXPECT_FALSE(record.individual.has_value());
  EXPECT_EQ(record.queries, 50u);
}

TEST(RandomSearch, ParamsFromStde) {
  auto stde = StdeParams::defaults(AttackMode::Targeted);
  stde.seed = 77;
  const auto rs = RandomSearchParams::from(stde);
  EXPECT_EQ(rs.budget, 50'000u);
  EXPECT_EQ(rs.cf, 0.7);
  EXPECT_EQ(rs.seed, 77u);
  RandomSearchParams bad;
  bad.budget = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace stde
