#include <gtest/gtest.h>

#include <set>

#include "voxseq/agent.hpp"
#include "voxseq/dataset.hpp"

namespace voxseq {
namespace {

std::set<Cell> elevator_cells(const DesignState& s, int z) {
  std::set<Cell> out;
  const GridDims d = s.dims();
  for (int x = 0; x < d.nx; ++x) {
    for (int y = 0; y < d.ny; ++y) {
      if (s.at({x, y, z}) == RoomType::Elevator) out.insert({x, y});
    }
  }
  return out;
}

TEST(ElevatorCount, AreaRuleWithThreeMappedToTwo) {
  EpisodeConstraints c;
  const GridPartition g = GridPartition::uniform({10, 10, 10});  // 3600 m2
  auto count = [&](double far) {
    c.far_target = far;
    return elevator_count(c, g);
  };
  EXPECT_EQ(count(0.2), 1);   // 0.36
  EXPECT_EQ(count(0.5), 1);   // 0.9
  EXPECT_EQ(count(1.0), 2);   // 1.8
  EXPECT_EQ(count(1.5), 2);   // 2.7 -> 3 -> 2
  EXPECT_EQ(count(2.0), 4);   // 3.6
  EXPECT_EQ(count(5.0), 4);   // 9 clamped
}

TEST(ElevatorSites, HalfTurnSymmetric) {
  const GridDims d{10, 10, 10};
  for (int n : {1, 2, 4}) {
    const auto sites = detail::elevator_sites(n, d);
    ASSERT_EQ(sites.size(), static_cast<std::size_t>(n));
    const std::set<Cell> s(sites.begin(), sites.end());
    for (const Cell& c : sites) EXPECT_TRUE(s.count(rotate_half_turn(c, d))) << n;
  }
  EXPECT_EQ(detail::elevator_sites(1, d).front(), (Cell{5, 5}));
}

TEST(HeuristicAgent, HundredEpisodesAreValid) {
  const DatasetConfig cfg;
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const EpisodeRecord r = expert_record(derive_seed(2024, i), cfg);
    ASSERT_LT(r.raw_length(), 810u) << i;
    EXPECT_TRUE(replay_check(r)) << i;
    const DesignState last = replay(r).states.back();
    const Measurement m = measure(last);
    EXPECT_GE(m.far_so_far, r.constraints.far_target);
    const double err = std::abs(m.tpr(RoomType::Office) - r.constraints.tpr(RoomType::Office));
    worst = std::max(worst, err);
    EXPECT_LE(err, 0.05) << i;
    for (int z = 0; z < last.dims().nz; ++z) {
      const auto cells = elevator_cells(last, z);
      for (const Cell& c : cells) EXPECT_TRUE(cells.count(rotate_half_turn(c, last.dims()))) << i << " floor " << z;
    }
    EXPECT_FALSE(elevator_cells(last, 0).empty());
  }
  RecordProperty("max_office_error", std::to_string(worst));
}

TEST(HeuristicAgent, DeterministicGivenSeed) {
  const auto c = sample_constraints(5);
  EXPECT_EQ(expert_actions(c), expert_actions(c));
}

TEST(HeuristicAgent, GridMustMatchSeed) {
  const auto c = sample_constraints(5);
  EXPECT_NO_THROW(expert_actions(c, sample_partition(c.seed)));
  EXPECT_THROW(expert_actions(c, sample_partition(c.seed + 1)), PlanningError);
}

TEST(HeuristicAgent, TooSmallGridFails) {
  EpisodeConstraints c;
  EXPECT_THROW(plan_core(c, GridPartition::uniform({3, 3, 3})), PlanningError);
}

TEST(HorizonPolicy, ExpertPrefixThenRandom) {
  const auto c = sample_constraints(9);
  const GymConfig gym;
  const auto expert = expert_actions(c, gym);
  for (std::size_t h : {std::size_t{0}, expert.size() / 2, expert.size()}) {
    const auto acts = horizon_policy_actions(c, gym, h, 77);
    ASSERT_EQ(acts.size(), expert.size());
    EXPECT_TRUE(std::equal(expert.begin(), expert.begin() + h, acts.begin()));
    for (const Action& a : acts) {
      EXPECT_TRUE(gym.dims.contains(a.location));
      EXPECT_NE(a.room, RoomType::Empty);
    }
  }
  EXPECT_EQ(horizon_policy_actions(c, gym, 0, 77), horizon_policy_actions(c, gym, 0, 77));
  EXPECT_NE(horizon_policy_actions(c, gym, 0, 77), horizon_policy_actions(c, gym, 0, 78));
  EXPECT_EQ(horizon_policy_actions(c, gym, expert.size() + 5, 1), expert);
}

}  // namespace
}  // namespace voxseq
