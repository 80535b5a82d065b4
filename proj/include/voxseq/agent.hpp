#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <utility>
#include <vector>

#include "voxseq/errors.hpp"
#include "voxseq/gym.hpp"
#include "voxseq/rng.hpp"
#include "voxseq/voxel.hpp"

namespace voxseq {

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct Placement {
  Cell cell;
  RoomType room = RoomType::Empty;
};

struct AgentPlan {
  std::vector<Coord> elevator_sites;       // floor 0
  std::vector<Placement> service_layout;   // per-floor core template, placement order
  int floors_used = 0;
  std::vector<Cell> lobby_cells;           // floor 0, growth order
  std::vector<Cell> office_cells;          // floor 1 template, growth order
  double target_area = 0.0;
};

struct AgentConfig {
  double area_per_elevator = 2000.0;
};

// Centre voxel used for elevator placement and the 180-degree symmetry check.
inline Cell footprint_center(GridDims d) { return {d.nx / 2, d.ny / 2}; }

inline Cell rotate_half_turn(Cell c, GridDims d) {
  const Cell o = footprint_center(d);
  return {2 * o.x - c.x, 2 * o.y - c.y};
}

inline int elevator_count(const EpisodeConstraints& constraints, const GridPartition& grid,
                          const AgentConfig& cfg = {}) {
  const double raw = constraints.far_target * grid.parcel_area() / cfg.area_per_elevator;
  int n = static_cast<int>(std::lround(raw));
  n = std::clamp(n, 1, 4);
  // Only 1, 2 and 4 have a symmetric placement; 3 rounds down.
  return n == 3 ? 2 : n;
}

namespace detail {

inline int toward(int from, int center) { return from > center ? -1 : 1; }

// Elevators plus `per_elevator` ring cells around each one. Ring cells are
// taken toward the footprint centre first; the ring order keeps every cell
// 4-connected to its elevator through earlier cells.
inline std::vector<Placement> core_layout(const std::vector<Cell>& sites, GridDims d, int per_elevator) {
  const Cell o = footprint_center(d);
  std::vector<Placement> layout;
  std::set<Cell> used;
  auto put = [&](Cell c, RoomType r) {
    if (c.x < 0 || c.x >= d.nx || c.y < 0 || c.y >= d.ny) {
      throw PlanningError("core layout does not fit the footprint");
    }
    if (!used.insert(c).second) throw PlanningError("core layout overlaps itself");
    layout.push_back({c, r});
  };
  for (const Cell& s : sites) put(s, RoomType::Elevator);

  const RoomType services[] = {RoomType::Stairs, RoomType::Restroom, RoomType::Mechanical};
  for (std::size_t k = 0; k < sites.size(); ++k) {
    const Cell s = sites[k];
    const int dx = toward(s.x, o.x);
    const int dy = toward(s.y, o.y);
    const Cell ring[8] = {{s.x + dx, s.y},      {s.x, s.y + dy},      {s.x + dx, s.y + dy},
                          {s.x - dx, s.y},      {s.x, s.y - dy},      {s.x - dx, s.y + dy},
                          {s.x + dx, s.y - dy}, {s.x - dx, s.y - dy}};
    std::size_t next_service = k;
    for (int i = 0; i < per_elevator; ++i) {
      const bool corridor = (i == 1) && per_elevator > 1;
      put(ring[i], corridor ? RoomType::Corridor : services[next_service++ % 3]);
    }
  }
  // Service rooms first, corridors after; elevators stay at the front.
  std::stable_partition(layout.begin(), layout.end(),
                        [](const Placement& p) { return p.room != RoomType::Corridor; });
  return layout;
}

// Scanline growth over free cells until the accumulated area reaches `target`.
// With `round_nearest` the last cell is only taken if that lands closer to target.
inline std::vector<Cell> grow_scanline(const GridPartition& grid, const std::set<Cell>& blocked,
                                       double target, bool round_nearest) {
  const GridDims d = grid.dims();
  std::vector<Cell> cells;
  double area = 0.0;
  if (target <= 0.0) return cells;
  for (int y = 0; y < d.ny; ++y) {
    for (int x = 0; x < d.nx; ++x) {
      const Cell c{x, y};
      if (blocked.count(c)) continue;
      const double a = grid.cell_area(x, y);
      if (round_nearest) {
        if (area + 0.5 * a > target && !cells.empty()) return cells;
      } else if (area >= target) {
        return cells;
      }
      cells.push_back(c);
      area += a;
    }
  }
  return cells;
}

inline double cells_area(const GridPartition& grid, const std::vector<Cell>& cells) {
  double a = 0.0;
  for (const Cell& c : cells) a += grid.cell_area(c.x, c.y);
  return a;
}

}  // namespace detail

namespace detail {

inline std::vector<Cell> elevator_sites(int count, GridDims d) {
  const Cell o = footprint_center(d);
  const Cell lo{d.nx / 4, d.ny / 4};
  const Cell hi = rotate_half_turn(lo, d);
  if (count == 1) return {o};
  if (count == 2) return {lo, hi};
  return {lo, {hi.x, lo.y}, {lo.x, hi.y}, hi};
}

}  // namespace detail

inline AgentPlan plan_core(const EpisodeConstraints& constraints, const GridPartition& grid,
                           const AgentConfig& cfg = {}) {
  constraints.validate();
  grid.validate();
  const GridDims d = grid.dims();
  if (d.nx < 4 || d.ny < 4 || d.nz < 2) throw PlanningError("grid too small to host a core");

  const double parcel = grid.parcel_area();
  const double target = constraints.far_target * parcel;
  const double office_share = constraints.tpr(RoomType::Office);

  // Search (elevator count, ring size, floor count) for the first layout whose
  // office plate fits one floor and whose non-office share is absorbed by the
  // cores plus a lobby. The area rule's elevator count is tried first; fewer
  // elevators are only used when no core size makes the targets reachable.
  struct Candidate {
    std::vector<Cell> sites;
    std::vector<Placement> layout;
    double core_area = 0.0;
    int floors = 0;
    double violation = std::numeric_limits<double>::infinity();
  } best;
  const int preferred = elevator_count(constraints, grid, cfg);
  for (int count : {4, 2, 1}) {
    if (count > preferred || best.violation <= 0.0) continue;
    const auto sites = detail::elevator_sites(count, d);
    for (int ring = 1; ring <= 8 && best.violation > 0.0; ++ring) {
      std::vector<Placement> layout;
      try {
        layout = detail::core_layout(sites, d, ring);
      } catch (const PlanningError&) {
        if (ring == 1 && count == 1) throw;
        break;
      }
      double area = 0.0;
      for (const auto& p : layout) area += grid.cell_area(p.cell.x, p.cell.y);
      const double free_area = parcel - area;
      for (int floors = 2; floors <= d.nz; ++floors) {
        const double office_per_floor = office_share * target / (floors - 1);
        const double lobby = (1.0 - office_share) * target - floors * area;
        const double violation = std::max(0.0, office_per_floor - free_area) + std::max(0.0, -lobby) +
                                 std::max(0.0, lobby - free_area);
        if (violation < best.violation) best = {sites, layout, area, floors, violation};
        if (violation <= 0.0) break;
      }
    }
  }
  if (best.floors == 0) throw PlanningError("no core layout fits the footprint");

  AgentPlan plan;
  plan.target_area = target;
  for (const Cell& s : best.sites) plan.elevator_sites.push_back({s.x, s.y, 0});
  plan.service_layout = best.layout;
  plan.floors_used = best.floors;
  std::set<Cell> core_cells;
  for (const auto& p : plan.service_layout) core_cells.insert(p.cell);

  const double office_per_floor = office_share * target / (best.floors - 1);
  if (office_share > 0.0) plan.office_cells = detail::grow_scanline(grid, core_cells, office_per_floor, true);
  const double office_area = detail::cells_area(grid, plan.office_cells);
  // Lobby absorbs the rounding so the planned total reaches the FAR target.
  const double lobby_needed = target - best.floors * best.core_area - (best.floors - 1) * office_area;
  plan.lobby_cells = detail::grow_scanline(grid, core_cells, lobby_needed, false);
  return plan;
}

namespace detail {

// Full action order before FAR termination is applied.
inline std::vector<Action> planned_actions(const AgentPlan& plan, GridDims d) {
  std::vector<Action> actions;
  for (int f = 0; f < plan.floors_used; ++f) {
    for (const auto& p : plan.service_layout) actions.push_back({{p.cell.x, p.cell.y, f}, p.room});
  }
  for (const Cell& c : plan.lobby_cells) actions.push_back({{c.x, c.y, 0}, RoomType::Lobby});
  for (int f = 1; f < plan.floors_used; ++f) {
    for (const Cell& c : plan.office_cells) actions.push_back({{c.x, c.y, f}, RoomType::Office});
  }
  // Top-up in case rounding or a capped lobby left the plan short of the target.
  std::set<Cell> core;
  for (const auto& p : plan.service_layout) core.insert(p.cell);
  std::set<Cell> office(plan.office_cells.begin(), plan.office_cells.end());
  for (int f = 1; f < d.nz; ++f) {
    for (int y = 0; y < d.ny; ++y) {
      for (int x = 0; x < d.nx; ++x) {
        const Cell c{x, y};
        if (f < plan.floors_used && (core.count(c) || office.count(c))) continue;
        actions.push_back({{x, y, f}, RoomType::Office});
      }
    }
  }
  return actions;
}

}  // namespace detail

// Expert trace truncated where the environment reports the episode done.
inline std::vector<Action> expert_actions(const EpisodeConstraints& constraints, const GymConfig& gym = {},
                                          const AgentConfig& cfg = {}) {
  EnvState env = reset(constraints, gym);
  const AgentPlan plan = plan_core(constraints, env.current.partition(), cfg);
  std::vector<Action> out;
  for (const Action& a : detail::planned_actions(plan, env.current.dims())) {
    if (env.done) break;
    env = step(env, a);
    out.push_back(a);
  }
  return out;
}

inline std::vector<Action> expert_actions(const EpisodeConstraints& constraints, const GridPartition& grid,
                                          const AgentConfig& cfg = {}) {
  GymConfig gym;
  gym.dims = grid.dims();
  if (!(sample_partition(constraints.seed, gym) == grid)) {
    throw PlanningError("grid does not match the partition generated from the constraint seed");
  }
  return expert_actions(constraints, gym, cfg);
}

inline Action random_action(Rng& rng, GridDims d) {
  Action a;
  a.location = {static_cast<int>(rng.below(d.nx)), static_cast<int>(rng.below(d.ny)),
                static_cast<int>(rng.below(d.nz))};
  a.room = static_cast<RoomType>(1 + rng.below(kMaxRoomCode));
  return a;
}

// Expert prefix of length `horizon`, then uniform random actions up to the
// expert episode's length.
inline std::vector<Action> horizon_policy_actions(const std::vector<Action>& expert, GridDims d,
                                                  std::size_t horizon, std::uint64_t seed) {
  std::vector<Action> out(expert.begin(), expert.begin() + std::min(horizon, expert.size()));
  Rng rng(seed);
  while (out.size() < expert.size()) out.push_back(random_action(rng, d));
  return out;
}

inline std::vector<Action> horizon_policy_actions(const EpisodeConstraints& constraints, const GymConfig& gym,
                                                  std::size_t horizon, std::uint64_t seed) {
  return horizon_policy_actions(expert_actions(constraints, gym), gym.dims, horizon, seed);
}

}  // namespace voxseq
