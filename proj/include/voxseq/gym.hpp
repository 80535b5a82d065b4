#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "voxseq/errors.hpp"
#include "voxseq/rng.hpp"
#include "voxseq/voxel.hpp"

namespace voxseq {

struct EpisodeConstraints {
  double far_target = 2.0;
  // Ratios over non-Empty room types; must sum to 1.
  std::map<RoomType, double> tpr_targets{{RoomType::Office, 1.0}};
  std::uint64_t seed = 0;

  double tpr(RoomType r) const {
    auto it = tpr_targets.find(r);
    return it == tpr_targets.end() ? 0.0 : it->second;
  }

  void validate() const {
    if (!(far_target > 0.0) || !std::isfinite(far_target)) {
      throw ConstraintError("far_target must be positive");
    }
    double sum = 0.0;
    for (const auto& [room, ratio] : tpr_targets) {
      if (room == RoomType::Empty) throw ConstraintError("tpr target for Empty room");
      if (!(ratio >= 0.0) || ratio > 1.0) throw ConstraintError("tpr ratio outside [0,1]");
      sum += ratio;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
      throw ConstraintError("tpr ratios sum to " + std::to_string(sum) + ", expected 1");
    }
  }

  friend bool operator==(const EpisodeConstraints&, const EpisodeConstraints&) = default;
};

struct GymConfig {
  GridDims dims{};
  double xy_min = 3.0;
  double xy_max = 9.0;
  double z_min = 3.0;
  double z_max = 5.0;
  int step_cap = 810;
  // When false only the step cap ends an episode (used to replay corrupted traces).
  bool stop_at_far = true;
};

struct EnvState {
  DesignState current;
  EpisodeConstraints constraints;
  int step_count = 0;
  bool done = false;
  int step_cap = 810;
  bool stop_at_far = true;

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

struct Measurement {
  double far_so_far = 0.0;
  std::map<RoomType, double> tpr_so_far;
  std::size_t occupied = 0;

  double tpr(RoomType r) const {
    auto it = tpr_so_far.find(r);
    return it == tpr_so_far.end() ? 0.0 : it->second;
  }
};

inline GridPartition sample_partition(std::uint64_t seed, const GymConfig& cfg = {}) {
  Rng rng(derive_seed(seed, 0x9A27));
  GridPartition p;
  p.x_sizes.resize(cfg.dims.nx);
  p.y_sizes.resize(cfg.dims.ny);
  p.z_sizes.resize(cfg.dims.nz);
  for (auto& s : p.x_sizes) s = rng.uniform(cfg.xy_min, cfg.xy_max);
  for (auto& s : p.y_sizes) s = rng.uniform(cfg.xy_min, cfg.xy_max);
  for (auto& s : p.z_sizes) s = rng.uniform(cfg.z_min, cfg.z_max);
  return p;
}

inline Measurement measure(const DesignState& state) {
  Measurement m;
  for (RoomType r : kAllRoomTypes) {
    if (r != RoomType::Empty) m.tpr_so_far[r] = 0.0;
  }
  const GridDims d = state.dims();
  const GridPartition& p = state.partition();
  double occupied_area = 0.0;
  for (std::size_t i = 0; i < d.volume(); ++i) {
    const RoomType r = state.at(i);
    if (r == RoomType::Empty) continue;
    const Coord c = d.coord(i);
    const double a = p.cell_area(c.x, c.y);
    occupied_area += a;
    m.tpr_so_far[r] += a;
    ++m.occupied;
  }
  m.far_so_far = occupied_area / p.parcel_area();
  if (occupied_area > 0.0) {
    for (auto& [room, share] : m.tpr_so_far) share /= occupied_area;
  }
  return m;
}

inline Measurement measure(const EnvState& env) { return measure(env.current); }

inline EnvState reset(const EpisodeConstraints& constraints, const GymConfig& cfg = {}) {
  constraints.validate();
  if (cfg.step_cap <= 0) throw ConstraintError("step cap must be positive");
  return EnvState{DesignState(sample_partition(constraints.seed, cfg)), constraints, 0, false,
                  cfg.step_cap, cfg.stop_at_far};
}

inline EnvState step(const EnvState& env, const Action& action) {
  if (env.done) throw EpisodeFinishedError("step called after the episode finished");
  if (!env.current.dims().contains(action.location)) {
    throw BoundsError("action location outside grid");
  }
  if (action.room == RoomType::Empty) throw DomainError("actions must place a non-Empty room");
  EnvState next = env;
  next.current.set(action.location, action.room);
  next.step_count += 1;
  if (next.step_count >= next.step_cap) {
    next.done = true;
  } else if (next.stop_at_far && measure(next.current).far_so_far >= next.constraints.far_target) {
    next.done = true;
  }
  return next;
}

}  // namespace voxseq
