#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "voxseq/dataset.hpp"
#include "voxseq/errors.hpp"
#include "voxseq/models.hpp"
#include "voxseq/voxel.hpp"

namespace voxseq {

// Quantises a raw prediction against the previous state: an occupied voxel
// may change type but never becomes Empty again.
template <class Values>
DesignState apply_mapping(const DesignState& prev, const Values& raw) {
  DesignState decoded = decode_values(raw, prev.partition());
  for (std::size_t i = 0; i < prev.rooms().size(); ++i) {
    if (prev.at(i) != RoomType::Empty && decoded.at(i) == RoomType::Empty) decoded.set(i, prev.at(i));
  }
  return decoded;
}

inline DesignState apply_mapping(const DesignState& prev, const DesignEmbedding& raw) {
  return apply_mapping(prev, raw.values);
}

struct RolloutConfig {
  std::size_t prefix_len = 5;
  std::size_t horizon = 50;
  // Past the model's max length, condition on the most recent window only.
  bool sliding_window = true;

  void validate() const {
    if (prefix_len < 1) throw DomainError("rollout prefix_len must be >= 1");
    if (horizon <= prefix_len) throw DomainError("rollout horizon must exceed prefix_len");
  }
};

// Greedy autoregressive completion up to `horizon` states, prefix included.
inline std::vector<DesignState> rollout(const SequenceModel& model, const std::vector<DesignState>& prefix,
                                        const RolloutConfig& cfg) {
  if (model.kind() != ModelKind::AVD) throw UsageError("rollout needs a next-step (AVD) model");
  cfg.validate();
  if (prefix.size() != cfg.prefix_len) throw LengthError("prefix length does not match the rollout config");
  const auto window = static_cast<std::size_t>(model.config().max_len);
  if (prefix.size() > window) throw LengthError("prefix is longer than the model max length");
  if (!cfg.sliding_window && cfg.horizon > window) {
    throw LengthError("rollout horizon exceeds the model max length");
  }
  std::vector<DesignState> states = prefix;
  Matrix emb = embed_states(states);
  while (states.size() < cfg.horizon) {
    const Index rows = std::min<Index>(emb.rows(), static_cast<Index>(window));
    const Matrix context = emb.bottomRows(rows);
    const auto f = model.forward(context);
    const Eigen::RowVectorXd next = f.predictions.row(f.predictions.rows() - 1);
    states.push_back(apply_mapping(states.back(), next));
    emb.conservativeResize(emb.rows() + 1, Eigen::NoChange);
    const auto e = encode_state(states.back());
    for (Index j = 0; j < emb.cols(); ++j) emb(emb.rows() - 1, j) = e.values[j];
  }
  return states;
}

// z_t of every rollout grouped by t. Steps past the model window use the
// latent at the end of the window closing at t.
inline std::vector<Matrix> rollout_latents(const SequenceModel& model,
                                           const std::vector<std::vector<DesignState>>& rollouts) {
  if (rollouts.empty()) return {};
  const auto window = static_cast<Index>(model.config().max_len);
  const int d = model.config().attention.model_dim;
  std::size_t steps = 0;
  for (const auto& r : rollouts) steps = std::max(steps, r.size());
  std::vector<std::vector<Eigen::RowVectorXd>> groups(steps);
  for (const auto& r : rollouts) {
    const Matrix emb = embed_states(r);
    const Index head = std::min<Index>(emb.rows(), window);
    const auto f = model.forward(emb.topRows(head));
    for (Index t = 0; t < head; ++t) groups[t].push_back(f.latents.row(t));
    for (Index t = head; t < emb.rows(); ++t) {
      const auto g = model.forward(emb.middleRows(t - window + 1, window));
      groups[t].push_back(g.latents.row(window - 1));
    }
  }
  std::vector<Matrix> out(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    out[t].resize(static_cast<Index>(groups[t].size()), d);
    for (std::size_t k = 0; k < groups[t].size(); ++k) out[t].row(static_cast<Index>(k)) = groups[t][k];
  }
  return out;
}

// Dataset record for a rollout: one action per changed voxel, with
// `state_boundaries[t]` the number of actions that reproduce state t.
struct GeneratedRecord {
  EpisodeRecord record;
  std::vector<std::size_t> state_boundaries;
};

inline GeneratedRecord rollout_record(const std::vector<DesignState>& states, const EpisodeConstraints& constraints,
                                      std::uint64_t seed) {
  if (states.empty()) throw LengthError("empty rollout");
  GeneratedRecord g;
  g.record.seed = seed;
  g.record.constraints = constraints;
  g.record.partition = states.front().partition();
  g.record.generated = true;
  const GridDims d = states.front().dims();
  DesignState prev(states.front().partition());
  for (const DesignState& s : states) {
    for (std::size_t i = 0; i < s.rooms().size(); ++i) {
      if (s.at(i) != prev.at(i)) {
        if (s.at(i) == RoomType::Empty) throw DomainError("rollout state deletes an occupied voxel");
        g.record.actions.push_back({d.coord(i), s.at(i)});
      }
    }
    g.state_boundaries.push_back(g.record.actions.size());
    prev = s;
  }
  return g;
}

inline nlohmann::json to_json(const GeneratedRecord& g) {
  nlohmann::json j = to_json(g.record);
  j["generated"] = true;
  j["state_boundaries"] = g.state_boundaries;
  return j;
}

}  // namespace voxseq
