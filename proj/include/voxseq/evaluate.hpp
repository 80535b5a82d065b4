#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "voxseq/agent.hpp"
#include "voxseq/dataset.hpp"
#include "voxseq/errors.hpp"
#include "voxseq/flow.hpp"
#include "voxseq/models.hpp"

namespace voxseq {

// Symmetric PSD square root through an eigendecomposition; negative
// eigenvalues (round-off) are clipped to zero.
inline Matrix matrix_sqrt_psd(const Matrix& m, double sym_tol = 1e-9) {
  if (m.rows() != m.cols()) throw DimensionError("matrix_sqrt_psd: matrix is not square");
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > sym_tol * scale) {
    throw DomainError("matrix_sqrt_psd: matrix is not symmetric");
  }
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) throw DomainError("matrix_sqrt_psd: eigendecomposition failed");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

struct GaussianStats {
  Eigen::VectorXd mean;
  Matrix cov;
};

inline constexpr double kCovRegularization = 1e-6;

// Sample mean and (n - 1)-normalised covariance of the rows, plus eps * I.
inline GaussianStats fit_gaussian(const Matrix& samples, bool diagonal = false, double eps = kCovRegularization) {
  if (samples.rows() < 2) throw StatisticsError("need at least two samples to estimate a covariance");
  GaussianStats g;
  g.mean = samples.colwise().mean().transpose();
  const Matrix centered = samples.rowwise() - g.mean.transpose();
  g.cov = (centered.transpose() * centered) / static_cast<double>(samples.rows() - 1);
  if (diagonal) g.cov = Matrix(g.cov.diagonal().asDiagonal());
  g.cov.diagonal().array() += eps;
  return g;
}

// ||m1 - m2||_2 + Tr(C1 + C2 - 2 (C1 C2)^(1/2)); the mean term is not squared.
// (C1 C2)^(1/2) is evaluated through the symmetric form sqrt(C1) C2 sqrt(C1).
inline double frechet_distance(const GaussianStats& a, const GaussianStats& b, bool diagonal = false) {
  if (a.mean.size() != b.mean.size()) throw DimensionError("frechet_distance: dimension mismatch");
  const double mean_term = (a.mean - b.mean).norm();
  double cross;
  if (diagonal) {
    cross = (a.cov.diagonal().array() * b.cov.diagonal().array()).sqrt().sum();
  } else {
    const Matrix s = matrix_sqrt_psd(a.cov);
    Matrix inner = s * b.cov * s;
    inner = 0.5 * (inner + inner.transpose());
    cross = matrix_sqrt_psd(inner).trace();
  }
  return mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross;
}

// Per-timestep distance between latent groups; group t holds one row per
// sequence reaching step t. The curve covers the steps both sides share.
inline std::vector<double> sequential_fid(const std::vector<Matrix>& reference, const std::vector<Matrix>& candidate,
                                          bool diagonal = false) {
  const std::size_t steps = std::min(reference.size(), candidate.size());
  std::vector<double> out;
  out.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    if (reference[t].rows() < 2 || candidate[t].rows() < 2) {
      throw StatisticsError("timestep " + std::to_string(t) + " has fewer than two samples");
    }
    out.push_back(frechet_distance(fit_gaussian(reference[t], diagonal), fit_gaussian(candidate[t], diagonal),
                                   diagonal));
  }
  return out;
}

// Latents of every sequence grouped by timestep.
inline std::vector<Matrix> latents_by_step(const SequenceModel& encoder, const std::vector<Matrix>& sequences) {
  const auto results = encoder.forward_all(sequences);
  std::size_t steps = 0;
  for (const auto& r : results) steps = std::max<std::size_t>(steps, r.latents.rows());
  std::vector<std::vector<Index>> owners(steps);
  for (std::size_t i = 0; i < results.size(); ++i) {
    for (Index t = 0; t < results[i].latents.rows(); ++t) owners[t].push_back(static_cast<Index>(i));
  }
  std::vector<Matrix> groups(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    groups[t].resize(static_cast<Index>(owners[t].size()), encoder.config().attention.model_dim);
    for (std::size_t k = 0; k < owners[t].size(); ++k) {
      groups[t].row(static_cast<Index>(k)) = results[owners[t][k]].latents.row(static_cast<Index>(t));
    }
  }
  return groups;
}

enum class Winner { First, Second, Tie };

inline std::string winner_name(Winner w) {
  switch (w) {
    case Winner::First: return "first";
    case Winner::Second: return "second";
    case Winner::Tie: return "tie";
  }
  return "?";
}

struct PreferenceVerdict {
  Winner winner = Winner::Tie;
  double score_first = 0.0;
  double score_second = 0.0;
};

inline PreferenceVerdict verdict(double first, double second, bool higher_is_better) {
  PreferenceVerdict v{Winner::Tie, first, second};
  if (first != second) v.winner = ((first > second) == higher_is_better) ? Winner::First : Winner::Second;
  return v;
}

inline void check_encoder_flow(const SequenceModel& encoder, const FlowModel& flow) {
  if (encoder.config().attention.model_dim != flow.config().dim) {
    throw DimensionError("flow dim does not match the encoder latent width");
  }
}

// Log-likelihood of each sequence's final latent under the flow.
inline std::vector<double> flow_scores(const SequenceModel& encoder, const FlowModel& flow,
                                       const std::vector<Matrix>& sequences) {
  check_encoder_flow(encoder, flow);
  // Row by row, so a score never depends on the other sequences scored with it.
  const Matrix z = final_latents(encoder, sequences);
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(z.rows()));
  for (Index i = 0; i < z.rows(); ++i) out.push_back(flow.log_prob(Matrix(z.row(i)))(0));
  return out;
}

inline std::vector<double> vae_scores(const SequenceModel& vae, const std::vector<Matrix>& sequences) {
  if (vae.kind() != ModelKind::VAE) throw UsageError("VAE preference needs a VAE model");
  std::vector<double> out;
  for (const auto& r : vae.forward_all(sequences)) {
    out.push_back(r.posterior_mean.row(r.posterior_mean.rows() - 1).norm());
  }
  return out;
}

inline PreferenceVerdict flow_preference(const SequenceModel& encoder, const FlowModel& flow, const Matrix& a,
                                         const Matrix& b) {
  const auto s = flow_scores(encoder, flow, {a, b});
  return verdict(s[0], s[1], true);
}

inline PreferenceVerdict vae_preference(const SequenceModel& vae, const Matrix& a, const Matrix& b) {
  const auto s = vae_scores(vae, {a, b});
  return verdict(s[0], s[1], false);
}

// Fraction of pairs where the expert side wins; ties count one half.
inline double preference_accuracy(const std::vector<double>& expert, const std::vector<double>& corrupted,
                                  bool higher_is_better) {
  if (expert.size() != corrupted.size()) throw DimensionError("preference_accuracy: pair count mismatch");
  if (expert.empty()) return 0.5;
  double wins = 0.0;
  for (std::size_t i = 0; i < expert.size(); ++i) {
    const Winner w = verdict(expert[i], corrupted[i], higher_is_better).winner;
    wins += w == Winner::First ? 1.0 : (w == Winner::Tie ? 0.5 : 0.0);
  }
  return wins / static_cast<double>(expert.size());
}

// Expert prefix length for a corrupted sequence: a fraction of the episode
// length in percent mode, an action count otherwise.
struct HorizonLevel {
  double value = 0.0;
  bool percent = true;

  std::size_t horizon(std::size_t length) const {
    if (value < 0.0) throw DomainError("horizon must be nonnegative");
    if (percent) return static_cast<std::size_t>(std::llround(value * static_cast<double>(length)));
    return std::min(length, static_cast<std::size_t>(value));
  }

  std::string label() const {
    if (percent) return std::to_string(static_cast<int>(std::lround(value * 100.0))) + "%";
    return std::to_string(static_cast<long long>(value));
  }
};

inline std::vector<HorizonLevel> percent_levels() {
  return {{0.0, true}, {0.25, true}, {0.5, true}, {0.75, true}, {1.0, true}};
}

inline EpisodeRecord corrupt_record(const EpisodeRecord& expert, const HorizonLevel& level, std::uint64_t seed) {
  EpisodeRecord r = expert;
  r.actions = horizon_policy_actions(expert.actions, expert.partition.dims(), level.horizon(expert.actions.size()),
                                     seed);
  return r;
}

inline Matrix embed_record(const EpisodeRecord& record, std::size_t max_len, bool unbounded) {
  const DesignSequence seq = unbounded ? replay_unbounded(record) : replay(record);
  return embed_states(subsample(seq, max_len).states);
}

inline std::vector<Matrix> corrupted_sequences(const std::vector<EpisodeRecord>& experts, const HorizonLevel& level,
                                               std::uint64_t seed, std::size_t max_len) {
  std::vector<Matrix> out;
  out.reserve(experts.size());
  for (std::size_t i = 0; i < experts.size(); ++i) {
    out.push_back(embed_record(corrupt_record(experts[i], level, derive_seed(seed, i)), max_len, true));
  }
  return out;
}

struct PreferenceRow {
  HorizonLevel level;
  double accuracy = 0.0;
};

using SequenceScorer = std::function<std::vector<double>(const std::vector<Matrix>&)>;

// Accuracy of `score` at telling each expert sequence from its corrupted
// counterpart, for every horizon level.
inline std::vector<PreferenceRow> preference_experiment(const SequenceScorer& score, bool higher_is_better,
                                                        const std::vector<EpisodeRecord>& experts,
                                                        const std::vector<HorizonLevel>& levels, std::uint64_t seed,
                                                        std::size_t max_len) {
  std::vector<Matrix> expert_seqs;
  for (const auto& r : experts) expert_seqs.push_back(embed_record(r, max_len, false));
  const auto expert_scores = score(expert_seqs);
  std::vector<PreferenceRow> rows;
  for (const HorizonLevel& level : levels) {
    const auto corrupted = corrupted_sequences(experts, level, seed, max_len);
    rows.push_back({level, preference_accuracy(expert_scores, score(corrupted), higher_is_better)});
  }
  return rows;
}

inline std::vector<PreferenceRow> preference_experiment(const SequenceModel& encoder, const FlowModel& flow,
                                                        const std::vector<EpisodeRecord>& experts,
                                                        const std::vector<HorizonLevel>& levels, std::uint64_t seed,
                                                        std::size_t max_len) {
  check_encoder_flow(encoder, flow);
  return preference_experiment([&](const std::vector<Matrix>& s) { return flow_scores(encoder, flow, s); }, true,
                               experts, levels, seed, max_len);
}

inline std::vector<PreferenceRow> vae_preference_experiment(const SequenceModel& vae,
                                                            const std::vector<EpisodeRecord>& experts,
                                                            const std::vector<HorizonLevel>& levels,
                                                            std::uint64_t seed, std::size_t max_len) {
  return preference_experiment([&](const std::vector<Matrix>& s) { return vae_scores(vae, s); }, false, experts,
                               levels, seed, max_len);
}

}  // namespace voxseq
