#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxseq/dataset.hpp"
#include "voxseq/errors.hpp"
#include "voxseq/nn/checkpoint.hpp"
#include "voxseq/nn/layers.hpp"
#include "voxseq/nn/ops.hpp"
#include "voxseq/nn/optim.hpp"
#include "voxseq/rng.hpp"
#include "voxseq/voxel.hpp"

namespace voxseq {

using nn::Index;
using nn::Matrix;

enum class ModelKind { VDR, AVD, VAE };

inline std::string kind_name(ModelKind k) {
  switch (k) {
    case ModelKind::VDR: return "vdr";
    case ModelKind::AVD: return "avd";
    case ModelKind::VAE: return "vae";
  }
  return "?";
}

inline ModelKind kind_from_name(const std::string& s) {
  if (s == "vdr") return ModelKind::VDR;
  if (s == "avd") return ModelKind::AVD;
  if (s == "vae") return ModelKind::VAE;
  throw UsageError("unknown model kind '" + s + "' (expected vdr, avd or vae)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::VDR;
  nn::AttentionConfig attention{};
  int max_len = 41;  // positions, i.e. states per sequence
  double beta = 1.0;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"kind", kind_name(c.kind)},
          {"layers", c.attention.layers},
          {"heads", c.attention.heads},
          {"model_dim", c.attention.model_dim},
          {"input_dim", c.attention.input_dim},
          {"max_len", c.max_len},
          {"beta", c.beta},
          {"seed", c.seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.kind = kind_from_name(j.at("kind").get<std::string>());
  c.attention.layers = j.at("layers").get<int>();
  c.attention.heads = j.at("heads").get<int>();
  c.attention.model_dim = j.at("model_dim").get<int>();
  c.attention.input_dim = j.at("input_dim").get<int>();
  c.max_len = j.at("max_len").get<int>();
  c.beta = j.value("beta", 1.0);
  c.seed = j.value("seed", std::uint64_t{0});
  return c;
}

// Embeddings of a state list as rows of a [T, volume] matrix.
inline Matrix embed_states(const std::vector<DesignState>& states) {
  if (states.empty()) throw LengthError("cannot embed an empty state list");
  const Index width = static_cast<Index>(states.front().rooms().size());
  Matrix m(static_cast<Index>(states.size()), width);
  for (std::size_t t = 0; t < states.size(); ++t) {
    if (static_cast<Index>(states[t].rooms().size()) != width) throw DimensionError("states of differing volume");
    const auto e = encode_state(states[t]);
    for (Index j = 0; j < width; ++j) m(static_cast<Index>(t), j) = e.values[j];
  }
  return m;
}

inline std::vector<Matrix> embed_sequences(const std::vector<DesignSequence>& seqs) {
  std::vector<Matrix> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(embed_states(s.states));
  return out;
}

// Plain-matrix result of an inference pass over one sequence.
struct ForwardResult {
  Matrix predictions;  // [T, input_dim]
  Matrix latents;      // [T, model_dim], final attention layer (after its norm)
  Matrix posterior_mean;    // VAE only
  Matrix posterior_logvar;  // VAE only
};

class SequenceModel {
 public:
  // Graph-carrying outputs of a batched pass; rows of all sequences stacked.
  struct BatchOutput {
    nn::Tensor predictions;
    nn::Tensor latents;
    nn::Tensor mu;
    nn::Tensor logvar;
    nn::Segments segments;
  };

  explicit SequenceModel(ModelConfig cfg) : cfg_(cfg) {
    cfg_.attention.validate();
    if (cfg_.max_len < 1) throw LengthError("max_len must be positive");
    Rng rng(derive_seed(cfg_.seed, 0x1A7E));
    const int d = cfg_.attention.model_dim;
    proj_ = nn::Linear(params_, "proj", cfg_.attention.input_dim, d, rng);
    for (int l = 0; l < cfg_.attention.layers; ++l) {
      blocks_.emplace_back(params_, "block" + std::to_string(l), d, cfg_.attention.heads, rng);
    }
    ln_f_ = nn::LayerNorm(params_, "ln_f", d);
    if (cfg_.kind == ModelKind::VAE) {
      mu_ = nn::Linear(params_, "posterior_mean", d, d, rng);
      logvar_ = nn::Linear(params_, "posterior_logvar", d, d, rng);
    }
    decoder_ = nn::Linear(params_, "decoder", d, cfg_.attention.input_dim, rng);
    pe_ = nn::positional_encoding(cfg_.max_len, d);
  }

  const ModelConfig& config() const { return cfg_; }
  ModelKind kind() const { return cfg_.kind; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }

  // With `noise` set (VAE training) the decoder sees a reparameterised
  // sample; otherwise it decodes the posterior mean.
  BatchOutput forward_batch(const std::vector<const Matrix*>& seqs, Rng* noise = nullptr) const {
    if (seqs.empty()) throw LengthError("forward on an empty batch");
    const Index width = cfg_.attention.input_dim;
    const Index d = cfg_.attention.model_dim;
    Index rows = 0;
    BatchOutput out;
    for (const Matrix* s : seqs) {
      if (s->rows() < 1) throw LengthError("sequence must hold at least one state");
      if (s->rows() > cfg_.max_len) {
        throw LengthError("sequence of length " + std::to_string(s->rows()) + " exceeds model max length " +
                          std::to_string(cfg_.max_len));
      }
      if (s->cols() != width) throw DimensionError("embedding width does not match the model input");
      out.segments.push_back(s->rows());
      rows += s->rows();
    }
    Matrix x(rows, width), pos(rows, d);
    Index r = 0;
    for (const Matrix* s : seqs) {
      x.middleRows(r, s->rows()) = *s;
      pos.middleRows(r, s->rows()) = pe_.topRows(s->rows());
      r += s->rows();
    }
    nn::Tensor h = nn::add_constant(proj_(nn::Tensor(std::move(x))), pos);
    for (const auto& b : blocks_) h = b(h, out.segments);
    out.latents = ln_f_(h);
    nn::Tensor dec_in = out.latents;
    if (cfg_.kind == ModelKind::VAE) {
      out.mu = mu_(out.latents);
      out.logvar = logvar_(out.latents);
      dec_in = out.mu;
      if (noise) {
        Matrix eps(rows, d);
        for (Index i = 0; i < eps.size(); ++i) eps.data()[i] = noise->normal();
        const nn::Tensor sd = nn::exp(nn::scale(out.logvar, 0.5));
        dec_in = nn::add(out.mu, nn::mul(sd, nn::Tensor(std::move(eps))));
      }
    }
    out.predictions = nn::sigmoid(decoder_(dec_in));
    return out;
  }

  ForwardResult forward(const Matrix& embeddings) const {
    nn::NoGradGuard guard;
    auto b = forward_batch({&embeddings});
    return {b.predictions.value(), b.latents.value(), b.mu.value(), b.logvar.value()};
  }

  // Inference over many sequences. With batch 1 every result is bitwise what
  // forward() gives; larger batches are faster but their round-off depends on
  // which sequences share a batch.
  std::vector<ForwardResult> forward_all(const std::vector<Matrix>& seqs, std::size_t batch = 1) const {
    if (batch == 0) throw UsageError("forward_all: batch must be positive");
    nn::NoGradGuard guard;
    std::vector<ForwardResult> out;
    out.reserve(seqs.size());
    for (std::size_t i = 0; i < seqs.size(); i += batch) {
      std::vector<const Matrix*> group;
      for (std::size_t j = i; j < std::min(seqs.size(), i + batch); ++j) group.push_back(&seqs[j]);
      auto b = forward_batch(group);
      Index r = 0;
      for (Index len : b.segments) {
        ForwardResult f;
        f.predictions = b.predictions.value().middleRows(r, len);
        f.latents = b.latents.value().middleRows(r, len);
        if (cfg_.kind == ModelKind::VAE) {
          f.posterior_mean = b.mu.value().middleRows(r, len);
          f.posterior_logvar = b.logvar.value().middleRows(r, len);
        }
        out.push_back(std::move(f));
        r += len;
      }
    }
    return out;
  }

  nn::Checkpoint to_checkpoint() const {
    nn::Checkpoint ck;
    ck.header = {{"format", "sequence-model"}, {"config", to_json(cfg_)}};
    ck.tensors = params_.snapshot();
    return ck;
  }

  static SequenceModel from_checkpoint(const nn::Checkpoint& ck) {
    if (ck.header.value("format", std::string()) != "sequence-model") {
      throw StorageError("checkpoint does not hold a sequence model");
    }
    SequenceModel m(model_config_from_json(ck.header.at("config")));
    m.params_.load(ck.tensors);
    return m;
  }

  void save(const std::filesystem::path& path) const { nn::write_checkpoint(path, to_checkpoint()); }
  static SequenceModel load(const std::filesystem::path& path) { return from_checkpoint(nn::read_checkpoint(path)); }

 private:
  ModelConfig cfg_;
  nn::ParamSet params_;
  nn::Linear proj_;
  std::vector<nn::AttentionBlock> blocks_;
  nn::LayerNorm ln_f_;
  nn::Linear mu_, logvar_;
  nn::Linear decoder_;
  Matrix pe_;
};

// Input rows and targets for one sequence under a model kind.
inline std::pair<Matrix, Matrix> training_pair(ModelKind kind, const Matrix& seq) {
  if (kind == ModelKind::AVD) {
    if (seq.rows() < 2) throw LengthError("next-step training needs at least two states");
    return {seq.topRows(seq.rows() - 1), seq.bottomRows(seq.rows() - 1)};
  }
  return {seq, seq};
}

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double lr = 1e-3;
  std::string optimizer = "adam";  // or "sgd"
  double grad_clip = 1.0;          // <= 0 disables
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> loss_curve;  // mean batch loss per epoch
};

// BCE reconstruction plus beta-weighted KL, both per element of the output.
inline nn::Tensor model_loss(const SequenceModel& model, const SequenceModel::BatchOutput& out,
                             const Matrix& targets) {
  nn::Tensor loss = nn::bce_loss(out.predictions, targets);
  if (model.kind() == ModelKind::VAE) {
    const double denom = static_cast<double>(targets.size());
    loss = nn::add(loss, nn::scale(nn::gaussian_kl(out.mu, out.logvar), model.config().beta / denom));
  }
  return loss;
}

using EpochCallback = std::function<void(int epoch, double loss)>;

inline TrainReport train(SequenceModel& model, const std::vector<Matrix>& sequences, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  if (sequences.empty()) throw TrainingError("training split is empty");
  if (cfg.batch_size < 1) throw UsageError("batch_size must be positive");
  if (!(cfg.lr >= 0.0)) throw UsageError("learning rate must be nonnegative");
  if (cfg.optimizer != "adam" && cfg.optimizer != "sgd") throw UsageError("optimizer must be adam or sgd");

  std::vector<Matrix> inputs, targets;
  for (const Matrix& s : sequences) {
    if (model.kind() == ModelKind::AVD && s.rows() < 2) continue;
    auto [in, tg] = training_pair(model.kind(), s);
    inputs.push_back(std::move(in));
    targets.push_back(std::move(tg));
  }
  if (inputs.empty()) throw TrainingError("no sequence is long enough to train on");

  nn::Adam adam(model.params(), {.lr = cfg.lr});
  Rng order_rng(derive_seed(cfg.seed, 0x0DE2));
  Rng noise_rng(derive_seed(cfg.seed, 0x7015E));
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    int batches = 0;
    for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(cfg.batch_size)) {
      std::vector<const Matrix*> group;
      Index rows = 0;
      const std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t j = i; j < end; ++j) {
        group.push_back(&inputs[order[j]]);
        rows += inputs[order[j]].rows();
      }
      Matrix tg(rows, model.config().attention.input_dim);
      Index r = 0;
      for (std::size_t j = i; j < end; ++j) {
        tg.middleRows(r, targets[order[j]].rows()) = targets[order[j]];
        r += targets[order[j]].rows();
      }
      auto out = model.forward_batch(group, model.kind() == ModelKind::VAE ? &noise_rng : nullptr);
      nn::Tensor loss = model_loss(model, out, tg);
      if (!std::isfinite(loss.item())) {
        throw TrainingError("loss became non-finite in epoch " + std::to_string(epoch));
      }
      model.params().zero_grad();
      loss.backward();
      if (cfg.grad_clip > 0.0) nn::clip_grad_norm(model.params(), cfg.grad_clip);
      if (cfg.optimizer == "adam") {
        adam.step(model.params());
      } else {
        nn::sgd_step(model.params(), cfg.lr);
      }
      total += loss.item();
      ++batches;
    }
    model.params().zero_grad();
    report.loss_curve.push_back(total / batches);
    if (on_epoch) on_epoch(epoch, report.loss_curve.back());
  }
  return report;
}

// Fraction of entries whose quantised room codes agree, per row.
inline Eigen::VectorXd row_match(const Matrix& pred, const Matrix& target) {
  Eigen::VectorXd out(pred.rows());
  for (Index t = 0; t < pred.rows(); ++t) {
    Index same = 0;
    for (Index j = 0; j < pred.cols(); ++j) same += quantize_level(pred(t, j)) == quantize_level(target(t, j));
    out(t) = static_cast<double>(same) / static_cast<double>(pred.cols());
  }
  return out;
}

struct AccuracyReport {
  std::vector<double> curve;        // mean accuracy at each timestep
  std::vector<std::size_t> counts;  // sequences contributing at each timestep
  std::vector<double> per_sequence;
  double mean = 0.0;
  double stddev = 0.0;
};

// Voxel-level reconstruction accuracy; for AVD the prediction at t is scored
// against state t + 1.
inline AccuracyReport reconstruction_accuracy(const SequenceModel& model, const std::vector<Matrix>& sequences) {
  AccuracyReport rep;
  std::vector<Matrix> inputs, targets;
  for (const Matrix& s : sequences) {
    if (model.kind() == ModelKind::AVD && s.rows() < 2) continue;
    auto [in, tg] = training_pair(model.kind(), s);
    inputs.push_back(std::move(in));
    targets.push_back(std::move(tg));
  }
  const auto results = model.forward_all(inputs);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const Eigen::VectorXd acc = row_match(results[i].predictions, targets[i]);
    if (static_cast<std::size_t>(acc.size()) > rep.curve.size()) {
      rep.curve.resize(acc.size(), 0.0);
      rep.counts.resize(acc.size(), 0);
    }
    for (Index t = 0; t < acc.size(); ++t) {
      rep.curve[t] += acc(t);
      ++rep.counts[t];
    }
    rep.per_sequence.push_back(acc.mean());
  }
  for (std::size_t t = 0; t < rep.curve.size(); ++t) rep.curve[t] /= static_cast<double>(rep.counts[t]);
  if (!rep.per_sequence.empty()) {
    const double n = static_cast<double>(rep.per_sequence.size());
    rep.mean = std::accumulate(rep.per_sequence.begin(), rep.per_sequence.end(), 0.0) / n;
    double sq = 0.0;
    for (double a : rep.per_sequence) sq += (a - rep.mean) * (a - rep.mean);
    rep.stddev = std::sqrt(sq / n);
  }
  return rep;
}

// ||z_T - 0|| with z_T the posterior mean at the final step.
inline double vae_latent_distance(const SequenceModel& model, const Matrix& sequence) {
  if (model.kind() != ModelKind::VAE) throw UsageError("latent distance needs a VAE model");
  const auto f = model.forward(sequence);
  return f.posterior_mean.row(f.posterior_mean.rows() - 1).norm();
}

// Final-step latent z_T of each sequence.
inline Matrix final_latents(const SequenceModel& model, const std::vector<Matrix>& sequences) {
  const auto results = model.forward_all(sequences);
  Matrix z(static_cast<Index>(results.size()), model.config().attention.model_dim);
  for (std::size_t i = 0; i < results.size(); ++i) {
    z.row(static_cast<Index>(i)) = results[i].latents.row(results[i].latents.rows() - 1);
  }
  return z;
}

}  // namespace voxseq
