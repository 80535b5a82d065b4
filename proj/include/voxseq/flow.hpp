#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <numbers>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "voxseq/errors.hpp"
#include "voxseq/nn/checkpoint.hpp"
#include "voxseq/nn/layers.hpp"
#include "voxseq/nn/ops.hpp"
#include "voxseq/nn/optim.hpp"
#include "voxseq/rng.hpp"

namespace voxseq {

using nn::Index;
using nn::Matrix;

struct FlowConfig {
  int dim = 128;
  int couplings = 5;
  int hidden = 128;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const FlowConfig& c) {
  return {{"dim", c.dim}, {"couplings", c.couplings}, {"hidden", c.hidden}, {"seed", c.seed}};
}

inline FlowConfig flow_config_from_json(const nlohmann::json& j) {
  return {j.at("dim").get<int>(), j.at("couplings").get<int>(), j.at("hidden").get<int>(),
          j.value("seed", std::uint64_t{0})};
}

inline constexpr double kMaxLogScale = 5.0;

// Affine coupling: coordinates with mask 1 pass through and condition a
// 2-hidden-layer tanh network giving (s, t) for the rest, y = x * exp(s) + t.
struct Coupling {
  std::vector<Index> fixed;
  std::vector<Index> moved;
  nn::Linear in, mid, out;

  Coupling(nn::ParamSet& params, const std::string& name, int dim, int hidden, int parity, Rng& rng) {
    for (int j = 0; j < dim; ++j) (j % 2 == parity ? fixed : moved).push_back(j);
    if (fixed.empty() || moved.empty()) throw DimensionError("coupling needs dim >= 2");
    in = nn::Linear(params, name + ".in", static_cast<Index>(fixed.size()), hidden, rng);
    mid = nn::Linear(params, name + ".mid", hidden, hidden, rng);
    // Zero output layer: every coupling starts as the identity.
    out = nn::Linear(params, name + ".out", hidden, 2 * static_cast<Index>(moved.size()), rng, true);
  }

  std::pair<nn::Tensor, nn::Tensor> scale_shift(const nn::Tensor& cond) const {
    const nn::Tensor raw = out(nn::tanh(mid(nn::tanh(in(cond)))));
    const Index n = static_cast<Index>(moved.size());
    const nn::Tensor s = nn::scale(nn::tanh(nn::scale(nn::slice_cols(raw, 0, n), 1.0 / kMaxLogScale)), kMaxLogScale);
    return {s, nn::slice_cols(raw, n, n)};
  }

  std::vector<double> mask(int dim) const {
    std::vector<double> m(dim, 0.0);
    for (Index j : fixed) m[j] = 1.0;
    return m;
  }
};

struct FlowForward {
  nn::Tensor u;        // [N, dim]
  nn::Tensor log_det;  // [N, 1]
  std::vector<nn::Tensor> layer_log_dets;
};

class FlowModel {
 public:
  explicit FlowModel(FlowConfig cfg) : cfg_(cfg) {
    if (cfg_.dim < 2 || cfg_.couplings < 1 || cfg_.hidden < 1) throw DimensionError("invalid flow config");
    Rng rng(derive_seed(cfg_.seed, 0xF10));
    for (int l = 0; l < cfg_.couplings; ++l) {
      layers_.emplace_back(params_, "coupling" + std::to_string(l), cfg_.dim, cfg_.hidden, l % 2, rng);
    }
    mean_ = Matrix::Zero(1, cfg_.dim);
    std_ = Matrix::Ones(1, cfg_.dim);
  }

  const FlowConfig& config() const { return cfg_; }
  nn::ParamSet& params() { return params_; }
  const nn::ParamSet& params() const { return params_; }
  const std::vector<Coupling>& layers() const { return layers_; }
  const Matrix& shift() const { return mean_; }
  const Matrix& spread() const { return std_; }

  void set_standardization(const Matrix& mean, const Matrix& stddev) {
    if (mean.cols() != cfg_.dim || stddev.cols() != cfg_.dim || mean.rows() != 1 || stddev.rows() != 1) {
      throw DimensionError("standardisation stats do not match flow dim");
    }
    if ((stddev.array() <= 0.0).any()) throw DomainError("standardisation spread must be positive");
    mean_ = mean;
    std_ = stddev;
  }

  Matrix standardize(const Matrix& z) const {
    check_dim(z);
    return ((z.rowwise() - mean_.row(0)).array().rowwise() / std_.row(0).array()).matrix();
  }

  // Couplings only, on already standardised inputs.
  FlowForward forward_tensor(const nn::Tensor& x) const {
    FlowForward f;
    nn::Tensor h = x;
    for (const Coupling& c : layers_) {
      const nn::Tensor cond = nn::gather_cols(h, c.fixed);
      auto [s, t] = c.scale_shift(cond);
      const nn::Tensor y = nn::add(nn::mul(nn::gather_cols(h, c.moved), nn::exp(s)), t);
      h = nn::merge_cols(cond, c.fixed, y, c.moved);
      f.layer_log_dets.push_back(nn::row_sum(s));
    }
    f.u = h;
    f.log_det = f.layer_log_dets.front();
    for (std::size_t i = 1; i < f.layer_log_dets.size(); ++i) f.log_det = nn::add(f.log_det, f.layer_log_dets[i]);
    return f;
  }

  // Couplings only: returns u and per-row log|det J|.
  std::pair<Matrix, Eigen::VectorXd> forward(const Matrix& x) const {
    check_dim(x);
    nn::NoGradGuard guard;
    auto f = forward_tensor(nn::Tensor(x));
    return {f.u.value(), f.log_det.value().col(0)};
  }

  Matrix inverse(const Matrix& u) const {
    check_dim(u);
    nn::NoGradGuard guard;
    nn::Tensor h(u);
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      const nn::Tensor cond = nn::gather_cols(h, it->fixed);
      auto [s, t] = it->scale_shift(cond);
      Matrix x = (nn::gather_cols(h, it->moved).value() - t.value()).cwiseProduct(
          (-s.value().array()).exp().matrix());
      h = nn::merge_cols(cond, it->fixed, nn::Tensor(std::move(x)), it->moved);
    }
    return h.value();
  }

  // log p(z) per row: standard normal base, couplings, and the standardisation Jacobian.
  nn::Tensor log_prob_tensor(const Matrix& z) const {
    auto f = forward_tensor(nn::Tensor(standardize(z)));
    const double d = static_cast<double>(cfg_.dim);
    const double constant = -0.5 * d * std::log(2.0 * std::numbers::pi) - std_.array().log().sum();
    const nn::Tensor sq = nn::row_sum(nn::square(f.u));
    Matrix c = Matrix::Constant(z.rows(), 1, constant);
    return nn::add_constant(nn::add(nn::scale(sq, -0.5), f.log_det), c);
  }

  Eigen::VectorXd log_prob(const Matrix& z) const {
    nn::NoGradGuard guard;
    return log_prob_tensor(z).value().col(0);
  }

  double log_prob(const Eigen::RowVectorXd& z) const { return log_prob(Matrix(z))(0); }

  nn::Checkpoint to_checkpoint() const {
    nn::Checkpoint ck;
    ck.header = {{"format", "flow"}, {"config", to_json(cfg_)}};
    ck.tensors = params_.snapshot();
    ck.tensors["stats.mean"] = mean_;
    ck.tensors["stats.std"] = std_;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto m = layers_[l].mask(cfg_.dim);
      ck.tensors["mask" + std::to_string(l)] = Eigen::Map<const Matrix>(m.data(), 1, cfg_.dim);
    }
    return ck;
  }

  static FlowModel from_checkpoint(const nn::Checkpoint& ck) {
    if (ck.header.value("format", std::string()) != "flow") throw StorageError("checkpoint does not hold a flow");
    FlowModel f(flow_config_from_json(ck.header.at("config")));
    f.params_.load(ck.tensors);
    for (std::size_t l = 0; l < f.layers_.size(); ++l) {
      auto it = ck.tensors.find("mask" + std::to_string(l));
      if (it == ck.tensors.end()) throw StorageError("flow checkpoint is missing a mask");
      const auto m = f.layers_[l].mask(f.cfg_.dim);
      if (it->second != Eigen::Map<const Matrix>(m.data(), 1, f.cfg_.dim)) {
        throw StorageError("flow checkpoint mask does not match its config");
      }
    }
    if (!ck.tensors.count("stats.mean") || !ck.tensors.count("stats.std")) {
      throw StorageError("flow checkpoint is missing its standardisation stats");
    }
    f.set_standardization(ck.tensors.at("stats.mean"), ck.tensors.at("stats.std"));
    return f;
  }

  void save(const std::filesystem::path& path) const { nn::write_checkpoint(path, to_checkpoint()); }
  static FlowModel load(const std::filesystem::path& path) { return from_checkpoint(nn::read_checkpoint(path)); }

 private:
  void check_dim(const Matrix& z) const {
    if (z.cols() != cfg_.dim) {
      throw DimensionError("flow input has " + std::to_string(z.cols()) + " columns, expected " +
                           std::to_string(cfg_.dim));
    }
  }

  FlowConfig cfg_;
  nn::ParamSet params_;
  std::vector<Coupling> layers_;
  Matrix mean_, std_;
};

struct FlowTrainConfig {
  int epochs = 200;
  int batch_size = 64;
  double lr = 1e-3;
  double grad_clip = 5.0;
  bool standardize = true;
  std::uint64_t seed = 0;
};

struct FlowTrainReport {
  std::vector<double> nll_curve;  // mean NLL per dimension, per epoch
};

inline double mean_nll_per_dim(const FlowModel& flow, const Matrix& z) {
  return -flow.log_prob(z).mean() / static_cast<double>(flow.config().dim);
}

// Maximum likelihood on the given latents (one row per sequence).
inline FlowTrainReport train_flow(FlowModel& flow, const Matrix& latents, const FlowTrainConfig& cfg,
                                  const std::function<void(int, double)>& on_epoch = {}) {
  if (latents.rows() == 0) throw TrainingError("no latents to train the flow on");
  if (latents.cols() != flow.config().dim) throw DimensionError("latent width does not match flow dim");
  if (cfg.batch_size < 1) throw UsageError("batch_size must be positive");
  if (!(cfg.lr >= 0.0)) throw UsageError("learning rate must be nonnegative");
  if (cfg.standardize) {
    const Matrix mean = latents.colwise().mean();
    Matrix sd = ((latents.rowwise() - mean.row(0)).array().square().colwise().sum() /
                 static_cast<double>(latents.rows()))
                    .sqrt()
                    .matrix();
    sd = sd.cwiseMax(1e-6);
    flow.set_standardization(mean, sd);
  }

  nn::Adam adam(flow.params(), {.lr = cfg.lr});
  Rng rng(derive_seed(cfg.seed, 0xF7A1));
  std::vector<Index> order(latents.rows());
  std::iota(order.begin(), order.end(), 0);
  const double dim = static_cast<double>(flow.config().dim);

  FlowTrainReport report;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    Index seen = 0;
    for (Index i = 0; i < latents.rows(); i += cfg.batch_size) {
      const Index n = std::min<Index>(cfg.batch_size, latents.rows() - i);
      Matrix batch(n, latents.cols());
      for (Index r = 0; r < n; ++r) batch.row(r) = latents.row(order[i + r]);
      const nn::Tensor nll = nn::scale(nn::mean(flow.log_prob_tensor(batch)), -1.0 / dim);
      if (!std::isfinite(nll.item())) throw TrainingError("flow NLL became non-finite in epoch " + std::to_string(epoch));
      flow.params().zero_grad();
      nll.backward();
      if (cfg.grad_clip > 0.0) nn::clip_grad_norm(flow.params(), cfg.grad_clip);
      adam.step(flow.params());
      total += nll.item() * static_cast<double>(n);
      seen += n;
    }
    flow.params().zero_grad();
    report.nll_curve.push_back(total / static_cast<double>(seen));
    if (on_epoch) on_epoch(epoch, report.nll_curve.back());
  }
  return report;
}

}  // namespace voxseq
