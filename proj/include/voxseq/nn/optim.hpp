#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "voxseq/errors.hpp"
#include "voxseq/nn/layers.hpp"
#include "voxseq/nn/tensor.hpp"

namespace voxseq::nn {

// p <- p - lr * g, elementwise.
inline void sgd_step(std::vector<Matrix>& params, const std::vector<Matrix>& grads, double lr) {
  if (params.size() != grads.size()) throw DimensionError("sgd_step: parameter/gradient count mismatch");
  if (!(lr >= 0.0)) throw UsageError("sgd_step: learning rate must be nonnegative");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols()) {
      throw DimensionError("sgd_step: parameter/gradient shape mismatch");
    }
    params[i] -= lr * grads[i];
  }
}

inline void sgd_step(ParamSet& params, double lr) {
  if (!(lr >= 0.0)) throw UsageError("sgd_step: learning rate must be nonnegative");
  for (const auto& [_, t] : params) {
    if (t.has_grad()) t.node()->value -= lr * t.node()->grad;
  }
}

inline double grad_norm(const ParamSet& params) {
  double sq = 0.0;
  for (const auto& [_, t] : params) {
    if (t.has_grad()) sq += t.node()->grad.squaredNorm();
  }
  return std::sqrt(sq);
}

// Rescales all gradients so their joint L2 norm is at most max_norm.
inline double clip_grad_norm(ParamSet& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto& [_, t] : params) {
      if (t.has_grad()) t.node()->grad *= s;
    }
  }
  return norm;
}

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  using Options = AdamOptions;

  explicit Adam(const ParamSet& params, Options opt = {}) : opt_(opt) {
    for (const auto& [_, t] : params) {
      m_.push_back(Matrix::Zero(t.rows(), t.cols()));
      v_.push_back(Matrix::Zero(t.rows(), t.cols()));
    }
  }

  void step(ParamSet& params) {
    if (params.size() != m_.size()) throw UsageError("Adam: parameter set changed size");
    ++t_;
    const double c1 = 1.0 - std::pow(opt_.beta1, t_);
    const double c2 = 1.0 - std::pow(opt_.beta2, t_);
    std::size_t i = 0;
    for (const auto& [_, p] : params) {
      if (p.has_grad()) {
        const Matrix& g = p.node()->grad;
        m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
        v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g.cwiseAbs2();
        p.node()->value.array() -= opt_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + opt_.eps);
      }
      ++i;
    }
  }

  long steps() const { return t_; }
  Options& options() { return opt_; }

 private:
  Options opt_;
  std::vector<Matrix> m_, v_;
  long t_ = 0;
};

}  // namespace voxseq::nn
