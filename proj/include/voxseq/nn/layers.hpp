#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "voxseq/errors.hpp"
#include "voxseq/nn/ops.hpp"
#include "voxseq/nn/tensor.hpp"
#include "voxseq/rng.hpp"

namespace voxseq::nn {

// Named trainable tensors in registration order.
class ParamSet {
 public:
  Tensor add(const std::string& name, Matrix value) {
    if (index_.count(name)) throw UsageError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, Tensor(std::move(value), true));
    return entries_.back().second;
  }

  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw UsageError("unknown parameter: " + name);
    return entries_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& [_, t] : entries_) out.push_back(t);
    return out;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += static_cast<std::size_t>(t.size());
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

  std::map<std::string, Matrix> snapshot() const {
    std::map<std::string, Matrix> out;
    for (const auto& [name, t] : entries_) out[name] = t.value();
    return out;
  }

  // Copies values in; every parameter must be present with the same shape.
  void load(const std::map<std::string, Matrix>& values) {
    for (auto& [name, t] : entries_) {
      auto it = values.find(name);
      if (it == values.end()) throw StorageError("checkpoint is missing parameter " + name);
      if (it->second.rows() != t.rows() || it->second.cols() != t.cols()) {
        throw DimensionError("checkpoint parameter " + name + " has the wrong shape");
      }
      t.mutable_value() = it->second;
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

inline Matrix uniform_matrix(Rng& rng, Index rows, Index cols, double bound) {
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
  return m;
}

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [1, out]

  Linear() = default;
  Linear(ParamSet& params, const std::string& name, Index in, Index out, Rng& rng, bool zero = false) {
    const double bound = zero ? 0.0 : 1.0 / std::sqrt(static_cast<double>(in));
    weight = params.add(name + ".weight", uniform_matrix(rng, in, out, bound));
    bias = params.add(name + ".bias", uniform_matrix(rng, 1, out, bound));
  }

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  Index in_features() const { return weight.rows(); }
  Index out_features() const { return weight.cols(); }
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;

  LayerNorm() = default;
  LayerNorm(ParamSet& params, const std::string& name, Index dim) {
    gain = params.add(name + ".gain", Matrix::Ones(1, dim));
    bias = params.add(name + ".bias", Matrix::Zero(1, dim));
  }

  Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }
};

struct AttentionConfig {
  int layers = 4;
  int heads = 8;
  int model_dim = 128;
  int input_dim = 1000;

  void validate() const {
    if (layers < 1 || heads < 1 || model_dim < 1 || input_dim < 1) {
      throw DimensionError("attention config entries must be positive");
    }
    if (model_dim % heads != 0) throw DimensionError("model_dim must be divisible by heads");
  }
};

// Pre-norm transformer block: x + Attn(LN(x)), then x + FFN(LN(x)) with a
// GELU feed-forward of width 4 * model_dim.
struct AttentionBlock {
  LayerNorm ln_attn;
  Linear query, key, value, proj;
  LayerNorm ln_ffn;
  Linear ffn_in, ffn_out;
  int heads = 1;

  AttentionBlock() = default;
  AttentionBlock(ParamSet& params, const std::string& name, int model_dim, int heads_, Rng& rng) : heads(heads_) {
    if (model_dim % heads_ != 0) throw DimensionError("model_dim must be divisible by heads");
    ln_attn = LayerNorm(params, name + ".ln_attn", model_dim);
    query = Linear(params, name + ".query", model_dim, model_dim, rng);
    key = Linear(params, name + ".key", model_dim, model_dim, rng);
    value = Linear(params, name + ".value", model_dim, model_dim, rng);
    proj = Linear(params, name + ".proj", model_dim, model_dim, rng);
    ln_ffn = LayerNorm(params, name + ".ln_ffn", model_dim);
    ffn_in = Linear(params, name + ".ffn_in", model_dim, 4 * model_dim, rng);
    ffn_out = Linear(params, name + ".ffn_out", 4 * model_dim, model_dim, rng);
  }

  Tensor operator()(const Tensor& x, const Segments& segments) const {
    if (x.cols() != query.in_features()) throw DimensionError("attention block: input width mismatch");
    const Tensor h = ln_attn(x);
    const Tensor a = causal_attention(query(h), key(h), value(h), heads, segments);
    const Tensor x1 = add(x, proj(a));
    return add(x1, ffn_out(gelu(ffn_in(ln_ffn(x1)))));
  }

  Tensor operator()(const Tensor& x) const { return (*this)(x, single_segment(x.rows())); }
};

// Fixed sinusoidal table: even columns sin(t / 10000^(2i/dim)), odd columns cos.
inline Matrix positional_encoding(Index steps, Index dim) {
  if (steps < 1 || dim < 1) throw DimensionError("positional_encoding: sizes must be positive");
  Matrix pe(steps, dim);
  for (Index t = 0; t < steps; ++t) {
    for (Index j = 0; j < dim; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / static_cast<double>(dim));
      pe(t, j) = (j % 2 == 0) ? std::sin(static_cast<double>(t) * freq) : std::cos(static_cast<double>(t) * freq);
    }
  }
  return pe;
}

}  // namespace voxseq::nn
