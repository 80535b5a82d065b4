#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "voxseq/nn/tensor.hpp"

namespace voxseq::nn {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
  }
}

inline Node& node_of(const Tensor& t) { return *t.node(); }

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  auto* na = a.node().get();
  auto* nb = b.node().get();
  return make_result(std::move(out), {&a, &b}, [na, nb](detail::Node& self) {
    if (na->requires_grad) na->accumulate(self.grad * nb->value.transpose());
    if (nb->requires_grad) nb->accumulate(na->value.transpose() * self.grad);
  });
}

// x * W + b, with b a 1 x out row broadcast over rows.
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.cols() != w.rows() || b.rows() != 1 || b.cols() != w.cols()) {
    throw DimensionError("linear: shapes do not line up");
  }
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  auto* nx = x.node().get();
  auto* nw = w.node().get();
  auto* nb = b.node().get();
  return make_result(std::move(out), {&x, &w, &b}, [nx, nw, nb](detail::Node& self) {
    if (nx->requires_grad) nx->accumulate(self.grad * nw->value.transpose());
    if (nw->requires_grad) nw->accumulate(nx->value.transpose() * self.grad);
    if (nb->requires_grad) nb->accumulate(self.grad.colwise().sum());
  });
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  auto* na = a.node().get();
  auto* nb = b.node().get();
  return make_result(a.value() + b.value(), {&a, &b}, [na, nb](detail::Node& self) {
    if (na->requires_grad) na->accumulate(self.grad);
    if (nb->requires_grad) nb->accumulate(self.grad);
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  auto* na = a.node().get();
  auto* nb = b.node().get();
  return make_result(a.value() - b.value(), {&a, &b}, [na, nb](detail::Node& self) {
    if (na->requires_grad) na->accumulate(self.grad);
    if (nb->requires_grad) nb->accumulate(-self.grad);
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  auto* na = a.node().get();
  auto* nb = b.node().get();
  return make_result(a.value().cwiseProduct(b.value()), {&a, &b}, [na, nb](detail::Node& self) {
    if (na->requires_grad) na->accumulate(self.grad.cwiseProduct(nb->value));
    if (nb->requires_grad) nb->accumulate(self.grad.cwiseProduct(na->value));
  });
}

inline Tensor scale(const Tensor& a, double s) {
  auto* na = a.node().get();
  return make_result(a.value() * s, {&a}, [na, s](detail::Node& self) { na->accumulate(self.grad * s); });
}

// a + c for a constant matrix c of the same shape.
inline Tensor add_constant(const Tensor& a, const Matrix& c) {
  if (a.rows() != c.rows() || a.cols() != c.cols()) throw DimensionError("add_constant: shape mismatch");
  auto* na = a.node().get();
  return make_result(a.value() + c, {&a}, [na](detail::Node& self) { na->accumulate(self.grad); });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }

inline Tensor tanh(const Tensor& a) {
  Matrix y = a.value().array().tanh().matrix();
  auto* na = a.node().get();
  return make_result(y, {&a}, [na](detail::Node& self) {
    na->accumulate(self.grad.cwiseProduct((1.0 - self.value.array().square()).matrix()));
  });
}

inline Tensor sigmoid(const Tensor& a) {
  Matrix y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  auto* na = a.node().get();
  return make_result(y, {&a}, [na](detail::Node& self) {
    na->accumulate(self.grad.cwiseProduct((self.value.array() * (1.0 - self.value.array())).matrix()));
  });
}

inline Tensor exp(const Tensor& a) {
  Matrix y = a.value().array().exp().matrix();
  auto* na = a.node().get();
  return make_result(y, {&a}, [na](detail::Node& self) { na->accumulate(self.grad.cwiseProduct(self.value)); });
}

inline Tensor square(const Tensor& a) { return mul(a, a); }

// Exact (erf) GELU.
inline Tensor gelu(const Tensor& a) {
  const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  Matrix y = a.value().unaryExpr([&](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
  auto* na = a.node().get();
  return make_result(std::move(y), {&a}, [na, inv_sqrt2, inv_sqrt2pi](detail::Node& self) {
    Matrix d = na->value.unaryExpr([&](double x) {
      return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
    });
    na->accumulate(self.grad.cwiseProduct(d));
  });
}

// Row-wise layer normalisation with learned gain/bias (1 x cols each).
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5) {
  const Index n = x.rows(), d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d) {
    throw DimensionError("layer_norm: gain/bias shape mismatch");
  }
  Matrix xhat(n, d);
  Eigen::VectorXd inv_std(n);
  for (Index i = 0; i < n; ++i) {
    const double mu = x.value().row(i).mean();
    const double var = (x.value().row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.value().row(i).array() - mu) * inv_std(i);
  }
  Matrix y = xhat.array().rowwise() * gamma.value().row(0).array();
  y.rowwise() += beta.value().row(0);
  auto* nx = x.node().get();
  auto* ng = gamma.node().get();
  auto* nb = beta.node().get();
  return make_result(std::move(y), {&x, &gamma, &beta},
                     [nx, ng, nb, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& self) {
                       const Matrix& g = self.grad;
                       if (ng->requires_grad) ng->accumulate(g.cwiseProduct(xhat).colwise().sum());
                       if (nb->requires_grad) nb->accumulate(g.colwise().sum());
                       if (nx->requires_grad) {
                         const Index dd = xhat.cols();
                         Matrix gx = g.array().rowwise() * ng->value.row(0).array();
                         Matrix dx(gx.rows(), dd);
                         for (Index i = 0; i < gx.rows(); ++i) {
                           const double m1 = gx.row(i).mean();
                           const double m2 = gx.row(i).dot(xhat.row(i)) / static_cast<double>(dd);
                           dx.row(i) = (gx.row(i).array() - m1 - xhat.row(i).array() * m2) * inv_std(i);
                         }
                         nx->accumulate(dx);
                       }
                     });
}

namespace detail {

inline void softmax_rows_inplace(Matrix& s, bool causal) {
  for (Index i = 0; i < s.rows(); ++i) {
    const Index width = causal ? std::min<Index>(i + 1, s.cols()) : s.cols();
    auto row = s.row(i);
    const double m = row.head(width).maxCoeff();
    double z = 0.0;
    for (Index j = 0; j < width; ++j) z += (row(j) = std::exp(row(j) - m));
    row.head(width) /= z;
    for (Index j = width; j < s.cols(); ++j) row(j) = 0.0;
  }
}

inline Matrix softmax_backward(const Matrix& p, const Matrix& g) {
  Matrix out = p.cwiseProduct(g);
  const Eigen::VectorXd dots = out.rowwise().sum();
  out -= p.cwiseProduct(dots.replicate(1, p.cols()));
  return out;
}

}  // namespace detail

// Row softmax; with `causal` entry (i, j > i) is masked out.
inline Tensor softmax_rows(const Tensor& a, bool causal = false) {
  Matrix p = a.value();
  detail::softmax_rows_inplace(p, causal);
  auto* na = a.node().get();
  return make_result(p, {&a}, [na](detail::Node& self) {
    na->accumulate(detail::softmax_backward(self.value, self.grad));
  });
}

// Rows of a batch are split into consecutive segments (one per sequence);
// attention never crosses a segment boundary.
using Segments = std::vector<Index>;

inline Segments single_segment(Index rows) { return {rows}; }

// Per-head causal attention probabilities for one segment [start, start+len).
inline std::vector<Matrix> causal_attention_weights(const Matrix& q, const Matrix& k, int heads, Index start,
                                                    Index len) {
  const Index dh = q.cols() / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Matrix> probs;
  probs.reserve(heads);
  for (int h = 0; h < heads; ++h) {
    Matrix s = (q.block(start, h * dh, len, dh) * k.block(start, h * dh, len, dh).transpose()) * scale;
    detail::softmax_rows_inplace(s, true);
    probs.push_back(std::move(s));
  }
  return probs;
}

// Multi-head scaled dot-product attention with a causal mask. q, k, v are
// [N, d]; heads split the columns; output is [N, d].
inline Tensor causal_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads,
                               const Segments& segments) {
  detail::require_same_shape(q, k, "causal_attention");
  detail::require_same_shape(q, v, "causal_attention");
  if (heads <= 0 || q.cols() % heads != 0) throw DimensionError("causal_attention: width not divisible by heads");
  Index total = 0;
  for (Index s : segments) {
    if (s <= 0) throw DimensionError("causal_attention: empty segment");
    total += s;
  }
  if (total != q.rows()) throw DimensionError("causal_attention: segments do not cover all rows");

  const Index dh = q.cols() / heads;
  Matrix out(q.rows(), q.cols());
  std::vector<std::vector<Matrix>> saved;
  saved.reserve(segments.size());
  Index start = 0;
  for (Index len : segments) {
    auto probs = causal_attention_weights(q.value(), k.value(), heads, start, len);
    for (int h = 0; h < heads; ++h) {
      out.block(start, h * dh, len, dh).noalias() = probs[h] * v.value().block(start, h * dh, len, dh);
    }
    saved.push_back(std::move(probs));
    start += len;
  }

  auto* nq = q.node().get();
  auto* nk = k.node().get();
  auto* nv = v.node().get();
  return make_result(std::move(out), {&q, &k, &v},
                     [nq, nk, nv, heads, dh, segments, saved = std::move(saved)](detail::Node& self) {
                       const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
                       const Index n = self.value.rows(), d = self.value.cols();
                       Matrix gq = Matrix::Zero(n, d), gk = Matrix::Zero(n, d), gv = Matrix::Zero(n, d);
                       Index start = 0;
                       for (std::size_t s = 0; s < segments.size(); ++s) {
                         const Index len = segments[s];
                         for (int h = 0; h < heads; ++h) {
                           const Matrix& p = saved[s][h];
                           const auto go = self.grad.block(start, h * dh, len, dh);
                           const auto qh = nq->value.block(start, h * dh, len, dh);
                           const auto kh = nk->value.block(start, h * dh, len, dh);
                           const auto vh = nv->value.block(start, h * dh, len, dh);
                           gv.block(start, h * dh, len, dh).noalias() = p.transpose() * go;
                           Matrix gp = go * vh.transpose();
                           Matrix gs = detail::softmax_backward(p, gp) * scale;
                           gq.block(start, h * dh, len, dh).noalias() = gs * kh;
                           gk.block(start, h * dh, len, dh).noalias() = gs.transpose() * qh;
                         }
                         start += len;
                       }
                       if (nq->requires_grad) nq->accumulate(gq);
                       if (nk->requires_grad) nk->accumulate(gk);
                       if (nv->requires_grad) nv->accumulate(gv);
                     });
}

inline Tensor gather_cols(const Tensor& a, const std::vector<Index>& idx) {
  Matrix out(a.rows(), static_cast<Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Index>(j)) = a.value().col(idx[j]);
  auto* na = a.node().get();
  return make_result(std::move(out), {&a}, [na, idx](detail::Node& self) {
    Matrix g = Matrix::Zero(na->value.rows(), na->value.cols());
    for (std::size_t j = 0; j < idx.size(); ++j) g.col(idx[j]) += self.grad.col(static_cast<Index>(j));
    na->accumulate(g);
  });
}

// Inverse of two gathers: column j of `a` goes to idx_a[j], of `b` to idx_b[j].
inline Tensor merge_cols(const Tensor& a, const std::vector<Index>& idx_a, const Tensor& b,
                         const std::vector<Index>& idx_b) {
  if (a.rows() != b.rows()) throw DimensionError("merge_cols: row mismatch");
  const Index width = static_cast<Index>(idx_a.size() + idx_b.size());
  Matrix out(a.rows(), width);
  for (std::size_t j = 0; j < idx_a.size(); ++j) out.col(idx_a[j]) = a.value().col(static_cast<Index>(j));
  for (std::size_t j = 0; j < idx_b.size(); ++j) out.col(idx_b[j]) = b.value().col(static_cast<Index>(j));
  auto* na = a.node().get();
  auto* nb = b.node().get();
  return make_result(std::move(out), {&a, &b}, [na, nb, idx_a, idx_b](detail::Node& self) {
    if (na->requires_grad) {
      Matrix g(self.grad.rows(), static_cast<Index>(idx_a.size()));
      for (std::size_t j = 0; j < idx_a.size(); ++j) g.col(static_cast<Index>(j)) = self.grad.col(idx_a[j]);
      na->accumulate(g);
    }
    if (nb->requires_grad) {
      Matrix g(self.grad.rows(), static_cast<Index>(idx_b.size()));
      for (std::size_t j = 0; j < idx_b.size(); ++j) g.col(static_cast<Index>(j)) = self.grad.col(idx_b[j]);
      nb->accumulate(g);
    }
  });
}

inline Tensor slice_cols(const Tensor& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw DimensionError("slice_cols: out of range");
  auto* na = a.node().get();
  return make_result(a.value().middleCols(start, count), {&a}, [na, start, count](detail::Node& self) {
    Matrix g = Matrix::Zero(na->value.rows(), na->value.cols());
    g.middleCols(start, count) = self.grad;
    na->accumulate(g);
  });
}

inline Tensor gather_rows(const Tensor& a, const std::vector<Index>& idx) {
  Matrix out(static_cast<Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Index>(i)) = a.value().row(idx[i]);
  auto* na = a.node().get();
  return make_result(std::move(out), {&a}, [na, idx](detail::Node& self) {
    Matrix g = Matrix::Zero(na->value.rows(), na->value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    na->accumulate(g);
  });
}

// Per-row sum -> [N, 1].
inline Tensor row_sum(const Tensor& a) {
  auto* na = a.node().get();
  return make_result(a.value().rowwise().sum(), {&a}, [na](detail::Node& self) {
    na->accumulate(self.grad.replicate(1, na->value.cols()));
  });
}

inline Tensor sum(const Tensor& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  auto* na = a.node().get();
  return make_result(std::move(out), {&a}, [na](detail::Node& self) {
    na->accumulate(Matrix::Constant(na->value.rows(), na->value.cols(), self.grad(0, 0)));
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

inline constexpr double kBceClamp = 1e-7;

// Mean binary cross-entropy; probabilities are clamped to [1e-7, 1 - 1e-7].
inline Tensor bce_loss(const Tensor& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw DimensionError("bce_loss: prediction/target shape mismatch");
  }
  const double n = static_cast<double>(pred.size());
  const auto p = pred.value().array().max(kBceClamp).min(1.0 - kBceClamp);
  const auto t = target.array();
  Matrix out(1, 1);
  out(0, 0) = -(t * p.log() + (1.0 - t) * (1.0 - p).log()).sum() / n;
  auto* np = pred.node().get();
  return make_result(std::move(out), {&pred}, [np, target, n](detail::Node& self) {
    const auto& raw = np->value.array();
    const auto p = raw.max(kBceClamp).min(1.0 - kBceClamp);
    const auto inside = (raw > kBceClamp && raw < 1.0 - kBceClamp).cast<double>();
    Matrix g = (inside * (p - target.array()) / (p * (1.0 - p))).matrix() * (self.grad(0, 0) / n);
    np->accumulate(g);
  });
}

// Sum over rows and latent dims of KL(N(mu, exp(logvar)) || N(0, I)).
inline Tensor gaussian_kl(const Tensor& mu, const Tensor& logvar) {
  detail::require_same_shape(mu, logvar, "gaussian_kl");
  Matrix out(1, 1);
  out(0, 0) = 0.5 * (logvar.value().array().exp() + mu.value().array().square() - 1.0 - logvar.value().array()).sum();
  auto* nm = mu.node().get();
  auto* nl = logvar.node().get();
  return make_result(std::move(out), {&mu, &logvar}, [nm, nl](detail::Node& self) {
    const double g = self.grad(0, 0);
    if (nm->requires_grad) nm->accumulate(nm->value * g);
    if (nl->requires_grad) nl->accumulate(((nl->value.array().exp() - 1.0) * 0.5 * g).matrix());
  });
}

}  // namespace voxseq::nn
