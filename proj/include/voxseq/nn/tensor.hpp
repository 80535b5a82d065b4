#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "voxseq/errors.hpp"

namespace voxseq::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

namespace detail {

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  template <class Expr>
  void accumulate(const Expr& g) {
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
  }
};

inline thread_local int no_grad_depth = 0;

}  // namespace detail

// While alive, ops on this thread build no graph (inference mode).
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

// 2-D dense tensor with reverse-mode gradient tracking. Copies share the
// underlying node, like a handle.
class Tensor {
 public:
  Tensor() : node_(std::make_shared<detail::Node>()) {}
  explicit Tensor(Matrix value, bool requires_grad = false) : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Index rows, Index cols, bool requires_grad = false) {
    return Tensor(Matrix::Zero(rows, cols), requires_grad);
  }

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }
  Index size() const { return node_->value.size(); }

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  double item() const {
    if (size() != 1) throw DimensionError("item() on a non-scalar tensor");
    return node_->value(0, 0);
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() != 0; }
  // Zero matrix of the value's shape when nothing has been accumulated.
  Matrix grad() const {
    if (has_grad()) return node_->grad;
    return Matrix::Zero(rows(), cols());
  }
  void zero_grad() { node_->grad.resize(0, 0); }

  // Seeds d(this)/d(this) = 1 and propagates to every leaf that requires grad.
  void backward() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Builds a result tensor; the graph edge is only recorded when some parent
// needs a gradient and grad mode is on.
inline Tensor make_result(Matrix value, std::initializer_list<const Tensor*> parents,
                          std::function<void(detail::Node&)> backward) {
  Tensor out(std::move(value));
  if (!grad_enabled()) return out;
  bool needs = false;
  for (const Tensor* p : parents) needs = needs || p->requires_grad();
  if (!needs) return out;
  auto& node = *out.node();
  node.requires_grad = true;
  for (const Tensor* p : parents) node.parents.push_back(p->node());
  node.backward = std::move(backward);
  return out;
}

inline void Tensor::backward() const {
  if (!requires_grad()) throw UsageError("backward() on a tensor that does not require grad");
  // Iterative post-order DFS gives a topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      detail::Node* p = n->parents[i++].get();
      if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->accumulate(Matrix::Ones(rows(), cols()));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
  // Interior grads are not needed after the sweep.
  for (detail::Node* n : order) {
    if (n->backward) n->grad.resize(0, 0);
  }
}

}  // namespace voxseq::nn
