#pragma once

#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "dancemeld/autograd/tensor.hpp"

namespace dancemeld::ag {

// One vertex of the reverse-mode tape. The backward closure reads `grad`
// (the upstream gradient) and accumulates into the parents' grads.
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = Tensor<T>(value.rows(), value.cols());
    return grad;
  }
  bool has_grad() const { return !grad.empty(); }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& grad_buffer() { return node_->grad_buffer(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  T item() const { return node_->value[0]; }
  void zero_grad() { node_->grad = Tensor<T>(); }
  bool valid() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// While a NoGrad guard is alive on this thread, results record no parents.
inline thread_local int no_grad_depth = 0;

struct NoGrad {
  NoGrad() { ++no_grad_depth; }
  ~NoGrad() { --no_grad_depth; }
  NoGrad(const NoGrad&) = delete;
  NoGrad& operator=(const NoGrad&) = delete;
};

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

// Builds a result node. Parents are only retained when at least one of them
// needs a gradient, so inference graphs are freed as they go.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<std::shared_ptr<Node<T>>> parents,
                   std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (no_grad_depth == 0)
    for (const auto& p : parents) node->requires_grad = node->requires_grad || p->requires_grad;
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

template <typename T>
void backward(const Var<T>& root) {
  DM_THROW_IF(root.value().size() != 1, ShapeMismatch, "backward() needs a scalar root");
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
  // Interior gradients are not needed once propagated; leaves keep theirs.
  for (Node<T>* n : order)
    if (n->backward) n->grad = Tensor<T>();
}

}  // namespace dancemeld::ag
