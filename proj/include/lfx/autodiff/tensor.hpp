#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lfx/error.hpp"

namespace lfx::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

template <typename Scalar>
using Buffer = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
struct Node {
  Shape shape;
  Buffer<Scalar> value;
  Buffer<Scalar> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::string op;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(const Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad = Buffer<Scalar>::Zero(value.size());
  }
};

// Reference-semantics handle to a node of the recorded computation graph.
template <typename Scalar>
class Tensor {
 public:
  using NodeT = Node<Scalar>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, Buffer<Scalar> values) {
    if (numel(shape) != static_cast<std::size_t>(values.size()))
      throw ShapeError("tensor: value count does not match shape " + to_string(shape));
    auto n = std::make_shared<NodeT>();
    n->shape = std::move(shape);
    n->value = std::move(values);
    n->op = "constant";
    return Tensor(std::move(n));
  }
  static Tensor zeros(Shape shape) {
    const auto count = static_cast<Eigen::Index>(numel(shape));
    return constant(std::move(shape), Buffer<Scalar>::Zero(count));
  }
  static Tensor parameter(Shape shape, Buffer<Scalar> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    t.node_->op = "parameter";
    return t;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return static_cast<std::size_t>(node_->value.size()); }

  Buffer<Scalar>& value() { return node_->value; }
  const Buffer<Scalar>& value() const { return node_->value; }
  Buffer<Scalar>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  const Buffer<Scalar>& grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  Scalar item() const {
    if (size() != 1) throw ShapeError("tensor: item() on non-scalar " + to_string(shape()));
    return node_->value[0];
  }

  void zero_grad() {
    if (node_->grad.size()) node_->grad.setZero();
  }

  // Same storage, cut from the graph; used to feed outputs back as inputs.
  Tensor detach() const { return constant(shape(), value()); }

  NodeT* node() const { return node_.get(); }
  const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<NodeT> node_;
};

// Builds the result node of an op. `fn` is attached only when some input
// participates in differentiation.
// Pure data movement (reshape, permute) passes check = false.
template <typename Scalar>
Tensor<Scalar> make_result(Shape shape, Buffer<Scalar> value, std::string op,
                           std::vector<Tensor<Scalar>> inputs,
                           std::function<void(const Node<Scalar>&)> fn, bool check = true) {
  // x*0 is 0 for finite x and NaN otherwise; one vectorized pass.
  if (check && !((value * Scalar(0)).sum() == Scalar(0)))
    throw NumericError("op '" + op + "' produced a non-finite value");
  auto n = std::make_shared<Node<Scalar>>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = std::move(op);
  n->is_leaf = false;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (any) {
    n->requires_grad = true;
    for (const auto& t : inputs) n->parents.push_back(t.node_ptr());
    n->backward = std::move(fn);
  }
  return Tensor<Scalar>(std::move(n));
}

// Reverse pass from a scalar. Leaf gradients accumulate across calls;
// intermediate gradients are reset every call.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  if (loss.size() != 1)
    throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<Node<Scalar>*> order;
  std::unordered_set<Node<Scalar>*> seen;
  std::vector<std::pair<Node<Scalar>*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<Scalar>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  // Intermediate grads are allocated on first contribution; a node that
  // received none has nothing to propagate.
  for (auto* n : order) {
    if (!n->is_leaf) n->grad.resize(0);
    else n->ensure_grad();
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += Scalar(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward && (*it)->grad.size() == (*it)->value.size()) (*it)->backward(**it);
  }
}

}  // namespace lfx::ad
