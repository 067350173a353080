#pragma once

// Dense N-dimensional tensor participating in a dynamically recorded
// reverse-mode differentiation graph. Each forward operator records the node's
// parents and a backprop closure when any input requires gradients; backward()
// sweeps the DAG in reverse topological order and accumulates gradients
// additively, so a tensor consumed twice receives the sum of both paths.
//
// T is float or double. Reductions accumulate in 64-bit regardless of T.

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "hyperseg/rng.hpp"

namespace hyperseg {

using Shape = std::vector<int>;

inline long numel(const Shape& shape) {
  long n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily, same length as data
  bool requires_grad = false;

  // graph edges; empty for leaves and for tensors produced outside recording
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using Node = detail::TensorNode<T>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    check_shape(shape);
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data.assign(static_cast<std::size_t>(numel(node->shape)), value);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
    check_shape(shape);
    if (static_cast<long>(data.size()) != numel(shape))
      throw std::invalid_argument("Tensor: data length " + std::to_string(data.size()) +
                                  " does not match shape " + shape_str(shape));
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor scalar(T value) { return from({1}, {value}); }

  // uniform values in [lo, hi), drawn in flat index order
  static Tensor random_uniform(Shape shape, Rng& rng, T lo, T hi, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& v : t.node_->data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  long size() const { return static_cast<long>(node_->data.size()); }

  T* data() { return node_->data.data(); }
  const T* data() const { return node_->data.data(); }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  T item() const {
    if (size() != 1) throw std::logic_error("Tensor::item: tensor is not scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool rg) {
    node_->requires_grad = rg;
    return *this;
  }

  // gradient of the last backward() call(s); accumulates until zero_grad()
  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::vector<T>& grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->data.size(), T(0)); }

  std::shared_ptr<Node>& node() { return node_; }
  const std::shared_ptr<Node>& node() const { return node_; }

  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw std::invalid_argument("Tensor: empty shape");
    for (int d : shape)
      if (d <= 0) throw std::invalid_argument("Tensor: non-positive dimension in " + shape_str(shape));
  }

  std::shared_ptr<Node> node_;
};

// Populates grad on every requires_grad tensor reachable from loss. Gradients
// accumulate into existing grad buffers; callers zero parameter grads between
// optimization steps.
template <typename T>
void backward(Tensor<T>& loss) {
  using Node = detail::TensorNode<T>;
  Node* root = loss.node().get();
  if (root == nullptr) throw std::logic_error("backward: undefined tensor");
  if (loss.size() != 1) throw std::logic_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!root->requires_grad) return;

  // reverse post-order over parent edges = consumers before producers
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  struct Frame {
    Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      Node* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && visited.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) {
      n->ensure_grad();
      n->backprop(*n);
    }
  }
}

namespace detail {

// Shared by every operator: wires the result into the graph when any input
// needs gradients, otherwise leaves it a plain data tensor.
template <typename T, typename Backprop>
void record(Tensor<T>& out, std::initializer_list<Tensor<T>> inputs, Backprop&& backprop) {
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  if (!needs_grad) return;
  out.node()->requires_grad = true;
  for (const auto& in : inputs) out.node()->parents.push_back(in.node());
  out.node()->backprop = std::forward<Backprop>(backprop);
}

template <typename T>
void accumulate(TensorNode<T>& target, const std::vector<T>& delta) {
  target.ensure_grad();
  for (std::size_t i = 0; i < delta.size(); ++i) target.grad[i] += delta[i];
}

}  // namespace detail

}  // namespace hyperseg
