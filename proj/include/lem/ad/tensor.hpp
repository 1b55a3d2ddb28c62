// SPDX-License-Identifier: Apache-2.0
//
// Minimal reverse-mode automatic differentiation over dense row-major tensors.
//
// A Tensor is a shared handle to a graph node. Operations in ops.hpp create
// new nodes that remember their inputs and a backward closure whenever grad
// mode is on and at least one input requires a gradient. Node creation order
// is a valid topological order, so backward() simply replays reachable nodes
// in reverse creation order.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace lem::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad{false};
  std::uint64_t seq{0};
  std::uint64_t visit_mark{0};
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  // Lazily sized gradient accumulator.
  std::vector<T>& grad_buffer() {
    if (grad.size() != value.size()) {
      grad.assign(value.size(), T{0});
    }
    return grad;
  }
};

template <typename T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<Node<T>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<T> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, T value);
  // Leaf that accumulates gradients across backward() calls.
  static Tensor parameter(Shape shape, std::vector<T> values);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  std::span<T> mutable_data() { return node_->value; }
  std::span<const T> grad() const { return node_->grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  void zero_grad();

  bool requires_grad() const { return node_->requires_grad; }
  T item() const;
  T at(std::size_t flat) const { return node_->value.at(flat); }

  const NodePtr& node() const { return node_; }

  // Seeds d(self)/d(self) = 1 (self must hold a single element), propagates
  // to every reachable node and then releases the intermediate graph.
  void backward();

 private:
  NodePtr node_;
};

bool grad_enabled();

// Disables graph recording for the lifetime of the guard (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Records which side of every hard min/max/abs kink the forward pass took.
// Two passes with equal digests went through identical piecewise branches,
// which is what a finite-difference probe needs to be meaningful.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  void note(std::uint8_t branch);
  std::uint64_t digest() const { return hash_; }
  std::uint64_t count() const { return count_; }

  static BranchRecorder* active();

 private:
  std::uint64_t hash_{1469598103934665603ULL};
  std::uint64_t count_{0};
  BranchRecorder* previous_{nullptr};
};

namespace detail {

std::uint64_t next_seq();

// Wraps a freshly computed value into a graph node. The backward closure is
// only kept when recording is on and some input requires a gradient.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward);

}  // namespace detail

}  // namespace lem::ad
