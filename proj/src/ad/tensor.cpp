// SPDX-License-Identifier: Apache-2.0

#include "lem/ad/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>

#include <fmt/format.h>

namespace lem::ad {

namespace {

thread_local bool g_grad_enabled = true;
thread_local BranchRecorder* g_recorder = nullptr;
std::atomic<std::uint64_t> g_seq{1};

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) {
      out += " x ";
    }
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

BranchRecorder::BranchRecorder() : previous_(g_recorder) { g_recorder = this; }
BranchRecorder::~BranchRecorder() { g_recorder = previous_; }

void BranchRecorder::note(std::uint8_t branch) {
  hash_ ^= branch;
  hash_ *= 1099511628211ULL;
  ++count_;
}

BranchRecorder* BranchRecorder::active() { return g_recorder; }

namespace detail {

std::uint64_t next_seq() { return g_seq.fetch_add(1, std::memory_order_relaxed); }

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs,
                      std::function<void(Node<T>&)> backward) {
  if (numel(shape) != value.size()) {
    throw std::logic_error(fmt::format("node value size {} does not match shape {}", value.size(),
                                       shape_str(shape)));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->seq = next_seq();
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) {
      any = any || in.requires_grad();
    }
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (const auto& in : inputs) {
        node->inputs.push_back(in.node());
      }
      node->backward = std::move(backward);
    }
  }
  return Tensor<T>(std::move(node));
}

}  // namespace detail

template <typename T>
Tensor<T> Tensor<T>::constant(Shape shape, std::vector<T> values) {
  if (numel(shape) != values.size()) {
    throw std::invalid_argument(
        fmt::format("constant of shape {} given {} values", shape_str(shape), values.size()));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->seq = detail::next_seq();
  return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape) {
  return full(std::move(shape), T{0});
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  const auto n = numel(shape);
  return constant(std::move(shape), std::vector<T>(n, value));
}

template <typename T>
Tensor<T> Tensor<T>::parameter(Shape shape, std::vector<T> values) {
  auto t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (!node_->grad.empty()) {
    std::fill(node_->grad.begin(), node_->grad.end(), T{0});
  }
}

template <typename T>
T Tensor<T>::item() const {
  if (node_->value.size() != 1) {
    throw std::logic_error(
        fmt::format("item() on tensor of shape {}", shape_str(node_->shape)));
  }
  return node_->value[0];
}

template <typename T>
void Tensor<T>::backward() {
  if (node_->value.size() != 1) {
    throw std::logic_error("backward() requires a single-element tensor");
  }
  if (!node_->requires_grad) {
    return;
  }

  const std::uint64_t mark = detail::next_seq();
  std::vector<Node<T>*> order;
  std::vector<Node<T>*> stack{node_.get()};
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    if (n->visit_mark == mark) {
      continue;
    }
    n->visit_mark = mark;
    order.push_back(n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad) {
        stack.push_back(in.get());
      }
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->seq > b->seq; });

  node_->grad_buffer()[0] += T{1};
  for (Node<T>* n : order) {
    if (n->backward && !n->grad.empty()) {
      n->backward(*n);
    }
  }
  // Release the graph iteratively so destruction never recurses deeply.
  for (Node<T>* n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->grad.clear();
      n->grad.shrink_to_fit();
    }
  }
  std::vector<std::shared_ptr<Node<T>>> keep;
  keep.reserve(order.size());
  for (Node<T>* n : order) {
    for (auto& in : n->inputs) {
      keep.push_back(std::move(in));
    }
    n->inputs.clear();
  }
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<float> detail::make_result<float>(Shape, std::vector<float>,
                                                  const std::vector<Tensor<float>>&,
                                                  std::function<void(Node<float>&)>);
template Tensor<double> detail::make_result<double>(Shape, std::vector<double>,
                                                    const std::vector<Tensor<double>>&,
                                                    std::function<void(Node<double>&)>);

}  // namespace lem::ad
