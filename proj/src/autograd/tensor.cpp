// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include <sstream>
#include <unordered_set>

#include "causalvid/autograd.hpp"
#include "causalvid/error.hpp"

namespace cvs::ag {

namespace {
thread_local bool t_grad_enabled = true;
}

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

std::vector<double>& Node::ensure_grad() {
  if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  return grad;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
  require(ag::numel(shape) == static_cast<std::int64_t>(values.size()), ErrorKind::Contract,
          "constant: shape " + shape_str(shape) + " does not match " +
              std::to_string(values.size()) + " values");
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape) {
  auto count = static_cast<std::size_t>(ag::numel(shape));
  return constant(std::move(shape), std::vector<double>(count, 0.0));
}

Tensor Tensor::full(Shape shape, double value) {
  auto count = static_cast<std::size_t>(ag::numel(shape));
  return constant(std::move(shape), std::vector<double>(count, value));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t = constant(std::move(shape), std::move(values));
  t.node_->requires_grad = true;
  return t;
}

std::int64_t Tensor::dim(int axis) const {
  const int r = rank();
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, ErrorKind::Range, "axis out of range");
  return node_->shape[static_cast<std::size_t>(axis)];
}

double Tensor::item() const {
  require(numel() == 1, ErrorKind::Contract,
          "item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return constant(shape(), node_->value); }

Tensor Tensor::clone() const {
  Tensor t = constant(shape(), node_->value);
  t.node_->requires_grad = node_->requires_grad && !node_->backward;
  return t;
}

void Tensor::backward() const {
  require(numel() == 1, ErrorKind::Contract, "backward() requires a scalar");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior grads are scratch; leaves accumulate across calls.
  for (Node* n : order)
    if (n->backward) n->grad.clear();
  node_->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    n->ensure_grad();
    n->backward(*n);
    // Interior gradients are consumed; release them to keep the footprint small.
    if (n != node_.get()) std::vector<double>().swap(n->grad);
  }
}

}  // namespace cvs::ag
