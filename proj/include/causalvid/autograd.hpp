// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

// Minimal reverse-mode automatic differentiation over dense row-major
// double tensors. Every op records a closure that accumulates gradients
// into its inputs; Tensor::backward() replays them in reverse topological
// order. Graph recording is skipped when no input requires a gradient or a
// NoGradGuard is alive on the current thread.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cvs::ag {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  /// Leaf that accumulates gradients.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t dim(int axis) const;
  int rank() const { return static_cast<int>(node_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(node_->value.size()); }

  std::span<const double> data() const { return node_->value; }
  /// Writable storage. Only meaningful on leaves (parameters, constants).
  std::span<double> mutable_data() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }
  double item() const;
  double at(std::int64_t flat) const { return node_->value[static_cast<std::size_t>(flat)]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  /// Gradient buffer; empty when nothing has flowed into this tensor yet.
  std::span<const double> grad() const { return node_->grad; }
  void zero_grad();

  /// Backpropagates from a scalar.
  void backward() const;

  /// Same values, no history.
  Tensor detach() const;
  /// Independent deep copy of the values; keeps the requires_grad flag.
  Tensor clone() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& node_ptr() const { return node_; }

  /// True when both tensors share the same storage node.
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// Adds `b` broadcast over the leading axes of `a`; b.shape must equal the
/// trailing dims of a.shape.
Tensor add_trailing(const Tensor& a, const Tensor& b);
/// Multiplies by `b` broadcast over the leading axes of `a`.
Tensor mul_trailing(const Tensor& a, const Tensor& b);
Tensor silu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor square(const Tensor& a);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Mean over axis 0 of a [N, C] view; returns [C].
Tensor mean_rows(const Tensor& a);
/// Sum of elementwise products; returns a scalar.
Tensor dot(const Tensor& a, const Tensor& b);
Tensor sqrt(const Tensor& a);
Tensor div(const Tensor& a, const Tensor& b);

// ---- layout ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor permute(const Tensor& a, const std::vector<int>& perm);
Tensor concat_last(const Tensor& a, const Tensor& b);
/// Rows of a [N, C] view selected by `index`.
Tensor gather_rows(const Tensor& a, std::span<const std::int64_t> index);
/// Writes rows of `a` to positions `ia` and rows of `b` to `ib` in an
/// [n, C] output. The two index sets must partition [0, n).
Tensor merge_rows(const Tensor& a, std::span<const std::int64_t> ia,
                  const Tensor& b, std::span<const std::int64_t> ib,
                  std::int64_t n);
/// Returns `a` unchanged in value; the gradient w.r.t. the per-row scalar s
/// is that of a[i]·(1 + s[i] - stop_grad(s[i])). No division, so rows whose
/// score underflows to zero still get a finite gradient.
Tensor straight_through_rows(const Tensor& a, const Tensor& s);

// ---- linear algebra ----
/// [..., K] x [K, M] -> [..., M]
Tensor matmul(const Tensor& x, const Tensor& w);
/// [B, M, K] x [B, K, N] -> [B, M, N]
Tensor bmm(const Tensor& a, const Tensor& b);
/// [B, M, K] x [B, N, K]^T -> [B, M, N]
Tensor bmm_bt(const Tensor& a, const Tensor& b);
/// softmax(scale * q k^T) v for q [B, S, D], k [B, T, D], v [B, T, E].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale);

// ---- normalization / activation ----
Tensor softmax_last(const Tensor& a);
Tensor log_softmax_last(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// ---- spatial ([N, H, W, C] channels-last) ----
/// 3x3 zero-padded patches -> [N, H, W, 9C] ordered (ky, kx, c).
Tensor im2col3x3(const Tensor& x);
Tensor avg_pool2(const Tensor& x);
Tensor upsample_nearest2(const Tensor& x);
/// Bilinear resize with half-pixel centers and edge clamping.
Tensor resize_bilinear(const Tensor& x, std::int64_t out_h, std::int64_t out_w);

}  // namespace cvs::ag
