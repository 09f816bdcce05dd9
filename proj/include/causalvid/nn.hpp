// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "causalvid/autograd.hpp"
#include "causalvid/rng.hpp"

namespace cvs::nn {

using ag::Tensor;

/// Ordered, named collection of trainable leaves.
class ParameterStore {
 public:
  Tensor add(const std::string& name, Tensor t);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  std::int64_t total_elements() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
  std::map<std::string, std::size_t> index_;
};

/// Fan-in scaled normal init.
Tensor init_weight(Rng& rng, std::int64_t fan_in, std::int64_t fan_out, double gain = 1.0);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, std::int64_t in, std::int64_t out,
         Rng& rng, bool zero_init = false);
  Tensor operator()(const Tensor& x) const;
  std::int64_t in_features() const { return weight.dim(0); }
  std::int64_t out_features() const { return weight.dim(1); }
};

struct LayerNorm {
  Tensor gamma, beta;

  LayerNorm() = default;
  LayerNorm(ParameterStore& store, const std::string& name, std::int64_t channels);
  Tensor operator()(const Tensor& x) const;
};

/// 3x3 same-padding convolution over [N, H, W, C].
struct Conv3x3 {
  Linear proj;

  Conv3x3() = default;
  Conv3x3(ParameterStore& store, const std::string& name, std::int64_t in, std::int64_t out,
          Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

/// Pre-norm multi-head attention. Self-attention over [B, S, C]; cross
/// attention of [B, S, C] queries onto a shared [T, Cc] context.
struct Attention {
  LayerNorm norm;
  Linear q, k, v, out;
  int heads = 1;

  Attention() = default;
  Attention(ParameterStore& store, const std::string& name, std::int64_t channels,
            std::int64_t context_channels, int heads, Rng& rng, bool zero_out = false);
  /// Returns the attention branch only (no residual).
  Tensor self_attend(const Tensor& x) const;
  Tensor cross_attend(const Tensor& x, const Tensor& context) const;
};

/// Multi-head scaled dot-product attention on already-projected tensors:
/// q [B, S, C], k/v [B, T, C]. Returns [B, S, C].
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

}  // namespace cvs::nn
