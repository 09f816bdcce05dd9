// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include "causalvid/nn.hpp"

#include <cmath>

#include "causalvid/error.hpp"

namespace cvs::nn {

Tensor ParameterStore::add(const std::string& name, Tensor t) {
  require(!contains(name), ErrorKind::Config, "duplicate parameter name " + name);
  require(t.requires_grad(), ErrorKind::Contract, "parameter " + name + " is not a leaf");
  index_[name] = items_.size();
  items_.emplace_back(name, t);
  return t;
}

Tensor ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  require(it != index_.end(), ErrorKind::Range, "unknown parameter " + name);
  return items_[it->second].second;
}

std::int64_t ParameterStore::total_elements() const {
  std::int64_t n = 0;
  for (const auto& [_, t] : items_) n += t.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : items_) t.zero_grad();
}

Tensor init_weight(Rng& rng, std::int64_t fan_in, std::int64_t fan_out, double gain) {
  const double stddev = gain / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> w(static_cast<std::size_t>(fan_in * fan_out));
  for (auto& x : w) x = stddev * rng.normal();
  return Tensor::parameter({fan_in, fan_out}, std::move(w));
}

Linear::Linear(ParameterStore& store, const std::string& name, std::int64_t in, std::int64_t out,
               Rng& rng, bool zero_init) {
  weight = store.add(name + ".weight",
                     zero_init ? Tensor::parameter({in, out}, std::vector<double>(in * out, 0.0))
                               : init_weight(rng, in, out));
  bias = store.add(name + ".bias", Tensor::parameter({out}, std::vector<double>(out, 0.0)));
}

Tensor Linear::operator()(const Tensor& x) const {
  return ag::add_trailing(ag::matmul(x, weight), bias);
}

LayerNorm::LayerNorm(ParameterStore& store, const std::string& name, std::int64_t channels) {
  gamma = store.add(name + ".gamma",
                    Tensor::parameter({channels}, std::vector<double>(channels, 1.0)));
  beta = store.add(name + ".beta",
                   Tensor::parameter({channels}, std::vector<double>(channels, 0.0)));
}

Tensor LayerNorm::operator()(const Tensor& x) const { return ag::layer_norm(x, gamma, beta); }

Conv3x3::Conv3x3(ParameterStore& store, const std::string& name, std::int64_t in,
                 std::int64_t out, Rng& rng)
    : proj(store, name, 9 * in, out, rng) {}

Tensor Conv3x3::operator()(const Tensor& x) const { return proj(ag::im2col3x3(x)); }

Attention::Attention(ParameterStore& store, const std::string& name, std::int64_t channels,
                     std::int64_t context_channels, int heads_, Rng& rng, bool zero_out)
    : norm(store, name + ".norm", channels),
      q(store, name + ".q", channels, channels, rng),
      k(store, name + ".k", context_channels, channels, rng),
      v(store, name + ".v", context_channels, channels, rng),
      out(store, name + ".out", channels, channels, rng, zero_out),
      heads(heads_) {
  require(heads > 0 && channels % heads == 0, ErrorKind::Config,
          name + ": channels not divisible by head count");
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads) {
  const auto B = q.dim(0), S = q.dim(1), C = q.dim(2), T = k.dim(1);
  const auto dh = C / heads;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  if (heads == 1) return ag::attention(q, k, v, inv);
  auto split = [&](const Tensor& x, std::int64_t len) {
    auto r = ag::reshape(x, {B, len, heads, dh});
    return ag::reshape(ag::permute(r, {0, 2, 1, 3}), {B * heads, len, dh});
  };
  auto o = ag::attention(split(q, S), split(k, T), split(v, T), inv);
  o = ag::permute(ag::reshape(o, {B, heads, S, dh}), {0, 2, 1, 3});
  return ag::reshape(o, {B, S, C});
}

Tensor Attention::self_attend(const Tensor& x) const {
  auto h = norm(x);
  return out(scaled_dot_attention(q(h), k(h), v(h), heads));
}

Tensor Attention::cross_attend(const Tensor& x, const Tensor& context) const {
  require(x.rank() == 3 && context.rank() == 2, ErrorKind::Contract,
          "cross_attend expects [B, S, C] queries and [T, Cc] context");
  const auto B = x.dim(0), T = context.dim(0), C = x.dim(2);
  auto h = norm(x);
  // The context is shared by all batch rows; fold the batch into the query
  // axis so one [1, B*S, C] x [1, T, C] attention covers it.
  auto qq = ag::reshape(q(h), {1, B * x.dim(1), C});
  auto kk = ag::reshape(k(context), {1, T, C});
  auto vv = ag::reshape(v(context), {1, T, C});
  auto o = scaled_dot_attention(qq, kk, vv, heads);
  return out(ag::reshape(o, x.shape()));
}

}  // namespace cvs::nn
