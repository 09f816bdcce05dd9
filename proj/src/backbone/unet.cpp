// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdio>

#include "causalvid/backbone.hpp"
#include "causalvid/error.hpp"
#include "causalvid/hash.hpp"
#include "causalvid/rng.hpp"

namespace cvs::backbone {

namespace ops = cvs::ag;

void BackboneConfig::validate() const {
  auto bad = [](const std::string& m) { raise(ErrorKind::Config, "backbone: " + m); };
  if (frames < 1) bad("frames must be >= 1");
  if (in_channels < 1) bad("in_channels must be >= 1");
  if (height < 1 || width < 1) bad("spatial size must be positive");
  if (layers < 1) bad("layers must be >= 1");
  if (text_dim < 1 || max_prompt_len < 1) bad("text settings must be positive");
  if (heads < 1) bad("heads must be >= 1");
  if (step_embed_dim < 2 || step_embed_dim % 2 != 0) bad("step_embed_dim must be even");
  const int needed = symmetric ? scale_count() : 1;
  if (static_cast<int>(channels.size()) < needed)
    bad("need " + std::to_string(needed) + " channel widths, got " +
        std::to_string(channels.size()));
  for (int c : channels)
    if (c < 1 || c % heads != 0) bad("channel widths must be positive multiples of heads");
  const int div = 1 << (needed - 1);
  if (height % div != 0 || width % div != 0)
    bad("spatial size must be divisible by " + std::to_string(div));
}

int BackboneConfig::scale_count() const { return symmetric ? (layers - 1) / 2 + 1 : 1; }

int BackboneConfig::scale_of(int i) const {
  if (!symmetric) return 0;
  return std::min(i, layers - 1 - i);
}

nlohmann::json BackboneConfig::to_json() const {
  return {{"frames", frames},
          {"in_channels", in_channels},
          {"height", height},
          {"width", width},
          {"layers", layers},
          {"channels", channels},
          {"text_dim", text_dim},
          {"max_prompt_len", max_prompt_len},
          {"heads", heads},
          {"step_embed_dim", step_embed_dim},
          {"symmetric", symmetric},
          {"init_seed", init_seed}};
}

BackboneConfig BackboneConfig::from_json(const nlohmann::json& j) {
  BackboneConfig c;
  try {
    c.frames = j.value("frames", c.frames);
    c.in_channels = j.value("in_channels", c.in_channels);
    c.height = j.value("height", c.height);
    c.width = j.value("width", c.width);
    c.layers = j.value("layers", c.layers);
    c.channels = j.value("channels", c.channels);
    c.text_dim = j.value("text_dim", c.text_dim);
    c.max_prompt_len = j.value("max_prompt_len", c.max_prompt_len);
    c.heads = j.value("heads", c.heads);
    c.step_embed_dim = j.value("step_embed_dim", c.step_embed_dim);
    c.symmetric = j.value("symmetric", c.symmetric);
    c.init_seed = j.value("init_seed", c.init_seed);
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::Config, std::string("backbone config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string BackboneConfig::hash() const { return hex_digest(to_json().dump()); }

std::vector<double> sinusoidal(double position, int dim) {
  std::vector<double> e(static_cast<std::size_t>(dim), 0.0);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half));
    e[i] = std::sin(position * freq);
    e[half + i] = std::cos(position * freq);
  }
  return e;
}

Tensor to_channels_last(const Tensor& x) {
  require(x.rank() == 4, ErrorKind::Contract, "expected [F, C, H, W]");
  return ops::permute(x, {0, 2, 3, 1});
}

Tensor to_channels_first(const Tensor& x) {
  require(x.rank() == 4, ErrorKind::Contract, "expected [F, H, W, C]");
  return ops::permute(x, {0, 3, 1, 2});
}

UNet3D::UNet3D(BackboneConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(mix_seed(cfg_.init_seed, 0xb0b));
  const int E = cfg_.step_embed_dim;
  const int c0 = cfg_.channels[0];
  conv_in_ = nn::Conv3x3(store_, "conv_in", cfg_.in_channels, c0, rng);
  temb1_ = nn::Linear(store_, "temb.fc1", E, E, rng);
  temb2_ = nn::Linear(store_, "temb.fc2", E, E, rng);

  const int L = cfg_.layers;
  int prev = c0;
  for (int i = 0; i < L; ++i) {
    const std::string p = "layer" + std::to_string(i + 1) + ".";
    const int cout = cfg_.channels[cfg_.scale_of(i)];
    int cin = prev;
    if (i > (L - 1) / 2) cin += cfg_.channels[cfg_.scale_of(L - 1 - i)];
    Layer layer;
    layer.norm1 = nn::LayerNorm(store_, p + "res.norm1", cin);
    layer.conv1 = nn::Conv3x3(store_, p + "res.conv1", cin, cout, rng);
    layer.temb_proj = nn::Linear(store_, p + "res.temb", E, cout, rng);
    layer.norm2 = nn::LayerNorm(store_, p + "res.norm2", cout);
    layer.conv2 = nn::Conv3x3(store_, p + "res.conv2", cout, cout, rng);
    if (cin != cout) {
      layer.skip = nn::Linear(store_, p + "res.skip", cin, cout, rng);
      layer.has_skip = true;
    }
    layer.sa = nn::Attention(store_, p + "sa", cout, cout, cfg_.heads, rng);
    layer.ca = nn::Attention(store_, p + "ca", cout, cfg_.text_dim, cfg_.heads, rng, true);
    layer.ta = nn::Attention(store_, p + "ta", cout, cout, cfg_.heads, rng);
    layers_.push_back(std::move(layer));
    prev = cout;
  }
  norm_out_ = nn::LayerNorm(store_, "norm_out", prev);
  conv_out_ = nn::Conv3x3(store_, "conv_out", prev, cfg_.in_channels, rng);
}

LayerGeometry UNet3D::geometry(int l) const {
  require(l >= 1 && l <= cfg_.layers, ErrorKind::Range,
          "layer " + std::to_string(l) + " outside [1, " + std::to_string(cfg_.layers) + "]");
  const int s = cfg_.scale_of(l - 1);
  return {l, cfg_.frames, cfg_.height >> s, cfg_.width >> s, cfg_.channels[s]};
}

Tensor UNet3D::step_embedding(int k) const {
  auto e = Tensor::constant({cfg_.step_embed_dim}, sinusoidal(k, cfg_.step_embed_dim));
  return temb2_(ops::silu(temb1_(e)));
}

Tensor UNet3D::apply_layer(int i, const Tensor& x, const Tensor& temb,
                           const ConditioningBundle& cond, const HookSet* hooks,
                           Tensor* representation) const {
  const Layer& ly = layers_[static_cast<std::size_t>(i)];
  const auto F = x.dim(0), h = x.dim(1), w = x.dim(2);

  // ResB
  auto r = ly.conv1(ops::silu(ly.norm1(x)));
  r = ops::add_trailing(r, ly.temb_proj(ops::silu(temb)));
  r = ly.conv2(ops::silu(ly.norm2(r)));
  auto y = ops::add(ly.has_skip ? ly.skip(x) : x, r);
  const auto C = y.dim(3);

  // SA within each frame, CA onto the prompt.
  auto t = ops::reshape(y, {F, h * w, C});
  t = ops::add(t, ly.sa.self_attend(t));
  if (cond.text_tokens.defined()) t = ops::add(t, ly.ca.cross_attend(t, cond.text_tokens));

  // TA along frames for each spatial position.
  auto s = ops::permute(t, {1, 0, 2});  // [hw, F, C]
  std::vector<double> pe;
  pe.reserve(static_cast<std::size_t>(F * C));
  for (std::int64_t f = 0; f < F; ++f) {
    auto e = sinusoidal(static_cast<double>(f), static_cast<int>(C));
    pe.insert(pe.end(), e.begin(), e.end());
  }
  auto ta_in = ops::add_trailing(s, Tensor::constant({F, C}, std::move(pe)));
  s = ops::add(s, ly.ta.self_attend(ta_in));

  if (representation) *representation = s;
  if (hooks) {
    auto it = hooks->find(i + 1);
    if (it != hooks->end() && it->second) {
      auto out = it->second->apply(s, geometry(i + 1));
      require(out.defined() && out.shape() == s.shape(), ErrorKind::Contract,
              "hook at layer " + std::to_string(i + 1) + " changed the token shape " +
                  ag::shape_str(s.shape()) + " -> " +
                  (out.defined() ? ag::shape_str(out.shape()) : std::string("undefined")));
      s = out;
    }
  }
  return ops::reshape(ops::permute(s, {1, 0, 2}), {F, h, w, C});
}

Tensor UNet3D::run(const Tensor& z_k, int k, const ConditioningBundle& cond, const HookSet* hooks,
                   int stop_at) const {
  require(z_k.rank() == 4 && z_k.dim(0) == cfg_.frames && z_k.dim(1) == cfg_.in_channels &&
              z_k.dim(2) == cfg_.height && z_k.dim(3) == cfg_.width,
          ErrorKind::Contract,
          "latent shape " + ag::shape_str(z_k.shape()) + " does not match the backbone config");
  if (cond.text_tokens.defined()) {
    const auto& ts = cond.text_tokens.shape();
    require(ts.size() == 2 && ts[1] == cfg_.text_dim && ts[0] >= 1 &&
                ts[0] <= cfg_.max_prompt_len,
            ErrorKind::Contract, "text tokens " + ag::shape_str(ts) + " do not match the config");
  }
  const auto temb = step_embedding(k);
  auto x = conv_in_(to_channels_last(z_k));
  const int L = cfg_.layers;
  std::vector<Tensor> outs(static_cast<std::size_t>(L));
  for (int i = 0; i < L; ++i) {
    if (i > 0) {
      const int sp = cfg_.scale_of(i - 1), sc = cfg_.scale_of(i);
      if (sc > sp) x = ops::avg_pool2(x);
      if (sc < sp) x = ops::upsample_nearest2(x);
    }
    if (i > (L - 1) / 2) x = ops::concat_last(x, outs[static_cast<std::size_t>(L - 1 - i)]);
    Tensor rep;
    x = apply_layer(i, x, temb, cond, hooks, stop_at == i + 1 ? &rep : nullptr);
    if (stop_at == i + 1) return rep;
    outs[static_cast<std::size_t>(i)] = x;
  }
  auto out = conv_out_(ops::silu(norm_out_(x)));
  return to_channels_first(out);
}

Tensor UNet3D::predict_noise(const Tensor& z_k, int k, const ConditioningBundle& cond,
                             const HookSet* hooks) const {
  return run(z_k, k, cond, hooks, 0);
}

Tensor UNet3D::layer_representation(const Tensor& z_k, int k, const ConditioningBundle& cond,
                                     int l, const HookSet* hooks) const {
  geometry(l);
  return run(z_k, k, cond, hooks, l);
}

}  // namespace cvs::backbone
