// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "causalvid/autograd.hpp"
#include "causalvid/nn.hpp"
#include "json.hpp"

namespace cvs::backbone {

using ag::Tensor;

struct BackboneConfig {
  int frames = 16;
  int in_channels = 3;
  int height = 32;
  int width = 32;
  /// Number of ResB-SA-CA-TA layers, L.
  int layers = 4;
  /// Channel width per resolution scale, finest first.
  std::vector<int> channels{32, 64};
  int text_dim = 32;
  int max_prompt_len = 32;
  int heads = 1;
  int step_embed_dim = 32;
  /// Mirror-image down/up pyramid. When false every layer runs at full
  /// resolution with channels[0].
  bool symmetric = true;
  std::uint64_t init_seed = 1;

  void validate() const;
  int scale_count() const;
  /// Resolution scale of 0-based layer index i.
  int scale_of(int i) const;
  nlohmann::json to_json() const;
  static BackboneConfig from_json(const nlohmann::json& j);
  /// Stable hex digest of the canonical JSON form.
  std::string hash() const;
};

/// Frozen conditioning for one prediction. An undefined `text_tokens`
/// means text-free: cross attention is skipped.
struct ConditioningBundle {
  Tensor text_tokens;  // [L_P, text_dim]
};

/// Sinusoidal embedding of a scalar position.
std::vector<double> sinusoidal(double position, int dim);

/// Token layout of the post-TA representation at a layer (1-based).
struct LayerGeometry {
  int layer = 0;
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  int tokens() const { return height * width; }
};

/// Replaces the post-TA representation [h*w, F, C] of a layer.
class LayerHook {
 public:
  virtual ~LayerHook() = default;
  virtual Tensor apply(const Tensor& tokens, const LayerGeometry& geometry) = 0;
};

/// 1-based layer index -> hook. Missing layers pass through unchanged.
using HookSet = std::map<int, LayerHook*>;

class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  /// z_k [F, C, H, W] at step k -> predicted noise, same shape.
  virtual Tensor predict_noise(const Tensor& z_k, int k, const ConditioningBundle& cond,
                               const HookSet* hooks = nullptr) const = 0;
};

class UNet3D : public NoisePredictor {
 public:
  explicit UNet3D(BackboneConfig cfg);

  const BackboneConfig& config() const { return cfg_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }

  Tensor predict_noise(const Tensor& z_k, int k, const ConditioningBundle& cond,
                       const HookSet* hooks = nullptr) const override;

  /// Post-TA activation at 1-based layer l, as [h_l*w_l, F, C_l]. Hooks
  /// attached to earlier layers are applied on the way.
  Tensor layer_representation(const Tensor& z_k, int k, const ConditioningBundle& cond, int l,
                              const HookSet* hooks = nullptr) const;

  LayerGeometry geometry(int l) const;

 private:
  struct Layer {
    nn::LayerNorm norm1, norm2;
    nn::Conv3x3 conv1, conv2;
    nn::Linear temb_proj;
    nn::Linear skip;  // undefined when widths agree
    bool has_skip = false;
    nn::Attention sa, ca, ta;
  };

  Tensor step_embedding(int k) const;
  Tensor run(const Tensor& z_k, int k, const ConditioningBundle& cond, const HookSet* hooks,
             int stop_at) const;
  Tensor apply_layer(int i, const Tensor& x, const Tensor& temb, const ConditioningBundle& cond,
                     const HookSet* hooks, Tensor* representation) const;

  BackboneConfig cfg_;
  nn::ParameterStore store_;
  nn::Conv3x3 conv_in_;
  nn::Linear temb1_, temb2_;
  std::vector<Layer> layers_;
  nn::LayerNorm norm_out_;
  nn::Conv3x3 conv_out_;
};

/// Converts [F, C, H, W] <-> channels-last [F, H, W, C].
Tensor to_channels_last(const Tensor& x);
Tensor to_channels_first(const Tensor& x);

}  // namespace cvs::backbone
