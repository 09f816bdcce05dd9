// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "causalvid/autograd.hpp"
#include "causalvid/entity.hpp"

namespace cvs {

struct EncoderConfig {
  int text_dim = 32;
  int vocab_buckets = 4096;
  int vision_dim = 64;
  std::uint64_t seed = 0x5eed;
  /// Weight of the entity-concept term in frame embeddings.
  double entity_gain = 40.0;
};

/// Frozen, deterministic stand-in for a pretrained text/vision encoder pair.
/// Text: hash-bucketed word embeddings plus sinusoidal positions. Frames: a
/// fixed projection of coarse color layout plus soft color-concept detectors
/// mapped onto the entity words' embeddings, so frame and prompt
/// embeddings share one space.
class ToyEncoder {
 public:
  explicit ToyEncoder(EncoderConfig cfg = {});

  const EncoderConfig& config() const { return cfg_; }
  int text_dim() const { return cfg_.text_dim; }

  static std::vector<std::string> words(const std::string& text);
  std::uint64_t bucket(const std::string& word) const;
  std::vector<double> word_embedding(const std::string& word) const;

  /// [L, text_dim] with L = min(#words, max_len), at least 1.
  ag::Tensor encode_text(const std::string& text, int max_len) const;
  /// Mean word embedding without positions.
  std::vector<double> pooled_text(const std::string& text) const;

  /// Soft per-class color coverage of one frame of a [F, 3, H, W] clip.
  std::array<double, kEntityClassCount> entity_presence(const ag::Tensor& clip, int frame) const;
  std::vector<double> frame_embedding(const ag::Tensor& clip, int frame) const;
  std::vector<std::vector<double>> frame_embeddings(const ag::Tensor& clip) const;
  /// Mean of the frame embeddings.
  std::vector<double> clip_embedding(const ag::Tensor& clip) const;

  /// Frozen patch embedding: [F, 3, H, W] -> [n_tokens, F, vision_dim].
  ag::Tensor vision_tokens(const ag::Tensor& clip, int n_tokens) const;

 private:
  EncoderConfig cfg_;
  std::vector<double> layout_proj_;  // [48, text_dim]
  std::array<std::vector<double>, kEntityClassCount> class_emb_;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace cvs
