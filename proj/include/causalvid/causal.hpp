// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

// Training-time causal blocks attached to backbone injection points: CTS
// (sampling adaptor, gaze-gated fusion, top-d causal token selection) and
// CTG (CTS plus background intervention and answer scoring).

#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "causalvid/backbone.hpp"
#include "causalvid/encoder.hpp"
#include "causalvid/nn.hpp"
#include "causalvid/rng.hpp"
#include "json.hpp"

namespace cvs::causal {

using ag::Tensor;
using backbone::LayerGeometry;

inline constexpr int kAnswerCount = 5;

struct CausalConfig {
  /// Tokens per frame after the sampling adaptor; a perfect square.
  int n_v = 16;
  /// Token width C_V; gaze tokens share it.
  int c_v = 64;
  double temperature = 1.0;
  bool gumbel_noise = true;
  double intervention_fraction = 0.25;
  int scorer_hidden = 32;
  int max_question_len = 10;
  int max_answer_len = 32;
  int heads = 1;
  std::uint64_t init_seed = 7;

  void validate() const;
  int grid() const;
  /// Causal tokens per frame, floor(n_v / 4).
  int d() const { return n_v / 4; }
  nlohmann::json to_json() const;
  static CausalConfig from_json(const nlohmann::json& j);
};

/// Frame-wise gate weights with the shape of the vision tokens. `axis` is
/// the normalization axis of the [n, F, C] layout (0: tokens).
struct GateTensor {
  Tensor weights;
  int axis = 0;
};

struct FusionResult {
  Tensor gated;  // z_v * z_fu
  GateTensor gate;
};

/// Tokens of one layer split into causal and background sets per frame.
struct TokenBundle {
  Tensor adapted;     // [n_V, F, C_V]
  Tensor fused;       // adapted + gated
  Tensor scores;      // [F, n_V], softmax over tokens
  Tensor causal;      // [d, F, C_V]
  Tensor background;  // [n_V - d, F, C_V]
  std::vector<std::vector<std::int64_t>> causal_indices;      // per frame, ascending
  std::vector<std::vector<std::int64_t>> background_indices;  // per frame, ascending
  int d = 0;
  int n_v = 0;
  int frames = 0;

  TokenBundle();
  TokenBundle(const TokenBundle&);
  TokenBundle& operator=(const TokenBundle&) = default;
  TokenBundle(TokenBundle&&) noexcept;
  TokenBundle& operator=(TokenBundle&&) noexcept = default;

  /// Number of bundles built since process start.
  static std::int64_t instances();

 private:
  static std::atomic<std::int64_t> count_;
};

/// Encoded accident-reason item: question tokens and five answer token sets.
struct EncodedAra {
  Tensor question;                           // [L_Q, D]
  std::array<Tensor, kAnswerCount> answers;  // [L_A, D] each
  int correct = 0;                           // 0-based; R1 by construction
};

EncodedAra encode_ara(const ToyEncoder& encoder, const std::string& question,
                      const std::array<std::string, kAnswerCount>& answers,
                      const CausalConfig& cfg, int correct = 0);

// ---- functional pieces ----

/// [h*w, F, C_l] layer tokens -> [n_V, F, C_V]: bilinear resize of each
/// frame's grid to sqrt(n_V) x sqrt(n_V), then a per-token linear map.
Tensor sampling_adaptor(const Tensor& tokens, const LayerGeometry& geometry, int n_v,
                        const nn::Linear& proj);

/// Inverse of the adaptor geometry: [n_V, F, C_V] -> [h*w, F, C_l].
Tensor inverse_adaptor(const Tensor& tokens, const LayerGeometry& geometry,
                       const nn::Linear& proj);

/// Softmax over the token axis of [n, F, C] logits, per frame and channel.
/// Gumbel noise is added before scaling by 1/temperature when `rng` is set.
Tensor gumbel_softmax_tokens(const Tensor& logits, double temperature, Rng* rng);

/// Two kernel-1 temporal convolutions with a rectifier between them.
struct GatedFusion {
  nn::Linear conv1, conv2;

  GatedFusion() = default;
  GatedFusion(nn::ParameterStore& store, const std::string& name, int c_v, int c_g, Rng& rng);
  /// Gate logits before the Gumbel softmax.
  Tensor logits(const Tensor& z_v, const Tensor& z_g) const;
  FusionResult operator()(const Tensor& z_v, const Tensor& z_g, double temperature,
                          Rng* rng) const;
};

/// Two-layer scalar head; scores are a softmax over each frame's tokens.
struct TokenScorer {
  nn::Linear fc1, fc2;

  TokenScorer() = default;
  TokenScorer(nn::ParameterStore& store, const std::string& name, int c_v, int hidden, Rng& rng);
  /// [n, F, C] -> [F, n]
  Tensor operator()(const Tensor& tokens) const;
};

/// Indices of the d largest scores of each row of a [F, n] score matrix;
/// ties resolve to the lower index. Returned ascending.
std::vector<std::vector<std::int64_t>> top_d_indices(const Tensor& scores, int d);

/// Splits fused tokens by score. The score tensor reaches the selected
/// rows through a straight-through factor so the scorer receives a
/// gradient while values stay bitwise unchanged.
TokenBundle select_causal_tokens(const Tensor& adapted, const Tensor& fused,
                                 const Tensor& scores);

/// Scatters causal and background rows back to token order, [n_V, F, C].
Tensor recombine(const TokenBundle& bundle);
Tensor recombine(const Tensor& causal, const Tensor& background, const TokenBundle& layout);

struct Intervention {
  Tensor tokens;                                    // same shape as the input
  std::vector<std::vector<std::int64_t>> replaced;  // per frame, ascending
};

/// Replaces floor(fraction * m) uniformly chosen tokens of each frame of
/// an [m, F, C] set with fresh standard-normal draws.
Intervention token_intervention(const Tensor& background, double fraction, Rng& rng);

/// Cross attention with the question as queries over a token set, mean
/// pooled and scored against each mean-pooled answer by a scaled dot
/// product. Returns [5].
Tensor answer_logits(const Tensor& tokens, const EncodedAra& ara, const nn::Attention& ca);

/// Scaled dot product of a pooled query vector [D] with each mean-pooled
/// answer. Returns [5].
Tensor score_answers(const Tensor& pooled, const EncodedAra& ara);

struct AraParts {
  Tensor total, xe_causal, xe_background, kld;
};

/// XE(causal, one-hot correct) + XE(bg, uniform over the others)
/// + KLD(softmax(bg) || softmax(bg_do)).
AraParts loss_ara_parts(const Tensor& causal_logits, const Tensor& bg_logits,
                        const Tensor& bg_do_logits, int correct = 0);
Tensor loss_ara(const Tensor& causal_logits, const Tensor& bg_logits,
                const Tensor& bg_do_logits, int correct = 0);

/// mse(e_f, e_f_hat) + gamma * ara.
Tensor loss_st2(const Tensor& e_f, const Tensor& e_f_hat, const Tensor& ara, double gamma);

// ---- blocks ----

class CtsBlock {
 public:
  struct Output {
    Tensor tokens;  // replacement layer tokens, [h*w, F, C_l]
    TokenBundle bundle;
  };

  CtsBlock() = default;
  CtsBlock(nn::ParameterStore& store, const std::string& prefix, const LayerGeometry& geometry,
           const CausalConfig& cfg, Rng& init);

  Output forward(const Tensor& z, const LayerGeometry& geometry, const Tensor& gaze_tokens,
                 Rng* rng) const;
  /// z + inverse adaptor of the recombined tokens.
  Tensor reenter(const Tensor& z, const Tensor& recombined, const LayerGeometry& geometry) const;

  const nn::Linear& adaptor() const { return adaptor_; }
  const GatedFusion& fusion() const { return fusion_; }
  const TokenScorer& scorer() const { return scorer_; }

 private:
  CausalConfig cfg_;
  nn::Linear adaptor_, inverse_;
  GatedFusion fusion_;
  TokenScorer scorer_;
};

class CtgBlock {
 public:
  struct Output {
    Tensor tokens;
    TokenBundle bundle;
    Intervention intervention;
    Tensor causal_logits, bg_logits, bg_do_logits;
    AraParts ara;
  };

  CtgBlock() = default;
  CtgBlock(nn::ParameterStore& store, const std::string& prefix, const LayerGeometry& geometry,
           int text_dim, const CausalConfig& cfg, Rng& init);

  Output forward(const Tensor& z, const LayerGeometry& geometry, const Tensor& gaze_tokens,
                 const EncodedAra& ara, Rng& rng) const;

  const CtsBlock& cts() const { return cts_; }
  const nn::Attention& ca() const { return ca_; }

 private:
  CausalConfig cfg_;
  CtsBlock cts_;
  nn::Attention ca_;
};

// ---- attachment ----

enum class BlockKind { Cts, Ctg };

const char* to_string(BlockKind kind);
BlockKind parse_block_kind(const std::string& name);

using Attachment = std::vector<std::pair<int, BlockKind>>;

/// Named ablation presets.
struct Preset {
  std::string name;
  Attachment blocks;
  bool zero_gaze = false;
};

const std::vector<std::string>& preset_names();
/// Block layout of a preset for an L-layer backbone.
Preset make_preset(const std::string& name, int layers);

/// Per-step inputs the hooks read, and outputs the CTG hook leaves behind.
struct StepContext {
  Tensor gaze_tokens;  // [n_V, F, C_V]
  const EncodedAra* ara = nullptr;
  Rng* rng = nullptr;
  std::optional<CtgBlock::Output> ctg;
  std::vector<std::pair<int, TokenBundle>> bundles;
};

/// The trainable blocks of one run plus the hook adapters that bind them
/// to a backbone forward pass.
class CausalBlocks {
 public:
  CausalBlocks(const backbone::UNet3D& model, const Attachment& blocks, const CausalConfig& cfg,
               int text_dim);
  ~CausalBlocks();
  CausalBlocks(const CausalBlocks&) = delete;
  CausalBlocks& operator=(const CausalBlocks&) = delete;

  const CausalConfig& config() const { return cfg_; }
  const Attachment& attachment() const { return attachment_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  bool has_ctg() const { return ctg_ != nullptr; }
  const CtgBlock* ctg() const { return ctg_.get(); }
  const CtsBlock* cts(int layer) const;

  /// Hooks bound to `ctx` for one forward pass.
  backbone::HookSet hooks(StepContext& ctx);

 private:
  class Hook;

  CausalConfig cfg_;
  Attachment attachment_;
  nn::ParameterStore store_;
  std::map<int, std::unique_ptr<CtsBlock>> cts_;
  std::unique_ptr<CtgBlock> ctg_;
  int ctg_layer_ = 0;
  std::vector<std::unique_ptr<Hook>> hook_objects_;
  std::map<int, backbone::LayerGeometry> geometry_;
};

/// Parameter-name prefixes owned by the causal blocks.
const std::vector<std::string>& block_prefixes();

}  // namespace cvs::causal
