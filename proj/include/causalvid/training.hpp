// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

// Three-stage training: forward-only diffusion (0), reciprocal forward and
// backward prompted diffusion with the contrastive noise term (1), and
// fine-tuning with causal blocks attached (2).

#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "causalvid/backbone.hpp"
#include "causalvid/causal.hpp"
#include "causalvid/checkpoint.hpp"
#include "causalvid/diffusion.hpp"
#include "causalvid/encoder.hpp"
#include "causalvid/gaze.hpp"
#include "causalvid/optim.hpp"
#include "causalvid/scenario.hpp"
#include "json.hpp"

namespace cvs::training {

using ag::Tensor;

/// Everything that fixes the identity of a trained model. Stages of one
/// chain must agree on it.
struct ModelConfig {
  backbone::BackboneConfig backbone;
  diffusion::ScheduleConfig schedule;
  EncoderConfig encoder;
  causal::CausalConfig causal;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  std::string hash() const;
  /// Gaze patch size that yields n_V tokens per frame.
  int gaze_patch() const;
};

nlohmann::json schedule_to_json(const diffusion::ScheduleConfig& s);
diffusion::ScheduleConfig schedule_from_json(const nlohmann::json& j);
nlohmann::json encoder_to_json(const EncoderConfig& e);
EncoderConfig encoder_from_json(const nlohmann::json& j);

struct StageConfig {
  int stage = 0;
  int steps = 2000;
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch = 2;
  double lambda = diffusion::kDefaultLambda;
  double gamma = diffusion::kDefaultGamma;
  std::uint64_t seed = 0;
  /// Causal block preset for stage 2.
  std::string hooks = "full";
  /// Stage 2 trains every parameter instead of TA plus the causal blocks.
  bool train_all = false;
  std::string manifest;
  std::string checkpoint_in;
  std::string checkpoint_out;
  /// Defaults to loss_stage<n>.tsv next to the output checkpoint.
  std::string loss_log;
  /// Periodic checkpoint cadence in steps; 0 writes only the final one.
  int checkpoint_every = 0;
  /// Uses only the first n training clips when positive.
  int max_clips = 0;
  ModelConfig model;

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static StageConfig from_json(const nlohmann::json& j);
  std::filesystem::path loss_log_path() const;
};

/// One clip prepared for training: tensors the losses consume directly.
struct TrainSample {
  Tensor v_f, v_r;          // [F, 3, H, W] forward and reversed frames
  Tensor p_f, p_r;          // prompt tokens [L, D]
  Tensor gaze_tokens;       // [n_V, F, C_V]; undefined without gaze
  std::optional<causal::EncodedAra> ara;
  std::string entity;
};

/// Frozen conditioning shared by training and inference.
struct Conditioner {
  ToyEncoder encoder;
  gaze::GazeTokenizer gaze;
  ModelConfig model;

  explicit Conditioner(const ModelConfig& m);
  Tensor text(const std::string& prompt) const;
  Tensor gaze_tokens(const Tensor& maps) const;
};

TrainSample prepare_sample(const scenario::ClipRecord& rec, const Conditioner& cond);
/// Loads the "train" records of a manifest. Frame geometry must match the
/// backbone config.
std::vector<TrainSample> load_training_set(const std::filesystem::path& manifest,
                                           const Conditioner& cond, int max_clips = 0);

struct LossParts {
  Tensor total;
  std::vector<std::pair<std::string, Tensor>> components;
};

/// mse(e_f, predict(forward_noise(v_f, e_f, k), k, p_f)).
LossParts stage0_loss(const backbone::NoisePredictor& model, const diffusion::NoiseSchedule& sched,
                      const TrainSample& s, int k, const Tensor& e_f,
                      const backbone::HookSet* hooks = nullptr);

/// Both pathways evaluate the same predictor at the same k.
LossParts stage1_loss(const backbone::NoisePredictor& model, const diffusion::NoiseSchedule& sched,
                      const TrainSample& s, int k, const Tensor& e_f, const Tensor& e_r,
                      double lambda);

/// mse + gamma * ArA with the blocks bound through `ctx`, whose gaze
/// tokens and ArA item are filled from the sample.
LossParts stage2_loss(const backbone::UNet3D& model, causal::CausalBlocks& blocks,
                      const diffusion::NoiseSchedule& sched, const TrainSample& s, int k,
                      const Tensor& e_f, double gamma, bool zero_gaze, Rng& rng,
                      causal::StepContext& ctx);

struct StepReport {
  int step = 0;  // 1-based
  double loss = 0.0;
  std::vector<std::pair<std::string, double>> components;
};

/// Formats one loss-log line, without the newline.
std::string format_log_line(const StepReport& r);

/// Parameter names stage 2 updates by default.
bool default_stage2_trainable(const std::string& name);

class Trainer {
 public:
  /// Loads the manifest named by the config.
  explicit Trainer(StageConfig cfg);
  Trainer(StageConfig cfg, std::vector<TrainSample> data);
  ~Trainer();
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const StageConfig& config() const { return cfg_; }
  backbone::UNet3D& model() { return *model_; }
  causal::CausalBlocks* blocks() { return blocks_.get(); }
  const diffusion::NoiseSchedule& schedule() const { return sched_; }
  optim::Adam& optimizer() { return *adam_; }
  const std::vector<std::string>& trainable() const { return trainable_names_; }
  /// Steps completed so far, including those restored from a checkpoint.
  int completed_steps() const { return completed_; }
  /// Training-set index used by batch slot b of 0-based step s.
  std::size_t sample_index(int s, int b);

  StepReport step();
  /// Runs the remaining budget, appending to the loss log and writing
  /// checkpoints. Returns the path of the final checkpoint.
  std::filesystem::path run(std::ostream* progress = nullptr);

  Checkpoint snapshot() const;

 private:
  void init_from_checkpoint();
  void build_optimizer();
  Tensor lookup(const std::string& name) const;

  StageConfig cfg_;
  diffusion::NoiseSchedule sched_;
  std::unique_ptr<Conditioner> cond_;
  std::unique_ptr<backbone::UNet3D> model_;
  std::unique_ptr<causal::CausalBlocks> blocks_;
  causal::Preset preset_;
  std::vector<TrainSample> data_;
  std::unique_ptr<optim::Adam> adam_;
  std::vector<std::string> trainable_names_;
  std::vector<Tensor> trainable_;
  int completed_ = 0;
  std::int64_t epoch_ = -1;
  std::vector<std::size_t> order_;
  std::optional<Checkpoint> resume_;
};

struct StageResult {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  double final_loss = 0.0;
};

StageResult run_stage(const StageConfig& cfg, std::ostream* progress = nullptr);

/// Backbone weights of a training checkpoint; causal-block and optimizer
/// arrays are ignored.
std::unique_ptr<backbone::UNet3D> load_backbone(const Checkpoint& ckpt, ModelConfig* model = nullptr);

}  // namespace cvs::training
