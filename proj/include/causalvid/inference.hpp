// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

// Sampling with hooks detached (text-to-video and video-to-video) and the
// evaluation metrics.

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "causalvid/backbone.hpp"
#include "causalvid/diffusion.hpp"
#include "causalvid/encoder.hpp"
#include "causalvid/entity.hpp"

namespace cvs::inference {

using ag::Tensor;

enum class Mode { T2V, V2V };

const char* to_string(Mode m);
Mode parse_mode(const std::string& name);

inline constexpr double kDefaultStrength = 0.6;

struct InferenceRequest {
  Mode mode = Mode::T2V;
  std::string prompt;
  Tensor source;  // [F, C, H, W]; required for v2v, forbidden for t2v
  int ddim_steps = 50;
  double eta = 0.0;
  double strength = kDefaultStrength;
  std::uint64_t seed = 0;

  /// Usage errors for a mode/source mismatch, Config for bad numbers.
  void validate() const;
};

/// Step the edit starts from: round(s * K).
int edit_start(double strength, int total_steps);

/// The seed-derived initial noise shared by both modes.
Tensor initial_noise(const ag::Shape& shape, std::uint64_t seed);

/// Deterministic DDIM chain from `z_start` at `k_start` down to 0 over
/// `steps` sampler steps.
Tensor denoise(const backbone::NoisePredictor& model, const diffusion::NoiseSchedule& sched,
               const Tensor& z_start, int k_start, int steps, const backbone::ConditioningBundle& cond,
               double eta, std::uint64_t seed);

/// T2V: the chain from pure noise under the prompt tokens.
Tensor t2v_generate(const backbone::NoisePredictor& model, const diffusion::NoiseSchedule& sched,
                    const Tensor& text_tokens, const ag::Shape& shape, const InferenceRequest& req);

/// V2V: the source noised to round(s * K), then denoised under the prompt
/// with round(s * ddim_steps) sampler steps. s = 1 restarts from the
/// seed-derived pure noise and matches T2V.
Tensor v2v_edit(const backbone::NoisePredictor& model, const diffusion::NoiseSchedule& sched,
                const Tensor& text_tokens, const InferenceRequest& req);

/// Dispatches on the request mode.
Tensor run(const backbone::NoisePredictor& model, const diffusion::NoiseSchedule& sched,
           const Tensor& text_tokens, const ag::Shape& shape, const InferenceRequest& req);

/// Writes frames/{i:05d}.ppm and grid.ppm; returns the hex digest of the
/// exported 8-bit frames.
std::string export_clip(const Tensor& clip, const std::filesystem::path& dir);
/// Digest of the 8-bit quantization of a clip.
std::string frame_hash(const Tensor& clip);

}  // namespace cvs::inference

namespace cvs::eval {

using ag::Tensor;

/// 100 * cos(frame, text) averaged over frames.
double clip_score(const std::vector<std::vector<double>>& frame_embeddings, const std::vector<double>& text);
double clip_score(const Tensor& clip, const std::string& prompt, const ToyEncoder& encoder);

/// Mean cosine of consecutive frame embeddings.
double temp_c(const std::vector<std::vector<double>>& frame_embeddings);
double temp_c(const Tensor& clip, const ToyEncoder& encoder);

struct GaussianFit {
  std::vector<double> mean;
  std::vector<double> cov;  // row-major d x d
  int dim() const { return static_cast<int>(mean.size()); }
};

inline constexpr double kFrechetRegularizer = 1e-6;

/// Sample mean and unbiased covariance plus `reg` on the diagonal.
GaussianFit fit_gaussian(const std::vector<std::vector<double>>& samples, double reg = kFrechetRegularizer);
/// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2)).
double frechet_from_stats(const GaussianFit& a, const GaussianFit& b);
double frechet_distance(const std::vector<std::vector<double>>& set_a, const std::vector<std::vector<double>>& set_b);
/// One pooled embedding per clip.
double frechet_distance(const std::vector<Tensor>& clips_a, const std::vector<Tensor>& clips_b,
                        const ToyEncoder& encoder);

/// 100 * |{IOU(d, g) > 0}| / checks. An absent box scores IOU 0.
double afd(const std::vector<std::optional<Box>>& detections, const std::vector<std::optional<Box>>& gaze_regions);

/// Tight box of pixels >= threshold * max of an [H, W] map; nullopt when
/// the map is all zero.
std::optional<Box> gazed_region(const std::vector<double>& map, int height, int width, double threshold = 0.5);
/// Frame f of [F, H, W] maps.
std::optional<Box> gazed_region(const Tensor& maps, int frame, double threshold = 0.5);

/// Text-guided detector plug-in: per-frame boxes of an entity, or absent.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual std::vector<std::optional<Box>> detect(const Tensor& frames, const std::string& entity_word) const = 0;
};

/// Colour matched filter: pixels within `tolerance` (8-bit, per channel) of
/// the class colour; a frame detects when at least `min_pixels` match.
class ColorDetector : public Detector {
 public:
  explicit ColorDetector(int tolerance = 40, int min_pixels = 2) : tolerance_(tolerance), min_pixels_(min_pixels) {}
  std::vector<std::optional<Box>> detect(const Tensor& frames, const std::string& entity_word) const override;
  /// Fraction of pixels inside `box` of frame f matching the class colour.
  double coverage(const Tensor& frames, int frame, EntityClass c, const Box& box) const;

 private:
  int tolerance_;
  int min_pixels_;
};

/// Ground-truth boxes of the requested class, reported only where the
/// colour filter confirms the entity is visibly rendered inside them.
class OracleDetector : public Detector {
 public:
  OracleDetector(EntityClass cls, std::vector<Box> boxes, double min_coverage = 0.25, ColorDetector filter = ColorDetector());
  std::vector<std::optional<Box>> detect(const Tensor& frames, const std::string& entity_word) const override;

 private:
  EntityClass cls_;
  std::vector<Box> boxes_;
  double min_coverage_;
  ColorDetector filter_;
};

/// Mean absolute per-pixel change inside and outside the union of a box
/// tube (one box per frame) between two clips.
struct TubeChange {
  double inside = 0.0;
  double outside = 0.0;
  double ratio() const;
};
TubeChange tube_change(const Tensor& before, const Tensor& after, const std::vector<std::vector<Box>>& tubes);

/// Ordered key=value report with fixed precision.
class MetricReport {
 public:
  void set(const std::string& key, double value);
  void set_text(const std::string& key, const std::string& value);
  void add_clip(const std::string& name, std::vector<std::pair<std::string, double>> values);
  std::optional<double> get(const std::string& key) const;
  std::string to_text() const;
  void write(const std::filesystem::path& path) const;
  static MetricReport parse(const std::string& text);

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string format_metric(double v);

}  // namespace cvs::eval
