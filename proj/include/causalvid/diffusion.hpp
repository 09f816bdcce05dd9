// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "causalvid/autograd.hpp"
#include "causalvid/rng.hpp"

namespace cvs::diffusion {

using ag::Tensor;

/// Video tensor [F, C, H, W].
using LatentVideo = Tensor;
/// Standard-normal tensor paired with a latent of the same shape.
using NoiseSample = Tensor;

enum class ScheduleKind { Linear, ScaledLinear, Cosine };

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

struct ScheduleConfig {
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  ScheduleKind kind = ScheduleKind::Linear;
};

/// beta_k, alpha_k = 1 - beta_k and the cumulative products alpha_bar_k for
/// k = 1..K. Index 0 is the clean state with alpha_bar_0 = 1.
class NoiseSchedule {
 public:
  explicit NoiseSchedule(const ScheduleConfig& cfg = {});

  int steps() const { return steps_; }
  double beta(int k) const;
  double alpha(int k) const;
  /// Defined for 0 <= k <= K.
  double alpha_bar(int k) const;
  const ScheduleConfig& config() const { return cfg_; }

 private:
  ScheduleConfig cfg_;
  int steps_;
  std::vector<double> betas_;       // 1-based, betas_[0] unused
  std::vector<double> alpha_bars_;  // alpha_bars_[0] == 1
};

/// sqrt(abar_k) z0 + sqrt(1 - abar_k) e.
LatentVideo forward_noise(const LatentVideo& z0, const NoiseSample& e, int k,
                          const NoiseSchedule& sched);

/// Noise scale of the eta-family step from k to k_prev.
double ddim_sigma(const NoiseSchedule& sched, int k, int k_prev, double eta);

/// One sampler step from k to k_prev < k given the predicted noise. eta = 0
/// is deterministic DDIM; eta = 1 with k_prev = k - 1 is the ancestral
/// sampler whose variance is the DDPM posterior variance.
LatentVideo ddim_step(const LatentVideo& z_k, int k, int k_prev, const Tensor& e_hat,
                      const NoiseSchedule& sched, double eta, Rng& rng);

/// Adjacent step k -> k - 1.
LatentVideo reverse_step(const LatentVideo& z_k, int k, const Tensor& e_hat,
                         const NoiseSchedule& sched, double eta, Rng& rng);

/// Descending DDIM timestep sequence ending with 0, e.g. {1000, 980, ..., 20, 0}.
std::vector<int> ddim_timesteps(int total_steps, int sample_steps);
/// Same, starting from an intermediate step (partial noising / editing).
std::vector<int> ddim_timesteps_from(int start_step, int total_steps, int sample_steps);

/// Mean of squared differences.
Tensor loss_mse(const Tensor& e, const Tensor& e_hat);

/// 1 - cos(a, b) per batch item, averaged. The leading axis of a tensor
/// with rank >= 2 is taken as the batch axis when `batched` is set;
/// otherwise the whole tensor is a single item.
Tensor loss_ns(const Tensor& a, const Tensor& b, bool batched = false);

inline constexpr double kDefaultLambda = 0.2;
inline constexpr double kDefaultGamma = 0.3;

/// mse(e_f, e_f_hat) + mse(e_r, e_r_hat) + lambda * ns(e_f_hat, e_r_hat).
Tensor loss_st1(const Tensor& e_f, const Tensor& e_f_hat, const Tensor& e_r,
                const Tensor& e_r_hat, double lambda = kDefaultLambda);

/// Scalar components of loss_st1 kept for logging.
struct St1Parts {
  Tensor total, mse_f, mse_r, ns;
};
St1Parts loss_st1_parts(const Tensor& e_f, const Tensor& e_f_hat, const Tensor& e_r,
                        const Tensor& e_r_hat, double lambda = kDefaultLambda);

/// Draws a standard-normal tensor of the given shape.
NoiseSample sample_noise(const ag::Shape& shape, Rng& rng);

}  // namespace cvs::diffusion
