// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include "causalvid/diffusion.hpp"

#include <cmath>
#include <numbers>

#include "causalvid/error.hpp"

namespace cvs::diffusion {

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "linear") return ScheduleKind::Linear;
  if (name == "scaled_linear") return ScheduleKind::ScaledLinear;
  if (name == "cosine") return ScheduleKind::Cosine;
  raise(ErrorKind::Config, "unknown schedule kind '" + name + "'");
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::Linear: return "linear";
    case ScheduleKind::ScaledLinear: return "scaled_linear";
    case ScheduleKind::Cosine: return "cosine";
  }
  return "linear";
}

NoiseSchedule::NoiseSchedule(const ScheduleConfig& cfg) : cfg_(cfg), steps_(cfg.steps) {
  require(steps_ >= 1, ErrorKind::Config, "schedule needs at least one step");
  betas_.assign(static_cast<std::size_t>(steps_) + 1, 0.0);
  const double K = static_cast<double>(steps_);
  for (int k = 1; k <= steps_; ++k) {
    const double t = steps_ == 1 ? 0.0 : static_cast<double>(k - 1) / (K - 1.0);
    double b = 0.0;
    switch (cfg.kind) {
      case ScheduleKind::Linear:
        b = cfg.beta_start + t * (cfg.beta_end - cfg.beta_start);
        break;
      case ScheduleKind::ScaledLinear: {
        const double s = std::sqrt(cfg.beta_start) +
                         t * (std::sqrt(cfg.beta_end) - std::sqrt(cfg.beta_start));
        b = s * s;
        break;
      }
      case ScheduleKind::Cosine: {
        auto f = [&](double x) {
          const double c = std::cos((x / K + 0.008) / 1.008 * std::numbers::pi / 2.0);
          return c * c;
        };
        b = std::min(1.0 - f(static_cast<double>(k)) / f(static_cast<double>(k - 1)), 0.999);
        break;
      }
    }
    require(b > 0.0 && b < 1.0, ErrorKind::Config, "beta outside (0, 1) at step " + std::to_string(k));
    betas_[k] = b;
  }
  alpha_bars_.assign(static_cast<std::size_t>(steps_) + 1, 1.0);
  for (int k = 1; k <= steps_; ++k) alpha_bars_[k] = alpha_bars_[k - 1] * (1.0 - betas_[k]);
}

double NoiseSchedule::beta(int k) const {
  require(k >= 1 && k <= steps_, ErrorKind::Range, "step " + std::to_string(k) + " outside [1, K]");
  return betas_[k];
}

double NoiseSchedule::alpha(int k) const { return 1.0 - beta(k); }

double NoiseSchedule::alpha_bar(int k) const {
  require(k >= 0 && k <= steps_, ErrorKind::Range, "step " + std::to_string(k) + " outside [0, K]");
  return alpha_bars_[k];
}

namespace {
void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  require(a.shape() == b.shape(), ErrorKind::Contract,
          std::string(what) + ": shape mismatch " + ag::shape_str(a.shape()) + " vs " +
              ag::shape_str(b.shape()));
}
}  // namespace

LatentVideo forward_noise(const LatentVideo& z0, const NoiseSample& e, int k,
                          const NoiseSchedule& sched) {
  check_same_shape(z0, e, "forward_noise");
  require(k >= 1 && k <= sched.steps(), ErrorKind::Range,
          "forward_noise: step " + std::to_string(k) + " outside [1, K]");
  const double ab = sched.alpha_bar(k);
  return ag::add(ag::scale(z0, std::sqrt(ab)), ag::scale(e, std::sqrt(1.0 - ab)));
}

double ddim_sigma(const NoiseSchedule& sched, int k, int k_prev, double eta) {
  const double ab = sched.alpha_bar(k);
  const double ab_prev = sched.alpha_bar(k_prev);
  return eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
}

LatentVideo ddim_step(const LatentVideo& z_k, int k, int k_prev, const Tensor& e_hat,
                      const NoiseSchedule& sched, double eta, Rng& rng) {
  require(k >= 1 && k <= sched.steps(), ErrorKind::Range,
          "reverse step: k = " + std::to_string(k) + " outside [1, K]");
  require(k_prev >= 0 && k_prev < k, ErrorKind::Range, "reverse step: k_prev must be in [0, k)");
  require(eta >= 0.0 && eta <= 1.0, ErrorKind::Config, "eta must lie in [0, 1]");
  check_same_shape(z_k, e_hat, "reverse_step");
  const double ab = sched.alpha_bar(k);
  const double ab_prev = sched.alpha_bar(k_prev);
  const double sigma = ddim_sigma(sched, k, k_prev, eta);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));

  const auto& z = z_k.values();
  const auto& e = e_hat.values();
  std::vector<double> out(z.size());
  const double sab = std::sqrt(ab), s1ab = std::sqrt(1.0 - ab), sabp = std::sqrt(ab_prev);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double x0 = (z[i] - s1ab * e[i]) / sab;
    out[i] = sabp * x0 + dir * e[i];
  }
  if (sigma > 0.0)
    for (auto& v : out) v += sigma * rng.normal();
  return Tensor::constant(z_k.shape(), std::move(out));
}

LatentVideo reverse_step(const LatentVideo& z_k, int k, const Tensor& e_hat,
                         const NoiseSchedule& sched, double eta, Rng& rng) {
  require(k >= 1, ErrorKind::Range, "reverse_step: k must be >= 1");
  return ddim_step(z_k, k, k - 1, e_hat, sched, eta, rng);
}

std::vector<int> ddim_timesteps_from(int start_step, int total_steps, int sample_steps) {
  require(start_step >= 0 && start_step <= total_steps, ErrorKind::Range,
          "ddim start step outside [0, K]");
  require(sample_steps >= 1, ErrorKind::Config, "need at least one sampling step");
  std::vector<int> ts;
  if (start_step == 0) return {0};
  const int n = std::min(sample_steps, start_step);
  for (int i = n; i >= 1; --i) {
    const int t = static_cast<int>(std::llround(static_cast<double>(i) * start_step / n));
    if (ts.empty() || t < ts.back()) ts.push_back(t);
  }
  ts.push_back(0);
  return ts;
}

std::vector<int> ddim_timesteps(int total_steps, int sample_steps) {
  return ddim_timesteps_from(total_steps, total_steps, sample_steps);
}

Tensor loss_mse(const Tensor& e, const Tensor& e_hat) {
  check_same_shape(e, e_hat, "loss_mse");
  auto d = ag::sub(e, e_hat);
  return ag::mean(ag::square(d));
}

Tensor loss_ns(const Tensor& a, const Tensor& b, bool batched) {
  check_same_shape(a, b, "loss_ns");
  const std::int64_t items = batched && a.rank() >= 2 ? a.dim(0) : 1;
  const std::int64_t per = a.numel() / items;
  auto av = ag::reshape(a, {items, per});
  auto bv = ag::reshape(b, {items, per});
  Tensor total;
  for (std::int64_t i = 0; i < items; ++i) {
    std::vector<std::int64_t> row{i};
    auto ai = ag::gather_rows(av, row);
    auto bi = ag::gather_rows(bv, row);
    auto na = ag::dot(ai, ai);
    auto nb = ag::dot(bi, bi);
    require(na.item() > 0.0 && nb.item() > 0.0, ErrorKind::Degenerate,
            "loss_ns: zero-norm prediction");
    auto cos = ag::div(ag::dot(ai, bi), ag::sqrt(ag::mul(na, nb)));
    auto term = ag::add_scalar(ag::scale(cos, -1.0), 1.0);
    total = total.defined() ? ag::add(total, term) : term;
  }
  return ag::scale(total, 1.0 / static_cast<double>(items));
}

St1Parts loss_st1_parts(const Tensor& e_f, const Tensor& e_f_hat, const Tensor& e_r,
                        const Tensor& e_r_hat, double lambda) {
  St1Parts p;
  p.mse_f = loss_mse(e_f, e_f_hat);
  p.mse_r = loss_mse(e_r, e_r_hat);
  p.ns = loss_ns(e_f_hat, e_r_hat);
  p.total = ag::add(ag::add(p.mse_f, p.mse_r), ag::scale(p.ns, lambda));
  return p;
}

Tensor loss_st1(const Tensor& e_f, const Tensor& e_f_hat, const Tensor& e_r,
                const Tensor& e_r_hat, double lambda) {
  return loss_st1_parts(e_f, e_f_hat, e_r, e_r_hat, lambda).total;
}

NoiseSample sample_noise(const ag::Shape& shape, Rng& rng) {
  return Tensor::constant(shape, rng.normal_vector(static_cast<std::size_t>(ag::numel(shape))));
}

}  // namespace cvs::diffusion
