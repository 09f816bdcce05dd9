// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include "causalvid/inference.hpp"

#include <cmath>
#include <string>

#include "causalvid/error.hpp"
#include "causalvid/hash.hpp"
#include "causalvid/image.hpp"
#include "causalvid/rng.hpp"

namespace cvs::inference {

const char* to_string(Mode m) { return m == Mode::T2V ? "t2v" : "v2v"; }

Mode parse_mode(const std::string& name) {
  if (name == "t2v") return Mode::T2V;
  if (name == "v2v") return Mode::V2V;
  raise(ErrorKind::Usage, "unknown mode '" + name + "' (expected t2v or v2v)");
}

void InferenceRequest::validate() const {
  if (mode == Mode::V2V)
    require(source.defined(), ErrorKind::Usage, "v2v needs a source clip");
  else
    require(!source.defined(), ErrorKind::Usage, "t2v does not take a source clip");
  require(ddim_steps >= 1, ErrorKind::Config, "ddim steps must be positive");
  require(eta >= 0.0 && eta <= 1.0, ErrorKind::Config, "eta must lie in [0, 1]");
  if (mode == Mode::V2V)
    require(strength >= 0.0 && strength <= 1.0, ErrorKind::Config, "edit strength must lie in [0, 1]");
}

int edit_start(double strength, int total_steps) {
  require(strength >= 0.0 && strength <= 1.0, ErrorKind::Config, "edit strength must lie in [0, 1]");
  return static_cast<int>(std::lround(strength * total_steps));
}

Tensor initial_noise(const ag::Shape& shape, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x2015e));
  return diffusion::sample_noise(shape, rng);
}

Tensor denoise(const backbone::NoisePredictor& model, const diffusion::NoiseSchedule& sched, const Tensor& z_start,
               int k_start, int steps, const backbone::ConditioningBundle& cond, double eta, std::uint64_t seed) {
  ag::NoGradGuard no_grad;
  Rng rng(mix_seed(seed, 0x5a3b1e));
  const auto ts = diffusion::ddim_timesteps_from(k_start, sched.steps(), steps);
  Tensor z = z_start;
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const auto e_hat = model.predict_noise(z, ts[i], cond);
    z = diffusion::ddim_step(z, ts[i], ts[i + 1], e_hat, sched, eta, rng);
  }
  return z;
}

Tensor t2v_generate(const backbone::NoisePredictor& model, const diffusion::NoiseSchedule& sched,
                    const Tensor& text_tokens, const ag::Shape& shape, const InferenceRequest& req) {
  req.validate();
  require(req.mode == Mode::T2V, ErrorKind::Usage, "t2v_generate called with a v2v request");
  return denoise(model, sched, initial_noise(shape, req.seed), sched.steps(), req.ddim_steps, {text_tokens},
                 req.eta, req.seed);
}

Tensor v2v_edit(const backbone::NoisePredictor& model, const diffusion::NoiseSchedule& sched,
                const Tensor& text_tokens, const InferenceRequest& req) {
  req.validate();
  require(req.mode == Mode::V2V, ErrorKind::Usage, "v2v_edit called with a t2v request");
  const int K = sched.steps();
  const int k_edit = edit_start(req.strength, K);
  if (k_edit == 0) return req.source.detach();
  const auto e = initial_noise(req.source.shape(), req.seed);
  const auto z = k_edit == K ? e : diffusion::forward_noise(req.source.detach(), e, k_edit, sched);
  const int steps = std::max(1, static_cast<int>(std::lround(req.strength * req.ddim_steps)));
  return denoise(model, sched, z, k_edit, steps, {text_tokens}, req.eta, req.seed);
}

Tensor run(const backbone::NoisePredictor& model, const diffusion::NoiseSchedule& sched, const Tensor& text_tokens,
           const ag::Shape& shape, const InferenceRequest& req) {
  return req.mode == Mode::T2V ? t2v_generate(model, sched, text_tokens, shape, req)
                               : v2v_edit(model, sched, text_tokens, req);
}

std::string frame_hash(const Tensor& clip) {
  std::string bytes;
  bytes.reserve(static_cast<std::size_t>(clip.numel()));
  for (double v : clip.values()) bytes.push_back(static_cast<char>(to_u8_signed(v)));
  return hex_digest(bytes);
}

std::string export_clip(const Tensor& clip, const std::filesystem::path& dir) {
  require(clip.rank() == 4 && clip.dim(1) == 3, ErrorKind::Contract, "export_clip expects [F, 3, H, W]");
  std::error_code ec;
  std::filesystem::create_directories(dir / "frames", ec);
  require(!ec, ErrorKind::Io, "cannot create " + (dir / "frames").string() + ": " + ec.message());
  char name[32];
  for (int f = 0; f < clip.dim(0); ++f) {
    std::snprintf(name, sizeof name, "%05d.ppm", f);
    write_image(frame_image(clip, f), dir / "frames" / name);
  }
  write_image(frame_grid(clip), dir / "grid.ppm");
  return frame_hash(clip);
}

}  // namespace cvs::inference
