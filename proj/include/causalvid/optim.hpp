// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "causalvid/autograd.hpp"

namespace cvs::optim {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Owns first/second moment buffers for a fixed
/// list of parameters.
class Adam {
 public:
  Adam(std::vector<ag::Tensor> params, AdamConfig cfg);

  void step();
  void zero_grad();

  std::int64_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  // State access for checkpointing.
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }

 private:
  std::vector<ag::Tensor> params_;
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
};

}  // namespace cvs::optim
