// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

// File-level runs behind the command-line tool: inference into a run
// directory and evaluation over run directories.

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "causalvid/inference.hpp"
#include "causalvid/training.hpp"

namespace cvs::pipeline {

struct InferConfig {
  std::string checkpoint;
  std::string mode = "t2v";
  std::string prompt;        // empty in v2v: the source clip's prompt
  std::string source;        // clip directory (v2v)
  std::string swap_entity;   // v2v: replace the source entity word in the prompt
  int ddim_steps = 50;
  double eta = 0.0;
  double strength = inference::kDefaultStrength;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static InferConfig from_json(const nlohmann::json& j);
};

struct InferOutput {
  std::string frame_hash;
  std::string prompt;  // the prompt actually used
  eval::MetricReport report;
};

/// Run directory layout: config.json, frames/, grid.ppm, metrics.txt.
/// config.json is written before sampling starts.
InferOutput run_infer(const InferConfig& cfg, const std::filesystem::path& out_dir);

/// Same, with an already loaded backbone (hooks detached).
InferOutput run_infer(const InferConfig& cfg, const std::filesystem::path& out_dir,
                      const backbone::UNet3D& model, const training::ModelConfig& model_cfg);

struct EvalConfig {
  std::vector<std::string> runs;        // inference run directories
  std::string real_manifest;            // reference clips for the Fréchet distance
  std::string real_split;               // empty: every record
  std::string afd_boxes;                // box-pair file; replaces run-derived afd checks
  std::vector<std::string> metrics;     // empty: every metric whose inputs are present
  double gaze_threshold = 0.5;

  void validate() const;
  nlohmann::json to_json() const;
  static EvalConfig from_json(const nlohmann::json& j);
};

const std::vector<std::string>& metric_names();

eval::MetricReport run_eval(const EvalConfig& cfg);

/// frames/{i:05d}.ppm of a directory as a [F, 3, H, W] clip.
ag::Tensor load_frames(const std::filesystem::path& frames_dir);

/// One check per line: "<detection>\t<gazed region>", each "x0,y0,x1,y1" or
/// "-" for absent. Blank lines and '#' comments are skipped.
std::pair<std::vector<std::optional<Box>>, std::vector<std::optional<Box>>> read_box_pairs(
    const std::filesystem::path& path);

/// Last entity class word in a prompt.
std::optional<EntityClass> prompt_entity(const std::string& prompt);

void write_json(const nlohmann::json& j, const std::filesystem::path& path);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace cvs::pipeline
