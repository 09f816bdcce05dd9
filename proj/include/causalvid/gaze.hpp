// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "causalvid/autograd.hpp"
#include "causalvid/rng.hpp"

namespace cvs::gaze {

struct FixationRecord {
  std::int64_t timestamp_ms = 0;
  int x = 0;
  int y = 0;
  std::string subject_id;
};

struct FixationLog {
  std::vector<FixationRecord> records;
  int source_width = 0;
  int source_height = 0;

  /// Throws Contract when a point lies outside the source frame or a
  /// subject's timestamps go backwards.
  void validate() const;
};

/// Reads `timestamp_ms,x,y,subject_id` delimited text with a header row.
FixationLog read_fixation_log(const std::filesystem::path& path, int source_width,
                              int source_height);
void write_fixation_log(const FixationLog& log, const std::filesystem::path& path);

struct Point {
  int x = 0;
  int y = 0;
};

struct Accumulated {
  std::vector<std::vector<Point>> frames;  // pooled over subjects
  std::int64_t dropped = 0;                // samples at or beyond the clip end
};

/// Assigns each sample at t ms to frame floor(t * fps / 1000).
Accumulated accumulate_fixations(const FixationLog& log, int fps, int frame_count);

/// Window and spread derived from a nominal kernel size: even sizes are
/// widened to the next odd size, sigma = size / 6.
struct GaussianKernel {
  int radius = 0;
  double sigma = 0.0;
  std::vector<double> weights;  // (2r+1)^2, peak 1 at the center

  static GaussianKernel from_size(int kernel_size);
  int width() const { return 2 * radius + 1; }
  double coefficient_sum() const;
};

inline constexpr int kDefaultKernelSize = 50;

/// Unit impulses at each point convolved with the truncated kernel, before
/// normalization. Returns [H, W] row-major.
std::vector<double> render_gaze_raw(const std::vector<Point>& points, int height, int width,
                                    const GaussianKernel& kernel);

/// Max-normalized map in [0, 1]; all zeros when there are no points.
std::vector<double> render_gaze_map(const std::vector<Point>& points, int height, int width,
                                    int kernel_size = kDefaultKernelSize);

/// [F, H, W] gaze maps at the clip frame rate.
ag::Tensor render_sequence(const Accumulated& acc, int height, int width, int kernel_size);

/// Frozen non-overlapping patch embedding of gaze maps.
class GazeTokenizer {
 public:
  GazeTokenizer(int patch, int channels, std::uint64_t seed);

  /// maps [F, H, W] -> tokens [n_G, F, C_G] with n_G = (H/p)(W/p).
  ag::Tensor tokenize(const ag::Tensor& maps) const;

  int patch() const { return patch_; }
  int channels() const { return channels_; }
  const std::vector<double>& bias() const { return bias_; }

 private:
  int patch_;
  int channels_;
  std::vector<double> weight_;  // [p*p, C]
  std::vector<double> bias_;    // [C]
};

}  // namespace cvs::gaze
