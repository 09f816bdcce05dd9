// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

// Binary PPM (P6) and PGM (P5) images, 8 bits per sample.

#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "causalvid/autograd.hpp"

namespace cvs {

struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;            // 1 or 3
  std::vector<std::uint8_t> data;  // row-major, interleaved
};

void write_image(const Image& img, const std::filesystem::path& path);
/// Reads P5 or P6 with maxval 255. MissingFile / Malformed on failure.
Image read_image(const std::filesystem::path& path);

/// [-1, 1] <-> [0, 255] with rounding; values are clamped.
std::uint8_t to_u8_signed(double v);
double from_u8_signed(std::uint8_t v);
/// [0, 1] <-> [0, 255].
std::uint8_t to_u8_unit(double v);
double from_u8_unit(std::uint8_t v);

/// Frame f of a [F, 3, H, W] clip in [-1, 1] as an RGB image.
Image frame_image(const ag::Tensor& clip, int frame);
/// Frame f of [F, H, W] maps in [0, 1] as a gray image.
Image map_image(const ag::Tensor& maps, int frame);

/// Tiles all frames of a [F, 3, H, W] clip row-major into one image with
/// ceil(sqrt(F)) columns and a 1-pixel black gutter.
Image frame_grid(const ag::Tensor& clip);

}  // namespace cvs
