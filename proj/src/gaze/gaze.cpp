// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include "causalvid/gaze.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "causalvid/error.hpp"

namespace cvs::gaze {

void FixationLog::validate() const {
  std::map<std::string, std::int64_t> last;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    require(r.x >= 0 && r.x < source_width && r.y >= 0 && r.y < source_height,
            ErrorKind::Contract, "fixation " + std::to_string(i) + " outside the source frame");
    auto it = last.find(r.subject_id);
    require(it == last.end() || it->second <= r.timestamp_ms, ErrorKind::Contract,
            "fixation " + std::to_string(i) + ": timestamps decrease for subject " + r.subject_id);
    last[r.subject_id] = r.timestamp_ms;
  }
}

FixationLog read_fixation_log(const std::filesystem::path& path, int source_width,
                              int source_height) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::MissingFile, "cannot open fixation log " + path.string());
  FixationLog log;
  log.source_width = source_width;
  log.source_height = source_height;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::Malformed,
          "fixation log " + path.string() + " is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == "timestamp_ms,x,y,subject_id", ErrorKind::Malformed,
          "fixation log header must be 'timestamp_ms,x,y,subject_id'");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string t, x, y, s;
    const bool ok = std::getline(ss, t, ',') && std::getline(ss, x, ',') &&
                    std::getline(ss, y, ',') && std::getline(ss, s);
    require(ok, ErrorKind::Malformed, "fixation log line " + std::to_string(lineno));
    try {
      log.records.push_back({std::stoll(t), std::stoi(x), std::stoi(y), s});
    } catch (const std::exception&) {
      raise(ErrorKind::Malformed, "fixation log line " + std::to_string(lineno));
    }
  }
  log.validate();
  return log;
}

void write_fixation_log(const FixationLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorKind::Io, "cannot write " + path.string());
  out << "timestamp_ms,x,y,subject_id\n";
  for (const auto& r : log.records)
    out << r.timestamp_ms << ',' << r.x << ',' << r.y << ',' << r.subject_id << '\n';
}

Accumulated accumulate_fixations(const FixationLog& log, int fps, int frame_count) {
  require(fps > 0, ErrorKind::Config, "fps must be positive");
  require(frame_count >= 0, ErrorKind::Config, "negative frame count");
  Accumulated acc;
  acc.frames.resize(static_cast<std::size_t>(frame_count));
  for (const auto& r : log.records) {
    if (r.timestamp_ms < 0) {
      ++acc.dropped;
      continue;
    }
    const std::int64_t f = r.timestamp_ms * fps / 1000;
    if (f >= frame_count) {
      ++acc.dropped;
      continue;
    }
    acc.frames[static_cast<std::size_t>(f)].push_back({r.x, r.y});
  }
  return acc;
}

GaussianKernel GaussianKernel::from_size(int kernel_size) {
  require(kernel_size >= 1, ErrorKind::Config, "kernel size must be positive");
  GaussianKernel k;
  const int width = kernel_size % 2 == 1 ? kernel_size : kernel_size + 1;
  k.radius = width / 2;
  k.sigma = static_cast<double>(kernel_size) / 6.0;
  k.weights.resize(static_cast<std::size_t>(width * width));
  const double two_s2 = 2.0 * k.sigma * k.sigma;
  for (int dy = -k.radius; dy <= k.radius; ++dy)
    for (int dx = -k.radius; dx <= k.radius; ++dx)
      k.weights[(dy + k.radius) * width + (dx + k.radius)] =
          std::exp(-static_cast<double>(dx * dx + dy * dy) / two_s2);
  return k;
}

double GaussianKernel::coefficient_sum() const {
  double s = 0.0;
  for (double w : weights) s += w;
  return s;
}

std::vector<double> render_gaze_raw(const std::vector<Point>& points, int height, int width,
                                    const GaussianKernel& kernel) {
  std::vector<double> map(static_cast<std::size_t>(height * width), 0.0);
  const int r = kernel.radius;
  const int kw = kernel.width();
  for (const auto& p : points) {
    require(p.x >= 0 && p.x < width && p.y >= 0 && p.y < height, ErrorKind::Contract,
            "fixation point outside the map");
    for (int dy = -r; dy <= r; ++dy) {
      const int y = p.y + dy;
      if (y < 0 || y >= height) continue;
      for (int dx = -r; dx <= r; ++dx) {
        const int x = p.x + dx;
        if (x < 0 || x >= width) continue;
        map[y * width + x] += kernel.weights[(dy + r) * kw + (dx + r)];
      }
    }
  }
  return map;
}

std::vector<double> render_gaze_map(const std::vector<Point>& points, int height, int width,
                                    int kernel_size) {
  auto map = render_gaze_raw(points, height, width, GaussianKernel::from_size(kernel_size));
  const double mx = map.empty() ? 0.0 : *std::max_element(map.begin(), map.end());
  if (mx > 0.0)
    for (auto& v : map) v /= mx;
  return map;
}

ag::Tensor render_sequence(const Accumulated& acc, int height, int width, int kernel_size) {
  const auto F = static_cast<std::int64_t>(acc.frames.size());
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(F * height * width));
  for (const auto& pts : acc.frames) {
    auto m = render_gaze_map(pts, height, width, kernel_size);
    out.insert(out.end(), m.begin(), m.end());
  }
  return ag::Tensor::constant({F, height, width}, std::move(out));
}

GazeTokenizer::GazeTokenizer(int patch, int channels, std::uint64_t seed)
    : patch_(patch), channels_(channels) {
  require(patch >= 1 && channels >= 1, ErrorKind::Config, "invalid gaze tokenizer geometry");
  Rng rng(mix_seed(seed, 0x6a7e));
  const double stddev = 1.0 / patch;
  weight_.resize(static_cast<std::size_t>(patch * patch * channels));
  for (auto& w : weight_) w = stddev * rng.normal();
  bias_.resize(static_cast<std::size_t>(channels));
  for (auto& b : bias_) b = 0.1 * rng.normal();
}

ag::Tensor GazeTokenizer::tokenize(const ag::Tensor& maps) const {
  require(maps.rank() == 3, ErrorKind::Contract, "gaze maps must be [F, H, W]");
  const auto F = maps.dim(0), H = maps.dim(1), W = maps.dim(2);
  require(H % patch_ == 0 && W % patch_ == 0, ErrorKind::Config,
          "gaze map " + std::to_string(H) + "x" + std::to_string(W) +
              " is not divisible by patch " + std::to_string(patch_));
  const auto gh = H / patch_, gw = W / patch_, n = gh * gw;
  const auto C = static_cast<std::int64_t>(channels_);
  std::vector<double> out(static_cast<std::size_t>(n * F * C));
  const auto& v = maps.values();
  for (std::int64_t f = 0; f < F; ++f)
    for (std::int64_t ty = 0; ty < gh; ++ty)
      for (std::int64_t tx = 0; tx < gw; ++tx) {
        double* dst = out.data() + ((ty * gw + tx) * F + f) * C;
        std::copy(bias_.begin(), bias_.end(), dst);
        for (int py = 0; py < patch_; ++py)
          for (int px = 0; px < patch_; ++px) {
            const double pix = v[(f * H + ty * patch_ + py) * W + tx * patch_ + px];
            if (pix == 0.0) continue;
            const double* w = weight_.data() + (py * patch_ + px) * C;
            for (std::int64_t c = 0; c < C; ++c) dst[c] += pix * w[c];
          }
      }
  return ag::Tensor::constant({n, F, C}, std::move(out));
}

}  // namespace cvs::gaze
