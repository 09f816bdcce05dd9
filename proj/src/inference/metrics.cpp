// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "causalvid/error.hpp"
#include "causalvid/image.hpp"
#include "causalvid/inference.hpp"

namespace cvs::eval {

namespace {

double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double cosine_checked(const std::vector<double>& a, const std::vector<double>& b, const char* what) {
  require(a.size() == b.size(), ErrorKind::Contract, std::string(what) + ": embedding widths differ");
  const double na = norm2(a), nb = norm2(b);
  require(na > 0.0 && nb > 0.0, ErrorKind::Degenerate, std::string(what) + ": zero-norm embedding");
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d += a[i] * b[i];
  return d / (na * nb);
}

using Mat = Eigen::MatrixXd;

Mat as_matrix(const GaussianFit& g) {
  const int d = g.dim();
  require(static_cast<int>(g.cov.size()) == d * d, ErrorKind::Contract, "covariance size does not match the mean");
  Mat m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = g.cov[static_cast<std::size_t>(i * d + j)];
  return 0.5 * (m + m.transpose());
}

std::string spectrum_note(const Eigen::VectorXd& ev) {
  char buf[160];
  const double lo = ev.minCoeff(), hi = ev.maxCoeff();
  std::snprintf(buf, sizeof buf, "eigenvalues in [%.3g, %.3g], condition %.3g", lo, hi,
                lo > 0 ? hi / lo : std::numeric_limits<double>::infinity());
  return buf;
}

}  // namespace

double clip_score(const std::vector<std::vector<double>>& frames, const std::vector<double>& text) {
  require(!frames.empty(), ErrorKind::Contract, "clip_score needs at least one frame");
  double s = 0.0;
  for (const auto& f : frames) s += cosine_checked(f, text, "clip_score");
  return 100.0 * s / static_cast<double>(frames.size());
}

double clip_score(const Tensor& clip, const std::string& prompt, const ToyEncoder& encoder) {
  return clip_score(encoder.frame_embeddings(clip), encoder.pooled_text(prompt));
}

double temp_c(const std::vector<std::vector<double>>& frames) {
  require(frames.size() >= 2, ErrorKind::Contract, "temp_c needs at least two frames");
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) s += cosine_checked(frames[i], frames[i + 1], "temp_c");
  return s / static_cast<double>(frames.size() - 1);
}

double temp_c(const Tensor& clip, const ToyEncoder& encoder) {
  require(clip.rank() == 4 && clip.dim(0) >= 2, ErrorKind::Contract, "temp_c needs a clip with at least two frames");
  return temp_c(encoder.frame_embeddings(clip));
}

GaussianFit fit_gaussian(const std::vector<std::vector<double>>& samples, double reg) {
  require(samples.size() >= 2, ErrorKind::Contract, "a Gaussian fit needs at least two samples");
  const std::size_t d = samples[0].size(), n = samples.size();
  require(d >= 1, ErrorKind::Contract, "empty embedding");
  GaussianFit g;
  g.mean.assign(d, 0.0);
  for (const auto& s : samples) {
    require(s.size() == d, ErrorKind::Contract, "embedding widths differ within a set");
    for (std::size_t i = 0; i < d; ++i) g.mean[i] += s[i];
  }
  for (auto& m : g.mean) m /= static_cast<double>(n);
  g.cov.assign(d * d, 0.0);
  for (const auto& s : samples)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) g.cov[i * d + j] += (s[i] - g.mean[i]) * (s[j] - g.mean[j]);
  for (auto& c : g.cov) c /= static_cast<double>(n - 1);
  for (std::size_t i = 0; i < d; ++i) g.cov[i * d + i] += reg;
  return g;
}

double frechet_from_stats(const GaussianFit& a, const GaussianFit& b) {
  require(a.dim() == b.dim() && a.dim() >= 1, ErrorKind::Contract, "frechet: dimensions differ");
  const int d = a.dim();
  double mean_term = 0.0;
  for (int i = 0; i < d; ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  const Mat A = as_matrix(a), B = as_matrix(b);

  // tr (A B)^(1/2) = tr (A^(1/2) B A^(1/2))^(1/2), both factors symmetric.
  Eigen::SelfAdjointEigenSolver<Mat> ea(A);
  require(ea.info() == Eigen::Success, ErrorKind::Numeric, "frechet: eigendecomposition failed");
  const double tol = 1e-10 * std::max(1.0, std::abs(A.trace()) + std::abs(B.trace()));
  require(ea.eigenvalues().minCoeff() >= -tol, ErrorKind::Numeric,
          "frechet: first covariance is not positive semi-definite; " + spectrum_note(ea.eigenvalues()));
  Eigen::SelfAdjointEigenSolver<Mat> eb(B, Eigen::EigenvaluesOnly);
  require(eb.eigenvalues().minCoeff() >= -tol, ErrorKind::Numeric,
          "frechet: second covariance is not positive semi-definite; " + spectrum_note(eb.eigenvalues()));
  const Eigen::VectorXd sq = ea.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  const Mat root_a = ea.eigenvectors() * sq.asDiagonal() * ea.eigenvectors().transpose();
  const Mat M = root_a * B * root_a;
  Eigen::SelfAdjointEigenSolver<Mat> em(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
  require(em.info() == Eigen::Success, ErrorKind::Numeric, "frechet: square-root eigendecomposition failed");
  require(em.eigenvalues().minCoeff() >= -tol, ErrorKind::Numeric,
          "frechet: covariance product has negative spectrum; " + spectrum_note(em.eigenvalues()));
  const double tr_sqrt = em.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  return std::max(0.0, mean_term + A.trace() + B.trace() - 2.0 * tr_sqrt);
}

double frechet_distance(const std::vector<std::vector<double>>& set_a, const std::vector<std::vector<double>>& set_b) {
  return frechet_from_stats(fit_gaussian(set_a), fit_gaussian(set_b));
}

double frechet_distance(const std::vector<Tensor>& clips_a, const std::vector<Tensor>& clips_b,
                        const ToyEncoder& encoder) {
  std::vector<std::vector<double>> a, b;
  for (const auto& c : clips_a) a.push_back(encoder.clip_embedding(c));
  for (const auto& c : clips_b) b.push_back(encoder.clip_embedding(c));
  return frechet_distance(a, b);
}

double afd(const std::vector<std::optional<Box>>& detections, const std::vector<std::optional<Box>>& gaze_regions) {
  require(!detections.empty(), ErrorKind::Contract, "afd needs at least one check");
  require(detections.size() == gaze_regions.size(), ErrorKind::Contract,
          "afd: " + std::to_string(detections.size()) + " detections vs " + std::to_string(gaze_regions.size()) +
              " gazed regions");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < detections.size(); ++i)
    if (detections[i] && gaze_regions[i] && iou(*detections[i], *gaze_regions[i]) > 0.0) ++hits;
  return 100.0 * static_cast<double>(hits) / static_cast<double>(detections.size());
}

std::optional<Box> gazed_region(const std::vector<double>& map, int height, int width, double threshold) {
  require(static_cast<std::int64_t>(map.size()) == static_cast<std::int64_t>(height) * width, ErrorKind::Contract,
          "gazed_region: map size does not match its geometry");
  double peak = 0.0;
  for (double v : map) peak = std::max(peak, v);
  if (!(peak > 0.0)) return std::nullopt;
  const double cut = threshold * peak;
  Box b{width, height, 0, 0};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (map[static_cast<std::size_t>(y) * width + x] >= cut) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x + 1);
        b.y1 = std::max(b.y1, y + 1);
      }
  return b;
}

std::optional<Box> gazed_region(const Tensor& maps, int frame, double threshold) {
  require(maps.rank() == 3, ErrorKind::Contract, "gaze maps must be [F, H, W]");
  require(frame >= 0 && frame < maps.dim(0), ErrorKind::Range, "frame index out of range");
  const auto H = maps.dim(1), W = maps.dim(2);
  const auto begin = maps.values().begin() + frame * H * W;
  return gazed_region(std::vector<double>(begin, begin + H * W), static_cast<int>(H), static_cast<int>(W), threshold);
}

namespace {
bool matches(const Tensor& frames, int f, int y, int x, const Rgb& col, int tol) {
  const auto H = frames.dim(2), W = frames.dim(3);
  const auto& v = frames.values();
  const int target[3] = {col.r, col.g, col.b};
  for (int c = 0; c < 3; ++c) {
    const int u = to_u8_signed(v[static_cast<std::size_t>(((f * 3 + c) * H + y) * W + x)]);
    if (std::abs(u - target[c]) > tol) return false;
  }
  return true;
}
}  // namespace

std::vector<std::optional<Box>> ColorDetector::detect(const Tensor& frames, const std::string& word) const {
  require(frames.rank() == 4 && frames.dim(1) == 3, ErrorKind::Contract, "detector expects [F, 3, H, W]");
  const auto cls = parse_entity(word);
  std::vector<std::optional<Box>> out(static_cast<std::size_t>(frames.dim(0)));
  if (!cls) return out;
  const Rgb col = entity_color(*cls);
  const int H = static_cast<int>(frames.dim(2)), W = static_cast<int>(frames.dim(3));
  for (int f = 0; f < frames.dim(0); ++f) {
    Box b{W, H, 0, 0};
    int count = 0;
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        if (matches(frames, f, y, x, col, tolerance_)) {
          ++count;
          b.x0 = std::min(b.x0, x);
          b.y0 = std::min(b.y0, y);
          b.x1 = std::max(b.x1, x + 1);
          b.y1 = std::max(b.y1, y + 1);
        }
    if (count >= min_pixels_) out[static_cast<std::size_t>(f)] = b;
  }
  return out;
}

double ColorDetector::coverage(const Tensor& frames, int f, EntityClass c, const Box& box) const {
  const Box b = intersect(box, Box{0, 0, static_cast<int>(frames.dim(3)), static_cast<int>(frames.dim(2))});
  if (b.empty()) return 0.0;
  const Rgb col = entity_color(c);
  long hits = 0;
  for (int y = b.y0; y < b.y1; ++y)
    for (int x = b.x0; x < b.x1; ++x) hits += matches(frames, f, y, x, col, tolerance_);
  return static_cast<double>(hits) / static_cast<double>(b.area());
}

OracleDetector::OracleDetector(EntityClass cls, std::vector<Box> boxes, double min_coverage, ColorDetector filter)
    : cls_(cls), boxes_(std::move(boxes)), min_coverage_(min_coverage), filter_(filter) {}

std::vector<std::optional<Box>> OracleDetector::detect(const Tensor& frames, const std::string& word) const {
  require(frames.rank() == 4 && frames.dim(0) == static_cast<std::int64_t>(boxes_.size()), ErrorKind::Contract,
          "oracle detector: frame count does not match the box tube");
  std::vector<std::optional<Box>> out(boxes_.size());
  const auto cls = parse_entity(word);
  if (!cls || *cls != cls_) return out;
  for (std::size_t f = 0; f < boxes_.size(); ++f)
    if (filter_.coverage(frames, static_cast<int>(f), cls_, boxes_[f]) >= min_coverage_) out[f] = boxes_[f];
  return out;
}

double TubeChange::ratio() const {
  if (outside > 0.0) return inside / outside;
  return inside > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
}

TubeChange tube_change(const Tensor& before, const Tensor& after, const std::vector<std::vector<Box>>& tubes) {
  require(before.shape() == after.shape() && before.rank() == 4, ErrorKind::Contract,
          "tube_change: clips must share a [F, C, H, W] shape");
  const auto F = before.dim(0), C = before.dim(1), H = before.dim(2), W = before.dim(3);
  for (const auto& t : tubes)
    require(static_cast<std::int64_t>(t.size()) == F, ErrorKind::Contract, "tube_change: one box per frame");
  double in_sum = 0.0, out_sum = 0.0;
  std::int64_t in_n = 0, out_n = 0;
  const auto& a = before.values();
  const auto& b = after.values();
  for (std::int64_t f = 0; f < F; ++f)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        bool inside = false;
        for (const auto& t : tubes) {
          const Box& bx = t[static_cast<std::size_t>(f)];
          inside |= x >= bx.x0 && x < bx.x1 && y >= bx.y0 && y < bx.y1;
        }
        for (std::int64_t c = 0; c < C; ++c) {
          const auto i = static_cast<std::size_t>(((f * C + c) * H + y) * W + x);
          const double d = std::abs(a[i] - b[i]);
          (inside ? in_sum : out_sum) += d;
          ++(inside ? in_n : out_n);
        }
      }
  return {in_n ? in_sum / static_cast<double>(in_n) : 0.0, out_n ? out_sum / static_cast<double>(out_n) : 0.0};
}

std::string format_metric(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  std::string s = buf;
  if (s == "-0.000000") s = "0.000000";
  return s;
}

void MetricReport::set(const std::string& key, double value) { set_text(key, format_metric(value)); }

void MetricReport::set_text(const std::string& key, const std::string& value) {
  require(!key.empty() && key.find_first_of("=\n") == std::string::npos && value.find('\n') == std::string::npos,
          ErrorKind::Contract, "metric keys and values must be single-line and keys must not contain '='");
  for (auto& [k, v] : entries_)
    if (k == key) {
      v = value;
      return;
    }
  entries_.emplace_back(key, value);
}

void MetricReport::add_clip(const std::string& name, std::vector<std::pair<std::string, double>> values) {
  for (const auto& [k, v] : values) set("clip." + name + "." + k, v);
}

std::optional<double> MetricReport::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) {
      try {
        return std::stod(v);
      } catch (const std::logic_error&) {
        return std::nullopt;
      }
    }
  return std::nullopt;
}

std::string MetricReport::to_text() const {
  std::string s = "# causalvid metrics v1\n";
  for (const auto& [k, v] : entries_) s += k + "=" + v + "\n";
  return s;
}

void MetricReport::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::Io, "cannot write metric report " + path.string());
  out << to_text();
  require(out.good(), ErrorKind::Io, "failed writing metric report " + path.string());
}

MetricReport MetricReport::parse(const std::string& text) {
  MetricReport r;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    require(eq != std::string::npos, ErrorKind::Malformed, "metric report line without '=': " + line);
    r.entries_.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  return r;
}

}  // namespace cvs::eval
