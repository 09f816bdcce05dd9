// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include "causalvid/encoder.hpp"

#include <cctype>
#include <cmath>

#include "causalvid/error.hpp"
#include "causalvid/hash.hpp"
#include "causalvid/rng.hpp"

namespace cvs {

namespace {

constexpr int kLayoutGrid = 4;
constexpr int kLayoutDim = kLayoutGrid * kLayoutGrid * 3;
constexpr double kColorWidth = 0.25;

}  // namespace

ToyEncoder::ToyEncoder(EncoderConfig cfg) : cfg_(cfg) {
  require(cfg_.text_dim >= 2 && cfg_.text_dim % 2 == 0, ErrorKind::Config,
          "text_dim must be an even number >= 2");
  require(cfg_.vocab_buckets >= 1 && cfg_.vision_dim >= 1, ErrorKind::Config,
          "invalid encoder config");
  Rng rng(mix_seed(cfg_.seed, 0x1a70));
  layout_proj_.resize(static_cast<std::size_t>(kLayoutDim * cfg_.text_dim));
  const double s = 1.0 / std::sqrt(static_cast<double>(kLayoutDim));
  for (auto& w : layout_proj_) w = s * rng.normal();
  for (auto c : kAllEntityClasses)
    class_emb_[static_cast<int>(c)] = word_embedding(entity_word(c));
}

std::vector<std::string> ToyEncoder::words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch)) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::uint64_t ToyEncoder::bucket(const std::string& word) const {
  return fnv1a(word) % static_cast<std::uint64_t>(cfg_.vocab_buckets);
}

std::vector<double> ToyEncoder::word_embedding(const std::string& word) const {
  Rng rng(mix_seed(cfg_.seed, bucket(word)));
  const double s = 1.0 / std::sqrt(static_cast<double>(cfg_.text_dim));
  std::vector<double> e(static_cast<std::size_t>(cfg_.text_dim));
  for (auto& v : e) v = s * rng.normal();
  return e;
}

ag::Tensor ToyEncoder::encode_text(const std::string& text, int max_len) const {
  require(max_len >= 1, ErrorKind::Config, "max prompt length must be >= 1");
  auto ws = words(text);
  if (ws.empty()) ws.push_back("");
  if (static_cast<int>(ws.size()) > max_len) ws.resize(static_cast<std::size_t>(max_len));
  const int D = cfg_.text_dim;
  const double pe_scale = 1.0 / std::sqrt(static_cast<double>(D));
  std::vector<double> out;
  out.reserve(ws.size() * static_cast<std::size_t>(D));
  for (std::size_t pos = 0; pos < ws.size(); ++pos) {
    auto e = word_embedding(ws[pos]);
    for (int i = 0; i < D / 2; ++i) {
      const double freq = std::exp(-std::log(10000.0) * (2.0 * i) / D);
      e[2 * i] += pe_scale * std::sin(static_cast<double>(pos) * freq);
      e[2 * i + 1] += pe_scale * std::cos(static_cast<double>(pos) * freq);
    }
    out.insert(out.end(), e.begin(), e.end());
  }
  return ag::Tensor::constant({static_cast<std::int64_t>(ws.size()), D}, std::move(out));
}

std::vector<double> ToyEncoder::pooled_text(const std::string& text) const {
  auto ws = words(text);
  std::vector<double> acc(static_cast<std::size_t>(cfg_.text_dim), 0.0);
  if (ws.empty()) return acc;
  for (const auto& w : ws) {
    auto e = word_embedding(w);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e[i];
  }
  for (auto& v : acc) v /= static_cast<double>(ws.size());
  return acc;
}

namespace {
struct ClipDims {
  std::int64_t F, C, H, W;
};
ClipDims clip_dims(const ag::Tensor& clip) {
  require(clip.rank() == 4 && clip.dim(1) == 3, ErrorKind::Contract,
          "expected an RGB clip [F, 3, H, W], got " + ag::shape_str(clip.shape()));
  return {clip.dim(0), clip.dim(1), clip.dim(2), clip.dim(3)};
}
}  // namespace

std::array<double, kEntityClassCount> ToyEncoder::entity_presence(const ag::Tensor& clip,
                                                                  int frame) const {
  const auto [F, C, H, W] = clip_dims(clip);
  require(frame >= 0 && frame < F, ErrorKind::Range, "frame index out of range");
  std::array<double, kEntityClassCount> cov{};
  std::array<std::array<double, 3>, kEntityClassCount> cols{};
  for (auto c : kAllEntityClasses) {
    const Rgb rgb = entity_color(c);
    cols[static_cast<int>(c)] = {rgb.r / 127.5 - 1.0, rgb.g / 127.5 - 1.0, rgb.b / 127.5 - 1.0};
  }
  const auto& v = clip.values();
  const std::int64_t plane = H * W;
  const double* base = v.data() + frame * C * plane;
  for (std::int64_t p = 0; p < plane; ++p) {
    const double px[3] = {base[p], base[plane + p], base[2 * plane + p]};
    for (int k = 0; k < kEntityClassCount; ++k) {
      double d2 = 0.0;
      for (int ch = 0; ch < 3; ++ch) d2 += (px[ch] - cols[k][ch]) * (px[ch] - cols[k][ch]);
      cov[k] += std::exp(-d2 / (2.0 * kColorWidth * kColorWidth));
    }
  }
  for (auto& x : cov) x /= static_cast<double>(plane);
  return cov;
}

std::vector<double> ToyEncoder::frame_embedding(const ag::Tensor& clip, int frame) const {
  const auto [F, C, H, W] = clip_dims(clip);
  require(frame >= 0 && frame < F, ErrorKind::Range, "frame index out of range");
  const int D = cfg_.text_dim;
  // Coarse color layout on a 4x4 grid.
  std::vector<double> layout(kLayoutDim, 0.0);
  std::vector<double> counts(kLayoutGrid * kLayoutGrid, 0.0);
  const auto& v = clip.values();
  for (std::int64_t ch = 0; ch < 3; ++ch)
    for (std::int64_t y = 0; y < H; ++y)
      for (std::int64_t x = 0; x < W; ++x) {
        const auto cell = (y * kLayoutGrid / H) * kLayoutGrid + (x * kLayoutGrid / W);
        layout[cell * 3 + ch] += v[((frame * C + ch) * H + y) * W + x];
        if (ch == 0) counts[cell] += 1.0;
      }
  for (int i = 0; i < kLayoutDim; ++i) layout[i] /= std::max(1.0, counts[i / 3]);

  std::vector<double> emb(static_cast<std::size_t>(D), 0.0);
  for (int i = 0; i < kLayoutDim; ++i)
    for (int d = 0; d < D; ++d) emb[d] += layout[i] * layout_proj_[i * D + d];
  const auto cov = entity_presence(clip, frame);
  for (int k = 0; k < kEntityClassCount; ++k)
    for (int d = 0; d < D; ++d) emb[d] += cfg_.entity_gain * cov[k] * class_emb_[k][d];
  return emb;
}

std::vector<std::vector<double>> ToyEncoder::frame_embeddings(const ag::Tensor& clip) const {
  const auto F = clip_dims(clip).F;
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(F));
  for (int f = 0; f < F; ++f) out.push_back(frame_embedding(clip, f));
  return out;
}

std::vector<double> ToyEncoder::clip_embedding(const ag::Tensor& clip) const {
  auto frames = frame_embeddings(clip);
  std::vector<double> acc(static_cast<std::size_t>(cfg_.text_dim), 0.0);
  for (const auto& e : frames)
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += e[i];
  for (auto& x : acc) x /= static_cast<double>(frames.size());
  return acc;
}

ag::Tensor ToyEncoder::vision_tokens(const ag::Tensor& clip, int n_tokens) const {
  const auto [F, C, H, W] = clip_dims(clip);
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n_tokens))));
  require(g * g == n_tokens, ErrorKind::Config, "vision token count must be a perfect square");
  require(H % g == 0 && W % g == 0, ErrorKind::Config,
          "clip size not divisible by the vision token grid");
  const auto ph = H / g, pw = W / g;
  const auto in = ph * pw * 3;
  const auto D = static_cast<std::int64_t>(cfg_.vision_dim);
  Rng rng(mix_seed(cfg_.seed, 0x7150 + static_cast<std::uint64_t>(ph * 131 + pw)));
  std::vector<double> proj(static_cast<std::size_t>(in * D));
  const double s = 1.0 / std::sqrt(static_cast<double>(in));
  for (auto& w : proj) w = s * rng.normal();

  std::vector<double> out(static_cast<std::size_t>(n_tokens * F * D), 0.0);
  const auto& v = clip.values();
  for (std::int64_t f = 0; f < F; ++f)
    for (int ty = 0; ty < g; ++ty)
      for (int tx = 0; tx < g; ++tx) {
        double* dst = out.data() + ((ty * g + tx) * F + f) * D;
        std::int64_t i = 0;
        for (std::int64_t ch = 0; ch < 3; ++ch)
          for (std::int64_t py = 0; py < ph; ++py)
            for (std::int64_t px = 0; px < pw; ++px, ++i) {
              const double pix = v[((f * C + ch) * H + ty * ph + py) * W + tx * pw + px];
              const double* w = proj.data() + i * D;
              for (std::int64_t d = 0; d < D; ++d) dst[d] += pix * w[d];
            }
      }
  return ag::Tensor::constant({n_tokens, F, D}, std::move(out));
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), ErrorKind::Contract, "cosine: length mismatch");
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  require(aa > 0.0 && bb > 0.0, ErrorKind::Degenerate, "cosine of a zero-norm embedding");
  return ab / std::sqrt(aa * bb);
}

}  // namespace cvs
