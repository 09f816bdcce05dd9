// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include "causalvid/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "causalvid/error.hpp"

namespace cvs {

void write_image(const Image& img, const std::filesystem::path& path) {
  require(img.channels == 1 || img.channels == 3, ErrorKind::Contract, "image needs 1 or 3 channels");
  require(img.data.size() == static_cast<std::size_t>(img.width) * img.height * img.channels,
          ErrorKind::Contract, "image buffer size mismatch");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorKind::Io, "cannot write " + path.string());
  out << (img.channels == 3 ? "P6" : "P5") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
  require(out.good(), ErrorKind::Io, "failed writing " + path.string());
}

namespace {
// Next header token, skipping whitespace and # comments.
bool header_token(std::istream& in, std::string& tok) {
  tok.clear();
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) return true;
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  return !tok.empty();
}
}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::MissingFile, "cannot open image " + path.string());
  std::string magic, w, h, maxv;
  const bool ok = header_token(in, magic) && header_token(in, w) && header_token(in, h) &&
                  header_token(in, maxv);
  require(ok && (magic == "P5" || magic == "P6"), ErrorKind::Malformed,
          path.string() + ": not a binary PGM/PPM image");
  Image img;
  try {
    img.width = std::stoi(w);
    img.height = std::stoi(h);
    require(std::stoi(maxv) == 255, ErrorKind::Malformed, path.string() + ": maxval must be 255");
  } catch (const std::logic_error&) {
    raise(ErrorKind::Malformed, path.string() + ": bad image header");
  }
  require(img.width > 0 && img.height > 0, ErrorKind::Malformed, path.string() + ": empty image");
  img.channels = magic == "P6" ? 3 : 1;
  img.data.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
  require(in.gcount() == static_cast<std::streamsize>(img.data.size()), ErrorKind::Malformed,
          path.string() + ": truncated pixel data");
  return img;
}

std::uint8_t to_u8_signed(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround((v + 1.0) * 127.5), 0L, 255L));
}
double from_u8_signed(std::uint8_t v) { return v / 127.5 - 1.0; }
std::uint8_t to_u8_unit(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0), 0L, 255L));
}
double from_u8_unit(std::uint8_t v) { return v / 255.0; }

Image frame_image(const ag::Tensor& clip, int frame) {
  require(clip.rank() == 4 && clip.dim(1) == 3, ErrorKind::Contract, "expected [F, 3, H, W]");
  require(frame >= 0 && frame < clip.dim(0), ErrorKind::Range, "frame index out of range");
  const int H = static_cast<int>(clip.dim(2)), W = static_cast<int>(clip.dim(3));
  Image img{W, H, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(W) * H * 3)};
  const double* base = clip.values().data() + static_cast<std::size_t>(frame) * 3 * H * W;
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < H * W; ++p) img.data[p * 3 + c] = to_u8_signed(base[c * H * W + p]);
  return img;
}

Image map_image(const ag::Tensor& maps, int frame) {
  require(maps.rank() == 3, ErrorKind::Contract, "expected [F, H, W]");
  require(frame >= 0 && frame < maps.dim(0), ErrorKind::Range, "frame index out of range");
  const int H = static_cast<int>(maps.dim(1)), W = static_cast<int>(maps.dim(2));
  Image img{W, H, 1, std::vector<std::uint8_t>(static_cast<std::size_t>(W) * H)};
  const double* base = maps.values().data() + static_cast<std::size_t>(frame) * H * W;
  for (int p = 0; p < H * W; ++p) img.data[p] = to_u8_unit(base[p]);
  return img;
}

Image frame_grid(const ag::Tensor& clip) {
  require(clip.rank() == 4 && clip.dim(1) == 3, ErrorKind::Contract, "expected [F, 3, H, W]");
  const int F = static_cast<int>(clip.dim(0)), H = static_cast<int>(clip.dim(2)),
            W = static_cast<int>(clip.dim(3));
  const int cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(F))));
  const int rows = (F + cols - 1) / cols;
  Image g;
  g.width = cols * W + (cols - 1);
  g.height = rows * H + (rows - 1);
  g.channels = 3;
  g.data.assign(static_cast<std::size_t>(g.width) * g.height * 3, 0);
  for (int f = 0; f < F; ++f) {
    const auto img = frame_image(clip, f);
    const int ox = (f % cols) * (W + 1), oy = (f / cols) * (H + 1);
    for (int y = 0; y < H; ++y)
      std::copy_n(img.data.begin() + static_cast<std::ptrdiff_t>(y) * W * 3, W * 3,
                  g.data.begin() + (static_cast<std::ptrdiff_t>(oy + y) * g.width + ox) * 3);
  }
  return g;
}

}  // namespace cvs
