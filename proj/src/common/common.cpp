// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>

#include "causalvid/error.hpp"
#include "causalvid/hash.hpp"
#include "causalvid/rng.hpp"

namespace cvs {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Contract: return "contract violation";
    case ErrorKind::Range: return "range error";
    case ErrorKind::Config: return "config error";
    case ErrorKind::Degenerate: return "degenerate input";
    case ErrorKind::Numeric: return "numeric error";
    case ErrorKind::Io: return "i/o error";
    case ErrorKind::MissingFile: return "missing file";
    case ErrorKind::Malformed: return "malformed record";
    case ErrorKind::DanglingPath: return "dangling path";
    case ErrorKind::Chain: return "checkpoint chain error";
    case ErrorKind::Usage: return "usage error";
  }
  return "unknown error";
}

void raise(ErrorKind kind, const std::string& message) {
  throw Error(kind, std::string(to_string(kind)) + ": " + message);
}

std::vector<double> Rng::normal_vector(std::size_t n) {
  std::vector<double> out(n);
  for (auto& v : out) v = normal();
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex_digest(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(bytes)));
  return buf;
}

}  // namespace cvs
