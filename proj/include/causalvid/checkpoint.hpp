// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "causalvid/autograd.hpp"
#include "causalvid/nn.hpp"
#include "json.hpp"

namespace cvs {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  ag::Shape shape;
  std::vector<double> data;
};

/// Single-file archive: magic, version, JSON metadata, named arrays.
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
  void put(NamedArray array);
  /// Drops every array whose name starts with one of the prefixes.
  std::size_t erase_prefixes(const std::vector<std::string>& prefixes);
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Stores every parameter of `store` under `prefix + name`.
void export_parameters(const nn::ParameterStore& store, Checkpoint& ckpt,
                       const std::string& prefix = "");
/// Copies matching arrays into the store after checking shapes. With
/// `require_all`, a parameter absent from the checkpoint is an error.
std::size_t import_parameters(nn::ParameterStore& store, const Checkpoint& ckpt,
                              const std::string& prefix = "", bool require_all = true);

}  // namespace cvs
