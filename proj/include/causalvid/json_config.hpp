// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <set>
#include <string>

#include "json.hpp"

#include "causalvid/error.hpp"

namespace cvs {

/// Runs f, turning JSON type errors into Config errors prefixed with `what`.
template <class F>
auto as_config(const char* what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    raise(ErrorKind::Config, std::string(what) + ": " + e.what());
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known, const char* what) {
  require(j.is_object(), ErrorKind::Config, std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    require(known.count(key) > 0, ErrorKind::Config, std::string(what) + ": unknown key '" + key + "'");
}

}  // namespace cvs
