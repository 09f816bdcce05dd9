// Copyright (C) 2026 The causalvid authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace cvs {

enum class ErrorKind {
  Contract,     // shape or precondition violation
  Range,        // index out of range
  Config,       // invalid configuration value
  Degenerate,   // degenerate numeric input (zero norm, empty set)
  Numeric,      // non-finite values, failed factorization
  Io,           // file system failure
  MissingFile,
  Malformed,
  DanglingPath,
  Chain,        // checkpoint chain mismatch
  Usage,        // command-line misuse
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void raise(ErrorKind kind, const std::string& message);

inline void require(bool cond, ErrorKind kind, const std::string& message) {
  if (!cond) raise(kind, message);
}

}  // namespace cvs
