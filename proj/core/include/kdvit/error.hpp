// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kdvit {

enum class Errc {
  kConfig,           // invalid model / run configuration
  kInput,            // malformed or out-of-range input
  kParameter,        // invalid scalar parameter (temperature, epoch, ...)
  kSchema,           // manifest / file content violates the schema
  kIo,               // file missing or undecodable
  kCapacity,         // not enough records to satisfy a split
  kEmptyDomain,      // a filter produced no records
  kGeometry,         // token grid is not square
  kDegenerate,       // zero-norm rows and similar degenerate numerics
  kUnsupported,      // valid on its own but not in this combination
  kAggregation,      // incompatible or missing report inputs
};

std::string_view to_string(Errc code);

/// The single exception type thrown by the library. The code distinguishes
/// validation failures (config, schema, ...) from runtime ones (io, ...).
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, const std::string& what);

inline void require(bool condition, Errc code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace kdvit
