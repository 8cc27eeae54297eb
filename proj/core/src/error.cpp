// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdvit/error.hpp"

namespace kdvit {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::kConfig: return "config";
    case Errc::kInput: return "input";
    case Errc::kParameter: return "parameter";
    case Errc::kSchema: return "schema";
    case Errc::kIo: return "io";
    case Errc::kCapacity: return "capacity";
    case Errc::kEmptyDomain: return "empty_domain";
    case Errc::kGeometry: return "geometry";
    case Errc::kDegenerate: return "degenerate";
    case Errc::kUnsupported: return "unsupported";
    case Errc::kAggregation: return "aggregation";
  }
  return "unknown";
}

Error::Error(Errc code, const std::string& what)
    : std::runtime_error(std::string(to_string(code)) + " error: " + what), code_(code) {}

void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace kdvit
