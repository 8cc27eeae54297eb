// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <exception>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdvit/error.hpp"
#include "run_config.hpp"

namespace kdvit::cli {

using Record = nlohmann::ordered_json;

/// Summary and epoch records a command produced, as written to
/// `<out>/run.jsonl`.
struct CommandOutput {
  std::filesystem::path log;
  std::vector<Record> records;

  std::vector<Record> summaries() const;
};

CommandOutput cmd_train(const RunConfig& config);
CommandOutput cmd_adapt(const RunConfig& config);
CommandOutput cmd_explain(const RunConfig& config);
CommandOutput cmd_report(const RunConfig& config);

/// Summary record with its `timing` field removed, serialized compactly.
std::string comparable(const Record& summary);

/// Population statistics; std divides by n.
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};
MeanStd mean_std(std::span<const double> values);

/// Label of an adaptation strategy in records and tables.
std::string strategy_label(Strategy s);

/// 0 on success, 2 for validation failures, 1 for runtime failures.
int exit_code(Errc code);
int exit_code(const std::exception& e);
Record error_record(const std::exception& e);

}  // namespace kdvit::cli
