// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdvit/datasets.hpp"
#include "kdvit/losses.hpp"
#include "kdvit/trainer.hpp"
#include "kdvit/vit.hpp"

namespace kdvit::cli {

inline constexpr int kFormatVersion = 1;

struct DomainFilter {
  std::optional<Side> side;
  std::optional<Hand> hand;
};

struct DataSection {
  std::optional<SynthOptions> synth;  // procedural data when set
  bool synth_seed_explicit = false;   // otherwise each repeat uses its run seed
  std::filesystem::path source_manifest;
  std::filesystem::path target_manifest;
  DomainFilter source_filter;
  DomainFilter target_filter;
  SplitSpec split;
};

struct ExplainSection {
  std::filesystem::path checkpoint;
  std::vector<std::filesystem::path> images;
  std::string domain = "target";  // where images come from when the list is empty
  int count = 2;
  std::vector<int> classes;  // empty: the predicted class of each image
  std::string cam_site = "penultimate_linear";
  std::string dff_site = "final_norm";
  int k = 2;
  int max_iters = 200;
  double tolerance = 1e-6;
};

struct RunConfig {
  ViTConfig model;
  TrainConfig train;
  DistillConfig distill;
  std::vector<Strategy> strategies{Strategy::kMethod1};
  DataSection data;
  std::string student;                // checkpoint path, may contain {seed}
  std::vector<std::string> teachers;  // ensemble member checkpoints, may contain {seed}
  ExplainSection explain;
  std::vector<std::filesystem::path> runs;  // report inputs
  int repeats = 1;
  std::uint64_t seed = 0;
  std::filesystem::path out = "runs";

  std::uint64_t repeat_seed(int r) const { return seed + static_cast<std::uint64_t>(r); }

  /// Checks everything that can be checked before work starts. `command` is
  /// one of train, adapt, explain, report.
  void validate(std::string_view command) const;
};

/// Paths in the document are resolved against base_dir.
RunConfig run_config_from_json(const nlohmann::json& doc, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& file);
nlohmann::ordered_json to_json(const RunConfig& config);

/// Replaces every "{seed}" in pattern.
std::filesystem::path expand_seed(const std::string& pattern, std::uint64_t seed);

}  // namespace kdvit::cli
