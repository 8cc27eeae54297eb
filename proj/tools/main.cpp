// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "commands.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> runs;
};

kdvit::cli::RunConfig resolve(const CommonFlags& flags) {
  kdvit::cli::RunConfig rc;
  if (!flags.config.empty()) rc = kdvit::cli::load_run_config(flags.config);
  if (!flags.out.empty()) rc.out = flags.out;
  if (flags.seed) rc.seed = *flags.seed;
  for (const auto& r : flags.runs) rc.runs.emplace_back(r);
  return rc;
}

void add_common(CLI::App* sub, CommonFlags& flags) {
  sub->add_option("--config", flags.config, "Run configuration (JSON)");
  sub->add_option("--out", flags.out, "Output directory (overrides the config)");
  sub->add_option("--seed", flags.seed, "Base seed (overrides the config)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kdvit: adaptive knowledge distillation for tiny vision transformers"};
  app.require_subcommand(1);
  CommonFlags flags;

  auto* train = app.add_subcommand("train", "Train a student on the source domain");
  auto* adapt = app.add_subcommand("adapt", "Adapt a student to the target domain without source data");
  auto* explain = app.add_subcommand("explain", "Grad-CAM and deep feature factorization maps");
  auto* report = app.add_subcommand("report", "Aggregate run directories into tables and plots");
  for (auto* sub : {train, adapt, explain, report}) add_common(sub, flags);
  report->add_option("runs", flags.runs, "Run directories");

  CLI11_PARSE(app, argc, argv);

  try {
    const kdvit::cli::RunConfig rc = resolve(flags);
    kdvit::cli::CommandOutput out;
    if (train->parsed()) out = kdvit::cli::cmd_train(rc);
    if (adapt->parsed()) out = kdvit::cli::cmd_adapt(rc);
    if (explain->parsed()) out = kdvit::cli::cmd_explain(rc);
    if (report->parsed()) out = kdvit::cli::cmd_report(rc);
    for (const auto& s : out.summaries()) std::cout << s.dump() << '\n';
    return 0;
  } catch (const std::exception& e) {
    const auto record = kdvit::cli::error_record(e);
    std::cerr << record.dump() << '\n';
    return record.at("exit_code").get<int>();
  }
}
