// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "commands.hpp"
#include "kdvit/image_io.hpp"
#include "run_config.hpp"
#include "test_support.hpp"

namespace kdvit::cli {
namespace {

namespace fs = std::filesystem;

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected kdvit::Error";
  return Errc::kIo;
}

RunConfig tiny_run(const fs::path& out) {
  RunConfig c;
  c.model = testing::small_config();
  c.model.num_classes = 3;
  c.train.epochs = 3;
  c.train.learning_rate = 1e-3;
  c.train.batch_size = 4;
  c.distill.total_epochs = 3;
  SynthOptions synth;
  synth.num_subjects = 3;
  synth.images_per_subject_per_domain = 4;
  synth.image_size = 16;
  c.data.synth = synth;
  c.data.split.n_train = 3;
  c.data.split.n_test = 1;
  c.seed = 7;
  c.out = out;
  return c;
}

std::vector<std::string> lines_of(const fs::path& file) {
  std::ifstream in(file);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

TEST(MeanStd, HandComputedPopulationStd) {
  const std::vector<double> v{0.9, 0.92, 0.94};
  const MeanStd m = mean_std(v);
  EXPECT_NEAR(m.mean, 0.92, 1e-12);
  // sqrt((0.02^2 + 0 + 0.02^2) / 3) = 0.0163299...
  EXPECT_NEAR(m.std, 0.0163, 5e-5);
  EXPECT_NEAR(m.std, std::sqrt(0.0008 / 3.0), 1e-12);
  EXPECT_EQ(m.n, 3u);
  const std::vector<double> one{0.5};
  EXPECT_EQ(mean_std(one).std, 0.0);
}

TEST(ExitCodes, ValidationTwoRuntimeOne) {
  EXPECT_EQ(exit_code(Errc::kConfig), 2);
  EXPECT_EQ(exit_code(Errc::kSchema), 2);
  EXPECT_EQ(exit_code(Errc::kUnsupported), 2);
  EXPECT_EQ(exit_code(Errc::kAggregation), 2);
  EXPECT_EQ(exit_code(Errc::kIo), 1);
  EXPECT_EQ(exit_code(std::runtime_error("boom")), 1);
  const Record r = error_record(Error(Errc::kConfig, "bad"));
  EXPECT_EQ(r.at("kind"), "error");
  EXPECT_EQ(r.at("exit_code"), 2);
  EXPECT_EQ(r.at("format_version"), kFormatVersion);
}

TEST(StrategyLabel, NoneIsNoDistillation) {
  EXPECT_EQ(strategy_label(Strategy::kNone), "no distillation");
  EXPECT_EQ(strategy_label(Strategy::kMethod2), "method2");
}

TEST(RunConfigJson, RoundTripsAndResolvesPaths) {
  testing::TempDir dir("cfg");
  RunConfig c = tiny_run(dir.path() / "out");
  c.strategies = {Strategy::kNone, Strategy::kHinton};
  c.student = (dir.path() / "s{seed}.ckpt").string();
  const auto doc = to_json(c);
  const RunConfig back = run_config_from_json(nlohmann::json::parse(doc.dump()), dir.path());
  EXPECT_EQ(to_json(back).dump(), doc.dump());

  nlohmann::json rel = nlohmann::json::parse(doc.dump());
  rel["out"] = "relative";
  EXPECT_EQ(run_config_from_json(rel, dir.path()).out, dir.path() / "relative");
  rel["surprise"] = 1;
  EXPECT_EQ(code_of([&] { run_config_from_json(rel, dir.path()); }), Errc::kConfig);
  EXPECT_EQ(expand_seed("a_{seed}_{seed}.ckpt", 12), fs::path("a_12_12.ckpt"));
}

TEST(CmdTrain, WritesEpochRecordsAndCheckpoint) {
  testing::TempDir dir("train");
  const RunConfig c = tiny_run(dir.path());
  const CommandOutput out = cmd_train(c);
  int epochs = 0;
  for (const auto& r : out.records) epochs += r.at("kind") == "epoch" ? 1 : 0;
  EXPECT_EQ(epochs, 3);
  ASSERT_EQ(out.summaries().size(), 1u);
  EXPECT_TRUE(fs::exists(dir.path() / "student_seed7.ckpt"));
  EXPECT_TRUE(fs::exists(dir.path() / "config.json"));
  EXPECT_EQ(lines_of(dir.path() / "run.jsonl").size(), out.records.size());
}

TEST(CmdTrain, RepeatsWriteSeedSuffixedCheckpoints) {
  testing::TempDir dir("train3");
  RunConfig c = tiny_run(dir.path());
  c.train.epochs = 1;
  c.repeats = 3;
  const CommandOutput out = cmd_train(c);
  EXPECT_EQ(out.summaries().size(), 3u);
  for (int s : {7, 8, 9}) EXPECT_TRUE(fs::exists(dir.path() / ("student_seed" + std::to_string(s) + ".ckpt")));
}

TEST(CmdTrain, MissingManifestFailsBeforeTraining) {
  testing::TempDir dir("train_missing");
  RunConfig c = tiny_run(dir.path() / "out");
  c.data.synth.reset();
  c.data.source_manifest = dir.path() / "absent.csv";
  c.data.target_manifest = dir.path() / "absent.csv";
  try {
    cmd_train(c);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(exit_code(e), 2);
  }
  EXPECT_FALSE(fs::exists(dir.path() / "out" / "run.jsonl"));
}

class AdaptFlow : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::make_unique<testing::TempDir>("adapt");
    RunConfig t = tiny_run(dir_->path() / "train");
    t.repeats = 2;
    cmd_train(t);
    config_ = tiny_run(dir_->path() / "adapt");
    config_.repeats = 2;
    config_.strategies = {Strategy::kNone, Strategy::kMethod2};
    config_.student = (dir_->path() / "train" / "student_seed{seed}.ckpt").string();
  }

  std::unique_ptr<testing::TempDir> dir_;
  RunConfig config_;
};

TEST_F(AdaptFlow, SummaryCarriesLabelsAndFourAccuracies) {
  const auto sums = cmd_adapt(config_).summaries();
  ASSERT_EQ(sums.size(), 4u);
  const auto& none = sums[0];
  EXPECT_NE(none.at("label").get<std::string>().find("no distillation"), std::string::npos);
  for (const char* key : {"source_before", "target_before", "source_after", "target_after"}) {
    EXPECT_TRUE(none.at("accuracy").contains(key)) << key;
  }
  for (const auto& s : sums) EXPECT_EQ(s.at("audit").at("source_records_during_adapt"), 0);
}

TEST_F(AdaptFlow, RerunIsIdenticalApartFromTiming) {
  const auto a = cmd_adapt(config_).summaries();
  const auto b = cmd_adapt(config_).summaries();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(comparable(a[i]), comparable(b[i]));
  EXPECT_TRUE(a[0].contains("timing"));
  EXPECT_EQ(comparable(a[0]).find("timing"), std::string::npos);
}

TEST_F(AdaptFlow, Method2WithEnsembleIsRejected) {
  config_.distill.teacher_kind = TeacherKind::kEnsemble;
  config_.teachers = {(dir_->path() / "train" / "student_seed7.ckpt").string(),
                      (dir_->path() / "train" / "student_seed8.ckpt").string()};
  try {
    cmd_adapt(config_);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::kUnsupported);
    EXPECT_EQ(exit_code(e), 2);
  }
  config_.strategies = {Strategy::kHinton};
  EXPECT_EQ(cmd_adapt(config_).summaries().at(0).at("teacher"), "ensemble");
}

TEST_F(AdaptFlow, ReportReDerivesFromRecords) {
  const auto sums = cmd_adapt(config_).summaries();
  RunConfig r;
  r.runs = {config_.out};
  r.out = dir_->path() / "report";
  cmd_report(r);
  double expected = 0.0;
  for (const auto& s : sums) {
    if (s.at("strategy") == "method2") expected += s.at("accuracy").at("target_after").get<double>() / 2.0;
  }
  bool found = false;
  for (const auto& line : lines_of(r.out / "report.csv")) {
    if (line.find("method2") == std::string::npos || line.find(",target,") == std::string::npos) continue;
    std::stringstream ss(line.substr(line.find(",target,") + 8));
    double mean = 0.0;
    ss >> mean;
    EXPECT_NEAR(mean, expected, 1e-6);
    found = true;
  }
  EXPECT_TRUE(found);
  EXPECT_EQ(lines_of(r.out / "report.csv").front(), "row,label,column,mean,std_population,repeats");
  for (const char* f : {"report.txt", "report.json", "loss_curves.png", "accuracy_bars.png"}) {
    EXPECT_TRUE(fs::exists(r.out / f)) << f;
  }
}

TEST_F(AdaptFlow, ReportRejectsMixedExperiments) {
  cmd_adapt(config_);
  RunConfig r;
  r.runs = {config_.out, dir_->path() / "train"};
  r.out = dir_->path() / "report";
  EXPECT_EQ(code_of([&] { cmd_report(r); }), Errc::kAggregation);
}

TEST(CmdReport, EmptyDirectoryIsAggregationError) {
  testing::TempDir dir("empty");
  fs::create_directories(dir.path() / "run");
  RunConfig r;
  r.runs = {dir.path() / "run"};
  r.out = dir.path() / "report";
  EXPECT_EQ(code_of([&] { cmd_report(r); }), Errc::kAggregation);
  r.runs.clear();
  EXPECT_EQ(code_of([&] { cmd_report(r); }), Errc::kAggregation);
}

TEST(CmdExplain, WritesCamAndConceptFiles) {
  testing::TempDir dir("explain");
  RunConfig t = tiny_run(dir.path() / "train");
  cmd_train(t);
  RunConfig c = tiny_run(dir.path() / "explain");
  c.explain.checkpoint = dir.path() / "train" / "student_seed7.ckpt";
  c.explain.domain = "source";
  c.explain.count = 2;
  c.explain.classes = {0, 2};
  c.explain.k = 2;
  cmd_explain(c);
  int cams = 0, concepts = 0;
  for (const auto& e : fs::directory_iterator(c.out)) {
    const std::string name = e.path().filename().string();
    if (e.path().extension() != ".png") continue;
    cams += name.rfind("cam_", 0) == 0 ? 1 : 0;
    concepts += name.rfind("dff_", 0) == 0 ? 1 : 0;
  }
  EXPECT_EQ(cams, 4);
  EXPECT_EQ(concepts, 4);
  EXPECT_TRUE(fs::exists(c.out / "cam_img1_class2.json"));
  EXPECT_TRUE(fs::exists(c.out / "dff.json"));

  c.explain.classes = {3};
  EXPECT_EQ(code_of([&] { cmd_explain(c); }), Errc::kInput);
}

TEST(CmdExplain, ZeroGradientSiteGivesBlackImage) {
  testing::TempDir dir("explain_black");
  RunConfig t = tiny_run(dir.path() / "train");
  cmd_train(t);
  RunConfig c = tiny_run(dir.path() / "explain");
  c.explain.checkpoint = dir.path() / "train" / "student_seed7.ckpt";
  c.explain.domain = "source";
  c.explain.count = 1;
  c.explain.classes = {1};
  c.explain.cam_site = "final_norm";
  c.explain.k = 1;
  cmd_explain(c);
  const Image img = read_image(c.out / "cam_img0_class1.png");
  for (float v : img.data) EXPECT_EQ(v, 0.0f);
}

}  // namespace
}  // namespace kdvit::cli
