// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>

#include <json.hpp>

#include "kdvit/error.hpp"
#include "kdvit/explain.hpp"
#include "kdvit/image_io.hpp"
#include "test_support.hpp"

namespace kdvit {
namespace {

using testing::small_config;

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected kdvit::Error";
  return Errc::kIo;
}

Mat<double> random_nonneg(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  Rng rng(seed);
  Mat<double> a(rows, cols);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform();
  return a;
}

Mat<double> random_tokens(Eigen::Index tokens, Eigen::Index h, std::uint64_t seed) {
  Rng rng(seed);
  Mat<double> a(tokens, h);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  return a;
}

TEST(NormalizeUnit, Cases) {
  EXPECT_TRUE(normalize_unit(Mat<double>::Zero(3, 3)).isZero());
  EXPECT_TRUE(normalize_unit(Mat<double>::Constant(2, 2, 0.7)).isOnes());
  Mat<double> m(1, 3);
  m << 1.0, 2.0, 5.0;
  double lo = 0.0, hi = 0.0;
  const Mat<double> n = normalize_unit(m, &lo, &hi);
  EXPECT_DOUBLE_EQ(n(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(n(0, 1), 0.25);
  EXPECT_DOUBLE_EQ(n(0, 2), 1.0);
  EXPECT_EQ(lo, 1.0);
  EXPECT_EQ(hi, 5.0);
}

TEST(CamFromTokens, ZeroGradientGivesZeroMap) {
  const Mat<double> acts = random_tokens(17, 8, 1);
  const HeatMap map = cam_from_tokens(acts, Mat<double>::Zero(17, 8), 32);
  EXPECT_EQ(map.grid.rows(), 4);
  EXPECT_EQ(map.upsampled.rows(), 32);
  EXPECT_EQ(map.upsampled.cols(), 32);
  EXPECT_TRUE(map.upsampled.isZero());
}

TEST(CamFromTokens, MatchesLoopOracle) {
  const Mat<double> acts = random_tokens(17, 6, 2);
  const Mat<double> grads = random_tokens(17, 6, 3);
  const HeatMap map = cam_from_tokens(acts, grads, 16);
  // Channel weight = mean gradient over the 16 patch tokens; the class token
  // (row 0) is ignored. Map = ReLU of the weighted channel sum per patch.
  std::vector<double> w(6, 0.0);
  for (int t = 1; t < 17; ++t) {
    for (int c = 0; c < 6; ++c) w[c] += grads(t, c) / 16.0;
  }
  for (int t = 1; t < 17; ++t) {
    double s = 0.0;
    for (int c = 0; c < 6; ++c) s += w[c] * acts(t, c);
    EXPECT_NEAR(map.grid((t - 1) / 4, (t - 1) % 4), std::max(s, 0.0), 1e-12);
  }
  EXPECT_NEAR(map.upsampled.maxCoeff(), 1.0, 1e-12);
  EXPECT_GE(map.upsampled.minCoeff(), 0.0);
}

TEST(CamFromTokens, ConstantPositiveInputsGiveOnes) {
  const Mat<double> acts = Mat<double>::Constant(17, 4, 0.5);
  const Mat<double> grads = Mat<double>::Constant(17, 4, 0.25);
  EXPECT_TRUE(cam_from_tokens(acts, grads, 8).upsampled.isOnes());
}

TEST(CamFromTokens, NonSquareGridIsGeometryError) {
  const Mat<double> acts = random_tokens(6, 4, 1);
  EXPECT_EQ(code_of([&] { cam_from_tokens(acts, acts, 8); }), Errc::kGeometry);
  EXPECT_EQ(code_of([&] { cam_from_tokens(acts, random_tokens(5, 4, 1), 8); }), Errc::kInput);
}

TEST(GradCam, ZeroHeadGivesZeroMap) {
  TinyViT<double> model(small_config());
  testing::jitter(model, 0.1, 2);
  model.params().head.weight.setZero();
  Rng rng(1);
  const Image img = testing::random_image(3, 16, rng);
  const HeatMap map = grad_cam(model, img, 1, Site::penultimate_linear(model.config()));
  EXPECT_TRUE(map.upsampled.isZero());
  EXPECT_EQ(map.target_class, 1);
}

TEST(GradCam, ProducesNormalizedMapAtImageResolution) {
  TinyViT<double> model(small_config());
  testing::jitter(model, 0.1, 2);
  Rng rng(1);
  const Image img = testing::random_image(3, 16, rng);
  for (int c = 0; c < 4; ++c) {
    const HeatMap map = grad_cam(model, img, c, Site::penultimate_linear(model.config()));
    EXPECT_EQ(map.upsampled.rows(), 16);
    EXPECT_EQ(map.grid.rows(), 4);
    EXPECT_GE(map.upsampled.minCoeff(), 0.0);
    EXPECT_LE(map.upsampled.maxCoeff(), 1.0);
  }
  const HeatMap a = grad_cam(model, img, 2, Site::block_output(0));
  const HeatMap b = grad_cam(model, img, 2, Site::block_output(0));
  EXPECT_TRUE(a.upsampled == b.upsampled);
}

TEST(GradCam, FinalNormSpatialGradientIsZero) {
  TinyViT<double> model(small_config());
  testing::jitter(model, 0.1, 2);
  Rng rng(1);
  const HeatMap map = grad_cam(model, testing::random_image(3, 16, rng), 0, Site::final_norm());
  EXPECT_TRUE(map.upsampled.isZero());
}

TEST(GradCam, RejectsBadClass) {
  const TinyViT<float> model(small_config());
  Rng rng(1);
  const Image img = testing::random_image(3, 16, rng);
  EXPECT_EQ(code_of([&] { grad_cam(model, img, 4, Site::final_norm()); }), Errc::kInput);
  EXPECT_EQ(code_of([&] { grad_cam(model, img, -1, Site::final_norm()); }), Errc::kInput);
}

TEST(Nmf, RecoversRankOneMatrix) {
  Rng rng(4);
  Eigen::VectorXd u(12), v(7);
  for (auto& x : u) x = rng.uniform(0.1, 1.0);
  for (auto& x : v) x = rng.uniform(0.1, 1.0);
  const Mat<double> a = u * v.transpose();
  const NmfResult r = nmf(a, 1, 2000, 1e-12);
  EXPECT_LT((a - r.w * r.h).norm() / a.norm(), 1e-3);
  EXPECT_NEAR(r.relative_error, (a - r.w * r.h).norm() / a.norm(), 1e-12);
}

TEST(Nmf, ZeroMatrixGivesZeroFactors) {
  const NmfResult r = nmf(Mat<double>::Zero(5, 4), 2);
  EXPECT_TRUE(r.w.isZero());
  EXPECT_TRUE(r.h.isZero());
  EXPECT_EQ(r.w.cols(), 2);
  EXPECT_EQ(r.h.rows(), 2);
  EXPECT_EQ(r.relative_error, 0.0);
}

TEST(Nmf, FactorsAreNonNegativeAndShaped) {
  const Mat<double> a = random_nonneg(20, 9, 5);
  const NmfResult r = nmf(a, 3);
  EXPECT_EQ(r.w.rows(), 20);
  EXPECT_EQ(r.w.cols(), 3);
  EXPECT_EQ(r.h.rows(), 3);
  EXPECT_EQ(r.h.cols(), 9);
  EXPECT_GE(r.w.minCoeff(), 0.0);
  EXPECT_GE(r.h.minCoeff(), 0.0);
}

TEST(Nmf, FullRankFitsAtLeastAsWellAsLowerRank) {
  const Mat<double> a = random_nonneg(10, 6, 6);
  const NmfResult full = nmf(a, 6, 3000, 0.0);
  const NmfResult lower = nmf(a, 5, 3000, 0.0);
  EXPECT_LE(full.objective.back(), lower.objective.back() * (1 + 1e-9));
}

TEST(Nmf, ObjectiveIsMonotoneAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Mat<double> a = random_nonneg(15, 8, 100 + seed);
    const NmfResult r = nmf(a, 3, 200, 0.0, seed);
    ASSERT_EQ(r.objective.size(), static_cast<std::size_t>(r.iterations) + 1);
    for (std::size_t i = 1; i < r.objective.size(); ++i) {
      EXPECT_LE(r.objective[i], r.objective[i - 1] * (1 + 1e-12)) << "seed " << seed << " step " << i;
    }
  }
}

TEST(Nmf, SameSeedSameFactors) {
  const Mat<double> a = random_nonneg(8, 5, 7);
  EXPECT_TRUE(nmf(a, 2, 100, 1e-8, 3).w == nmf(a, 2, 100, 1e-8, 3).w);
}

TEST(Nmf, RejectsInvalidInput) {
  const Mat<double> a = random_nonneg(4, 3, 1);
  EXPECT_EQ(code_of([&] { nmf(a, 0); }), Errc::kInput);
  EXPECT_EQ(code_of([&] { nmf(a, 4); }), Errc::kInput);
  EXPECT_EQ(code_of([&] { nmf(Mat<double>(0, 0), 1); }), Errc::kInput);
  Mat<double> neg = a;
  neg(1, 1) = -0.1;
  EXPECT_EQ(code_of([&] { nmf(neg, 1); }), Errc::kInput);
  Mat<double> nan = a;
  nan(0, 0) = std::nan("");
  EXPECT_EQ(code_of([&] { nmf(nan, 1); }), Errc::kInput);
  EXPECT_EQ(code_of([&] { nmf(a, 1, -1); }), Errc::kInput);
}

class DffTest : public ::testing::Test {
 protected:
  void SetUp() override {
    model_ = std::make_unique<TinyViT<double>>(small_config());
    testing::jitter(*model_, 0.1, 8);
    Rng rng(9);
    for (int i = 0; i < 3; ++i) images_.push_back(testing::random_image(3, 16, rng));
  }

  std::unique_ptr<TinyViT<double>> model_;
  std::vector<Image> images_;
};

TEST_F(DffTest, SingleConceptMapsInUnitRange) {
  const ConceptMaps c = dff(*model_, images_, 1, Site::final_norm());
  ASSERT_EQ(c.maps.size(), 3u);
  for (const auto& per_image : c.maps) {
    ASSERT_EQ(per_image.size(), 1u);
    EXPECT_GE(per_image[0].minCoeff(), 0.0);
    EXPECT_LE(per_image[0].maxCoeff(), 1.0);
    EXPECT_EQ(per_image[0].rows(), 16);
  }
  EXPECT_EQ(c.basis.rows(), 1);
  EXPECT_EQ(c.basis.cols(), 16);
}

TEST_F(DffTest, DuplicateImagesGiveIdenticalMaps) {
  const std::vector<Image> twice{images_[0], images_[0]};
  const ConceptMaps c = dff(*model_, twice, 2, Site::final_norm());
  for (int j = 0; j < 2; ++j) EXPECT_LT((c.maps[0][j] - c.maps[1][j]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_F(DffTest, ShapesForThreeConcepts) {
  const ConceptMaps c = dff(*model_, images_, 3, Site::block_output(0));
  EXPECT_EQ(c.basis.rows(), 3);
  ASSERT_EQ(c.grid.size(), 3u);
  for (const auto& g : c.grid) {
    ASSERT_EQ(g.size(), 3u);
    for (const auto& m : g) EXPECT_EQ(m.rows(), 4);
  }
  EXPECT_GE(c.residual, 0.0);
  EXPECT_LE(c.residual, 1.0);
}

TEST_F(DffTest, RejectsEmptyInputAndExcessRank) {
  EXPECT_EQ(code_of([&] { dff(*model_, std::span<const Image>{}, 1, Site::final_norm()); }), Errc::kInput);
  // One image: 16 x 16 activation matrix, so rank 17 is impossible.
  const std::vector<Image> one{images_[0]};
  EXPECT_EQ(code_of([&] { dff(*model_, one, 17, Site::final_norm()); }), Errc::kInput);
}

TEST_F(DffTest, ExportWritesPngsAndSidecar) {
  testing::TempDir dir("dff");
  const ConceptMaps c = dff(*model_, images_, 2, Site::final_norm());
  const auto files = export_concepts(c, dir.path(), "dff");
  ASSERT_EQ(files.size(), 6u);
  EXPECT_EQ(files[3].filename(), "dff_img1_concept1.png");
  for (const auto& f : files) {
    const Image img = read_image(f);
    EXPECT_EQ(img.width, 16);
  }
  std::ifstream in(dir.path() / "dff.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("site"), "final_norm");
  EXPECT_EQ(j.at("format_version"), 1);
}

TEST(ExportHeatmap, WritesPngAndSidecar) {
  testing::TempDir dir("cam");
  TinyViT<double> model(small_config());
  testing::jitter(model, 0.1, 2);
  Rng rng(1);
  const HeatMap map = grad_cam(model, testing::random_image(3, 16, rng), 3,
                               Site::penultimate_linear(model.config()));
  export_heatmap(map, dir.path() / "cam.png");
  const Image img = read_image(dir.path() / "cam.png");
  EXPECT_EQ(img.height, 16);
  std::ifstream in(dir.path() / "cam.json");
  const auto j = nlohmann::json::parse(in);
  EXPECT_EQ(j.at("class"), 3);
  EXPECT_EQ(j.at("site"), "blocks.0.mlp_out");
  EXPECT_EQ(j.at("grid_side"), 4);
}

}  // namespace
}  // namespace kdvit
