// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "kdvit/error.hpp"
#include "kdvit/teachers.hpp"
#include "kdvit/trainer.hpp"
#include "test_support.hpp"

namespace kdvit {
namespace {

using testing::small_config;

LabeledImages random_set(const ViTConfig& cfg, int per_class, std::uint64_t seed, std::string domain = "toy") {
  Rng rng(seed);
  LabeledImages data;
  data.domain = std::move(domain);
  data.origin = "memory";
  data.image_size = cfg.image_size;
  data.channels = cfg.channels;
  for (int i = 0; i < per_class * cfg.num_classes; ++i) {
    data.images.push_back(testing::random_image(cfg.channels, cfg.image_size, rng));
    data.labels.push_back(i % cfg.num_classes);
  }
  return data;
}

TrainConfig quiet(int epochs, double lr) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.learning_rate = lr;
  tc.batch_size = 8;
  tc.random_crop = false;
  tc.horizontal_flip = false;
  tc.seed = 3;
  return tc;
}

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected kdvit::Error";
  return Errc::kIo;
}

double hard_loss_on(const TinyViT<float>& m, const LabeledImages& data) {
  const std::vector<std::size_t> idx{0};
  const Mat<double> z = m.logits(make_batch(data, idx)).cast<double>();
  return hard_loss(std::span<const double>(z.data(), z.cols()), data.labels[0], {});
}

TEST(TrainSupervised, OneEpochReducesLossOnSingleSample) {
  const ViTConfig cfg = small_config();
  LabeledImages one = random_set(cfg, 1, 4);
  one.images.resize(1);
  one.labels.resize(1);
  TinyViT<float> model(cfg);
  const double before = hard_loss_on(model, one);
  train_supervised(model, one, quiet(1, 1e-3));
  EXPECT_LT(hard_loss_on(model, one), before);
}

TEST(TrainSupervised, RejectsZeroEpochs) {
  TinyViT<float> model(small_config());
  const auto data = random_set(model.config(), 1, 4);
  EXPECT_EQ(code_of([&] { train_supervised(model, data, quiet(0, 1e-3)); }), Errc::kConfig);
}

TEST(TrainSupervised, SameSeedSameResult) {
  const auto data = random_set(small_config(), 2, 5);
  TrainConfig tc = quiet(2, 1e-3);
  tc.random_crop = tc.horizontal_flip = true;
  TinyViT<float> a(small_config());
  TinyViT<float> b(small_config());
  train_supervised(a, data, tc);
  train_supervised(b, data, tc);
  EXPECT_EQ(parameter_hash(a), parameter_hash(b));
  EXPECT_EQ(evaluate(a, data), evaluate(b, data));
}

TEST(TrainSupervised, RecordsOneBreakdownPerBatch) {
  TinyViT<float> model(small_config());
  const auto data = random_set(model.config(), 3, 5);  // 12 images, batch 8
  const RunResult r = train_supervised(model, data, quiet(3, 1e-3));
  ASSERT_EQ(r.epochs.size(), 3u);
  for (const auto& e : r.epochs) EXPECT_EQ(e.batches.size(), 2u);
  EXPECT_EQ(r.epochs[2].epoch, 3);
}

TEST(Evaluate, ConstantPredictorScoresOneOverC) {
  TinyViT<float> model(small_config());
  model.params().head.weight.setZero();
  model.params().head.bias.setZero();
  model.params().head.bias(0, 2) = 5.0f;
  const auto data = random_set(model.config(), 3, 6);
  EXPECT_DOUBLE_EQ(evaluate(model, data), 0.25);
  EXPECT_EQ(evaluate(model, data), evaluate(model, data));
}

TEST(Evaluate, MemorizesSmallTrainingSet) {
  TinyViT<float> model(small_config());
  const auto data = random_set(model.config(), 2, 7);
  train_supervised(model, data, quiet(120, 2e-3));
  EXPECT_GE(evaluate(model, data), 0.99);
}

TEST(Augment, FlipIsAnInvolution) {
  const auto data = random_set(small_config(), 1, 8);
  const std::vector<std::size_t> idx{0, 1};
  const ImageBatch original = make_batch(data, idx);
  ImageBatch b = original;
  flip_horizontal(b.image(0), b.channels, b.size);
  EXPECT_NE(b.pixels, original.pixels);
  flip_horizontal(b.image(0), b.channels, b.size);
  EXPECT_EQ(b.pixels, original.pixels);
}

TEST(Augment, DisabledIsIdentity) {
  const auto data = random_set(small_config(), 1, 8);
  const std::vector<std::size_t> idx{0, 1, 2};
  const ImageBatch batch = make_batch(data, idx);
  Rng rng(1);
  const ImageBatch out = augment(batch, quiet(1, 1e-3), 4, rng);
  EXPECT_EQ(out.pixels, batch.pixels);
  EXPECT_EQ(out.labels, batch.labels);
}

TEST(Augment, FixedSeedIsReproducible) {
  const auto data = random_set(small_config(), 1, 8);
  const std::vector<std::size_t> idx{0, 1, 2, 3};
  const ImageBatch batch = make_batch(data, idx);
  TrainConfig tc = quiet(1, 1e-3);
  tc.random_crop = tc.horizontal_flip = true;
  Rng r1(42), r2(42);
  EXPECT_EQ(augment(batch, tc, 4, r1).pixels, augment(batch, tc, 4, r2).pixels);
}

TEST(Augment, CenteredCropIsIdentityAndEdgesReplicate) {
  Image img(1, 4, 4);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) img.at(0, y, x) = static_cast<float>(10 * y + x);
  }
  std::vector<float> px = img.data;
  crop_padded(px, 1, 4, 2, 2, 2);
  EXPECT_EQ(px, img.data);
  crop_padded(px, 1, 4, 2, 0, 0);  // shift by two: top-left 2x2 replicates pixel (0, 0)
  EXPECT_EQ(px[0], 0.0f);
  EXPECT_EQ(px[1 * 4 + 1], 0.0f);
  EXPECT_EQ(px[3 * 4 + 3], 11.0f);
  EXPECT_EQ(code_of([&] { crop_padded(px, 1, 4, 2, 5, 0); }), Errc::kInput);
}

class AdaptTest : public ::testing::Test {
 protected:
  void SetUp() override {
    cfg_ = small_config(5);
    student_ = std::make_unique<TinyViT<float>>(cfg_);
    const auto source = random_set(cfg_, 2, 11, "src");
    train_supervised(*student_, source, quiet(5, 1e-3));
    target_ = random_set(cfg_, 2, 12, "tgt");
  }

  ViTConfig cfg_;
  std::unique_ptr<TinyViT<float>> student_;
  LabeledImages target_;
};

TEST_F(AdaptTest, NoneTotalIsHardLoss) {
  TinyViT<float> s = *student_;
  DistillConfig dc;
  dc.strategy = Strategy::kNone;
  dc.total_epochs = 2;
  const RunResult r = adapt(s, static_cast<const Teacher<float>*>(nullptr), target_, dc, quiet(2, 1e-3));
  for (const auto& e : r.epochs) {
    for (const auto& b : e.batches) {
      EXPECT_EQ(b.total, b.hard);
      EXPECT_EQ(b.soft, 0.0);
    }
  }
  EXPECT_EQ(r.strategy, "none");
}

TEST_F(AdaptTest, Method1FinalEpochEqualsHinton) {
  const auto teacher = snapshot_prior_copy(*student_);
  const std::vector<std::size_t> idx{0, 1, 2, 3, 4};
  const ImageBatch batch = make_batch(target_, idx);
  DistillConfig dc;
  dc.total_epochs = 7;
  const auto targets = teacher_targets(teacher, batch, dc.temperature, false);
  TinyViT<float> s = *student_;
  testing::jitter(s, 0.01, 9);
  const auto m1 = distillation_objective(s, batch, &targets, Strategy::kMethod1, dc, 7,
                                         static_cast<VitParameters<float>*>(nullptr));
  const auto hi = distillation_objective(s, batch, &targets, Strategy::kHinton, dc, 7,
                                         static_cast<VitParameters<float>*>(nullptr));
  EXPECT_EQ(m1.total, hi.total);
  const auto early = distillation_objective(s, batch, &targets, Strategy::kMethod1, dc, 1,
                                            static_cast<VitParameters<float>*>(nullptr));
  EXPECT_GT(early.total, hi.total);
}

TEST_F(AdaptTest, Method2CosineIsZeroOnFirstBatch) {
  TinyViT<float> s = *student_;
  const auto teacher = snapshot_prior_copy(*student_);
  DistillConfig dc;
  dc.strategy = Strategy::kMethod2;
  dc.total_epochs = 2;
  const RunResult r = adapt(s, &teacher, target_, dc, quiet(2, 1e-3));
  ASSERT_FALSE(r.epochs.empty());
  EXPECT_NEAR(r.epochs[0].batches[0].cosine, 0.0, 1e-12);
  EXPECT_GT(r.epochs[1].batches.back().cosine, 0.0);
  EXPECT_EQ(r.teacher, "prior_copy");
}

TEST_F(AdaptTest, RejectsInvalidCombinations) {
  TinyViT<float> s = *student_;
  DistillConfig dc;
  dc.total_epochs = 2;
  dc.strategy = Strategy::kMethod1;
  const TrainConfig tc = quiet(2, 1e-3);
  EXPECT_EQ(code_of([&] { adapt(s, static_cast<const Teacher<float>*>(nullptr), target_, dc, tc); }), Errc::kConfig);

  const auto ensemble = Teacher<float>::ensemble({*student_, TinyViT<float>(small_config(99))});
  dc.strategy = Strategy::kMethod2;
  EXPECT_EQ(code_of([&] { adapt(s, &ensemble, target_, dc, tc); }), Errc::kUnsupported);

  dc.strategy = Strategy::kHinton;
  dc.total_epochs = 3;
  const auto prior = snapshot_prior_copy(*student_);
  EXPECT_EQ(code_of([&] { adapt(s, &prior, target_, dc, tc); }), Errc::kConfig);
}

TEST_F(AdaptTest, AuditSeesOnlyTargetReads) {
  TinyViT<float> s = *student_;
  const auto teacher = snapshot_prior_copy(*student_);
  DistillConfig dc;
  dc.strategy = Strategy::kHinton;
  dc.total_epochs = 2;
  DataAudit audit;
  adapt(s, &teacher, target_, dc, quiet(2, 1e-3), &audit);
  EXPECT_EQ(audit.records_read("adapt", "src"), 0u);
  EXPECT_EQ(audit.records_read("adapt", "tgt"), 2 * target_.size());
}

TEST_F(AdaptTest, DistillationGradientMatchesFiniteDifferences) {
  const TinyViT<double> base = student_->cast<double>();
  const auto teacher = snapshot_prior_copy(base);
  const std::vector<std::size_t> idx{0, 1, 2};
  const ImageBatch batch = make_batch(target_, idx);
  DistillConfig dc;
  dc.total_epochs = 5;
  const auto targets = teacher_targets(teacher, batch, dc.temperature, true);
  TinyViT<double> s = base;
  testing::jitter(s, 0.02, 4);
  auto grads = s.params().zeros_like();
  distillation_objective(s, batch, &targets, Strategy::kMethod2, dc, 2, &grads);

  VitParameters<double> p = s.params();
  auto pt = p.tensors();
  const auto gt = std::as_const(grads).tensors();
  Rng pick(5);
  for (std::size_t k = 0; k < pt.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(pick.below(static_cast<std::uint64_t>(pt[k].value->size())));
    double& x = pt[k].value->data()[i];
    const double x0 = x;
    const auto total = [&] {
      const TinyViT<double> m(s.config(), p);
      return distillation_objective(m, batch, &targets, Strategy::kMethod2, dc, 2,
                                    static_cast<VitParameters<double>*>(nullptr))
          .total;
    };
    x = x0 + 1e-5;
    const double up = total();
    x = x0 - 1e-5;
    const double down = total();
    x = x0;
    const double fd = (up - down) / 2e-5;
    EXPECT_LT(std::abs(fd - gt[k].value->data()[i]), 1e-6 + 1e-4 * std::abs(fd)) << pt[k].name;
  }
}

}  // namespace
}  // namespace kdvit
