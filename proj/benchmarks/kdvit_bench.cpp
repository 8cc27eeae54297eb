// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "kdvit/explain.hpp"
#include "kdvit/losses.hpp"
#include "kdvit/rng.hpp"
#include "kdvit/teachers.hpp"
#include "kdvit/trainer.hpp"
#include "kdvit/vit.hpp"

namespace kdvit {
namespace {

ViTConfig desk_config() {
  ViTConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.hidden_size = 32;
  c.intermediate_size = 64;
  c.num_layers = 2;
  c.num_heads = 4;
  c.num_classes = 10;
  c.seed = 1;
  return c;
}

ImageBatch random_batch(const ViTConfig& cfg, int n, std::uint64_t seed) {
  Rng rng(seed);
  ImageBatch b;
  b.channels = cfg.channels;
  b.size = cfg.image_size;
  for (int i = 0; i < n; ++i) {
    Image img(cfg.channels, cfg.image_size, cfg.image_size);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    b.push_back(img, i % cfg.num_classes);
  }
  return b;
}

void BM_Forward(benchmark::State& state) {
  const TinyViT<float> model(desk_config());
  const ImageBatch batch = random_batch(model.config(), static_cast<int>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(model.logits(batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(16)->Arg(64);

void BM_Method2Step(benchmark::State& state) {
  TinyViT<float> model(desk_config());
  // A trained-looking student: the fresh LayerNorm bias is all zero.
  for (auto& t : model.params().tensors()) t.value->array() += 0.01f;
  const auto teacher = snapshot_prior_copy(model);
  const ImageBatch batch = random_batch(model.config(), static_cast<int>(state.range(0)), 3);
  DistillConfig dc;
  dc.total_epochs = 10;
  const auto targets = teacher_targets(teacher, batch, dc.temperature, true);
  auto grads = model.params().zeros_like();
  for (auto _ : state) {
    for (auto& t : grads.tensors()) t.value->setZero();
    benchmark::DoNotOptimize(
        distillation_objective(model, batch, &targets, Strategy::kMethod2, dc, 3, &grads).total);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Method2Step)->Arg(16);

void BM_BatchSoftLoss(benchmark::State& state) {
  Rng rng(4);
  const auto n = state.range(0);
  Mat<double> z(n, 10), t(n, 10);
  for (Eigen::Index i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.normal();
  const Mat<double> probs = tempered_softmax_rows(t, 2.0);
  Mat<double> grad;
  for (auto _ : state) benchmark::DoNotOptimize(batch_soft_loss(probs, z, 2.0, &grad));
}
BENCHMARK(BM_BatchSoftLoss)->Arg(32)->Arg(256);

void BM_Nmf(benchmark::State& state) {
  Rng rng(5);
  Mat<double> a(state.range(0), 32);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.uniform();
  for (auto _ : state) benchmark::DoNotOptimize(nmf(a, 4, 200, 0.0).relative_error);
}
BENCHMARK(BM_Nmf)->Arg(32)->Arg(256);

void BM_GradCam(benchmark::State& state) {
  const TinyViT<float> model(desk_config());
  const ImageBatch batch = random_batch(model.config(), 1, 6);
  Image img(batch.channels, batch.size, batch.size);
  std::copy(batch.pixels.begin(), batch.pixels.end(), img.data.begin());
  const Site site = Site::penultimate_linear(model.config());
  for (auto _ : state) benchmark::DoNotOptimize(grad_cam(model, img, 0, site).raw_max);
}
BENCHMARK(BM_GradCam);

}  // namespace
}  // namespace kdvit

BENCHMARK_MAIN();
