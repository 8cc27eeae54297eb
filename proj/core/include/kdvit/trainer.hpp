// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kdvit/datasets.hpp"
#include "kdvit/losses.hpp"
#include "kdvit/rng.hpp"
#include "kdvit/teachers.hpp"
#include "kdvit/vit.hpp"

namespace kdvit {

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 2e-5;
  int batch_size = 32;
  bool random_crop = true;
  bool horizontal_flip = true;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;                       // 1-based
  LossBreakdown mean;                  // component-wise mean over batches
  std::vector<LossBreakdown> batches;  // one per optimizer step
};

struct RunResult {
  std::string strategy;
  std::string teacher;  // empty when no teacher
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  std::optional<double> source_before;
  std::optional<double> target_before;
  std::optional<double> source_after;
  std::optional<double> target_after;
  double wall_clock_seconds = 0.0;
};

/// Adam with bias correction; state lives alongside the parameter layout.
template <typename Scalar>
class Adam {
 public:
  Adam(const VitParameters<Scalar>& like, const TrainConfig& config);

  void step(VitParameters<Scalar>& params, const VitParameters<Scalar>& grads);
  int steps() const { return step_; }

 private:
  VitParameters<Scalar> m_;
  VitParameters<Scalar> v_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  int step_ = 0;
};

void flip_horizontal(std::span<float> image, int channels, int size);

/// Pads by `pad` pixels with edge replication, then crops size x size at
/// (offset_y, offset_x) in the padded frame, 0 <= offset <= 2 * pad.
void crop_padded(std::span<float> image, int channels, int size, int pad, int offset_y, int offset_x);

/// Random crop (pad patch_size / 2, edge replication) and per-sample
/// horizontal flip with probability 0.5, drawn from rng in sample order.
ImageBatch augment(const ImageBatch& batch, const TrainConfig& config, int patch_size, Rng& rng);

/// Packs the given indices of a labelled set into one batch.
ImageBatch make_batch(const LabeledImages& data, std::span<const std::size_t> indices);

/// Loss for one batch under `strategy`, with its gradient accumulated into
/// *grads when non-null. `targets` must hold soft targets for every
/// distilling strategy, plus internals for method2. When dlogits is
/// non-null it receives d(total)/d(logits).
template <typename Scalar>
LossBreakdown distillation_objective(const TinyViT<Scalar>& student, const ImageBatch& batch,
                                     const TeacherTargets* targets, Strategy strategy,
                                     const DistillConfig& config, int epoch,
                                     VitParameters<Scalar>* grads, Mat<double>* dlogits = nullptr);

/// Plain supervised fine-tuning on hard labels.
template <typename Scalar>
RunResult train_supervised(TinyViT<Scalar>& model, const LabeledImages& data,
                           const TrainConfig& config);

/// Source-free adaptation on target data only. Each batch performs exactly
/// one optimizer step on the strategy's total loss; epoch e (1-based) feeds
/// the schedule weight. Every dataset read is written to *audit.
template <typename Scalar>
RunResult adapt(TinyViT<Scalar>& student, const Teacher<Scalar>* teacher, const LabeledImages& target,
                const DistillConfig& distill, const TrainConfig& config, DataAudit* audit = nullptr);

/// Top-1 accuracy without augmentation.
template <typename Scalar>
double evaluate(const TinyViT<Scalar>& model, const LabeledImages& data);

/// Predicted class per image.
template <typename Scalar>
std::vector<int> predict(const TinyViT<Scalar>& model, const LabeledImages& data);

}  // namespace kdvit
