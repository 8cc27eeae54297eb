// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdvit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "kdvit/error.hpp"

namespace kdvit {

namespace {

constexpr std::string_view kAdaptPhase = "adapt";

LossBreakdown mean_of(const std::vector<LossBreakdown>& items) {
  LossBreakdown m;
  m.schedule_weight = 0.0;
  for (const auto& b : items) {
    m.soft += b.soft;
    m.hard += b.hard;
    m.cosine += b.cosine;
    m.schedule_weight += b.schedule_weight;
    m.total += b.total;
  }
  const double n = static_cast<double>(std::max<std::size_t>(items.size(), 1));
  m.soft /= n;
  m.hard /= n;
  m.cosine /= n;
  m.schedule_weight /= n;
  m.total /= n;
  return m;
}

bool distills(Strategy s) { return s != Strategy::kNone; }

template <typename Scalar>
RunResult run_epochs(TinyViT<Scalar>& model, const Teacher<Scalar>* teacher, const LabeledImages& data,
                     const DistillConfig& distill, const TrainConfig& config, DataAudit* audit,
                     std::string_view phase) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  require(!data.empty(), Errc::kInput, "empty dataset");
  const ViTConfig& mc = model.config();
  require(data.image_size == mc.image_size && data.channels == mc.channels, Errc::kInput,
          "dataset geometry does not match the model");
  for (int label : data.labels) {
    require(label >= 0 && label < mc.num_classes, Errc::kInput, "dataset label out of range");
  }

  RunResult result;
  result.strategy = std::string(to_string(distill.strategy));
  result.seed = config.seed;
  if (teacher != nullptr && distills(distill.strategy)) {
    result.teacher = std::string(to_string(teacher->kind()));
  }

  VitParameters<Scalar> grads = model.params().zeros_like();
  Adam<Scalar> optimizer(model.params(), config);
  const bool want_internals = distill.strategy == Strategy::kMethod2;

  std::vector<std::size_t> order(data.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);

    EpochRecord record;
    record.epoch = epoch;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      if (audit != nullptr) audit->record(std::string(phase), data.domain, data.origin, idx.size());
      const ImageBatch batch = augment(make_batch(data, idx), config, mc.patch_size, rng);

      std::optional<TeacherTargets> targets;
      if (distills(distill.strategy)) {
        targets = teacher_targets(*teacher, batch, distill.temperature, want_internals);
      }
      grads.set_zero();
      const LossBreakdown loss = distillation_objective(model, batch, targets ? &*targets : nullptr,
                                                        distill.strategy, distill, epoch, &grads);
      optimizer.step(model.params(), grads);
      record.batches.push_back(loss);
    }
    record.mean = mean_of(record.batches);
    result.epochs.push_back(std::move(record));
  }
  result.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  require(epochs >= 1, Errc::kConfig, "epochs must be >= 1");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), Errc::kConfig, "learning_rate must be > 0");
  require(batch_size >= 1, Errc::kConfig, "batch_size must be >= 1");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && epsilon > 0.0, Errc::kConfig,
          "invalid Adam hyper-parameters");
}

template <typename Scalar>
Adam<Scalar>::Adam(const VitParameters<Scalar>& like, const TrainConfig& config)
    : m_(like.zeros_like()),
      v_(like.zeros_like()),
      lr_(config.learning_rate),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.epsilon) {}

template <typename Scalar>
void Adam<Scalar>::step(VitParameters<Scalar>& params, const VitParameters<Scalar>& grads) {
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, step_);
  const double c2 = 1.0 - std::pow(beta2_, step_);
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = m_.tensors();
  auto v = v_.tensors();
  const auto b1 = static_cast<Scalar>(beta1_);
  const auto b2 = static_cast<Scalar>(beta2_);
  const auto step_size = static_cast<Scalar>(lr_ / c1);
  const auto inv_c2 = static_cast<Scalar>(1.0 / c2);
  const auto eps = static_cast<Scalar>(eps_);
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto gi = g[i].value->array();
    m[i].value->array() = b1 * m[i].value->array() + (Scalar(1) - b1) * gi;
    v[i].value->array() = b2 * v[i].value->array() + (Scalar(1) - b2) * gi.square();
    p[i].value->array() -=
        step_size * m[i].value->array() / ((v[i].value->array() * inv_c2).sqrt() + eps);
  }
}

void flip_horizontal(std::span<float> image, int channels, int size) {
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < size; ++y) {
      float* row = image.data() + (static_cast<std::size_t>(c) * size + y) * size;
      std::reverse(row, row + size);
    }
  }
}

void crop_padded(std::span<float> image, int channels, int size, int pad, int offset_y, int offset_x) {
  require(offset_y >= 0 && offset_y <= 2 * pad && offset_x >= 0 && offset_x <= 2 * pad, Errc::kInput,
          "crop offset outside the padded frame");
  const std::vector<float> src(image.begin(), image.end());
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < size; ++y) {
      const int sy = std::clamp(y + offset_y - pad, 0, size - 1);
      for (int x = 0; x < size; ++x) {
        const int sx = std::clamp(x + offset_x - pad, 0, size - 1);
        image[(static_cast<std::size_t>(c) * size + y) * size + x] =
            src[(static_cast<std::size_t>(c) * size + sy) * size + sx];
      }
    }
  }
}

ImageBatch augment(const ImageBatch& batch, const TrainConfig& config, int patch_size, Rng& rng) {
  ImageBatch out = batch;
  const int pad = patch_size / 2;
  for (int i = 0; i < out.batch_size(); ++i) {
    auto img = out.image(i);
    if (config.random_crop && pad > 0) {
      const int oy = static_cast<int>(rng.below(2 * pad + 1));
      const int ox = static_cast<int>(rng.below(2 * pad + 1));
      crop_padded(img, out.channels, out.size, pad, oy, ox);
    }
    if (config.horizontal_flip && rng.bernoulli(0.5)) flip_horizontal(img, out.channels, out.size);
  }
  return out;
}

ImageBatch make_batch(const LabeledImages& data, std::span<const std::size_t> indices) {
  ImageBatch batch;
  batch.channels = data.channels;
  batch.size = data.image_size;
  batch.pixels.reserve(indices.size() * batch.image_stride());
  for (std::size_t i : indices) batch.push_back(data.images.at(i), data.labels.at(i));
  return batch;
}

template <typename Scalar>
LossBreakdown distillation_objective(const TinyViT<Scalar>& student, const ImageBatch& batch,
                                     const TeacherTargets* targets, Strategy strategy,
                                     const DistillConfig& config, int epoch,
                                     VitParameters<Scalar>* grads, Mat<double>* dlogits) {
  const bool want_grad = grads != nullptr || dlogits != nullptr;
  if (distills(strategy)) {
    require(targets != nullptr, Errc::kConfig, "a distilling strategy needs teacher targets");
  }
  if (strategy == Strategy::kMethod2) {
    require(targets->internals.has_value(), Errc::kUnsupported, "method2 needs teacher internals");
  }

  const auto forward = student.forward(batch, {}, grads != nullptr);
  const Mat<double> logits = forward.logits.template cast<double>();
  const double t = config.temperature;

  Mat<double> d_hard;
  const double hard = batch_hard_loss(logits, batch.labels, config, want_grad ? &d_hard : nullptr);
  double soft = 0.0;
  Mat<double> d_soft;
  if (distills(strategy)) soft = batch_soft_loss(targets->soft, logits, t, want_grad ? &d_soft : nullptr);
  double cosine = 0.0;
  InternalEmbedding d_cos;
  if (strategy == Strategy::kMethod2) {
    const InternalEmbedding ws = stack_internals(student.internal_parameters());
    cosine = cosine_embedding_loss_grad(ws, *targets->internals, config.cosine_target,
                                        want_grad ? &d_cos : nullptr);
  }

  const LossBreakdown out = combine_losses(strategy, soft, hard, cosine, t, epoch, config.total_epochs);
  if (!want_grad) return out;

  Mat<double> dz = d_hard;
  const double schedule = out.schedule_weight;
  if (distills(strategy)) dz += schedule * t * t * d_soft;
  if (dlogits != nullptr) *dlogits = dz;
  if (grads != nullptr) {
    student.backward(forward, dz.cast<Scalar>(), grads);
    if (strategy == Strategy::kMethod2) {
      accumulate_stack_gradient<Scalar>(schedule * d_cos, student.config(), *grads);
    }
  }
  return out;
}

template <typename Scalar>
RunResult train_supervised(TinyViT<Scalar>& model, const LabeledImages& data,
                           const TrainConfig& config) {
  DistillConfig hard_only;
  hard_only.strategy = Strategy::kNone;
  hard_only.total_epochs = config.epochs;
  return run_epochs<Scalar>(model, nullptr, data, hard_only, config, nullptr, "train");
}

template <typename Scalar>
RunResult adapt(TinyViT<Scalar>& student, const Teacher<Scalar>* teacher, const LabeledImages& target,
                const DistillConfig& distill, const TrainConfig& config, DataAudit* audit) {
  distill.validate(student.config().num_classes);
  require(distill.total_epochs == config.epochs, Errc::kConfig,
          "distill total_epochs must equal the adaptation epoch count");
  if (distills(distill.strategy)) {
    require(teacher != nullptr, Errc::kConfig,
            "strategy " + std::string(to_string(distill.strategy)) + " requires a teacher");
    require(teacher->num_classes() == student.config().num_classes, Errc::kConfig,
            "teacher and student disagree on num_classes");
    require(!(distill.strategy == Strategy::kMethod2 && teacher->kind() == TeacherKind::kEnsemble),
            Errc::kUnsupported, "method2 cannot use an ensemble teacher");
  }
  return run_epochs(student, teacher, target, distill, config, audit, kAdaptPhase);
}

template <typename Scalar>
std::vector<int> predict(const TinyViT<Scalar>& model, const LabeledImages& data) {
  require(!data.empty(), Errc::kInput, "empty dataset");
  constexpr std::size_t kChunk = 64;
  std::vector<int> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < data.size(); begin += kChunk) {
    idx.clear();
    for (std::size_t i = begin; i < std::min(data.size(), begin + kChunk); ++i) idx.push_back(i);
    const Mat<Scalar> logits = model.logits(make_batch(data, idx));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index arg = 0;
      logits.row(r).maxCoeff(&arg);
      out.push_back(static_cast<int>(arg));
    }
  }
  return out;
}

template <typename Scalar>
double evaluate(const TinyViT<Scalar>& model, const LabeledImages& data) {
  const auto pred = predict(model, data);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

template class Adam<float>;
template class Adam<double>;
template LossBreakdown distillation_objective(const TinyViT<float>&, const ImageBatch&, const TeacherTargets*,
                                              Strategy, const DistillConfig&, int, VitParameters<float>*,
                                              Mat<double>*);
template LossBreakdown distillation_objective(const TinyViT<double>&, const ImageBatch&,
                                              const TeacherTargets*, Strategy, const DistillConfig&, int,
                                              VitParameters<double>*, Mat<double>*);
template RunResult train_supervised(TinyViT<float>&, const LabeledImages&, const TrainConfig&);
template RunResult train_supervised(TinyViT<double>&, const LabeledImages&, const TrainConfig&);
template RunResult adapt(TinyViT<float>&, const Teacher<float>*, const LabeledImages&, const DistillConfig&,
                         const TrainConfig&, DataAudit*);
template RunResult adapt(TinyViT<double>&, const Teacher<double>*, const LabeledImages&,
                         const DistillConfig&, const TrainConfig&, DataAudit*);
template double evaluate(const TinyViT<float>&, const LabeledImages&);
template double evaluate(const TinyViT<double>&, const LabeledImages&);
template std::vector<int> predict(const TinyViT<float>&, const LabeledImages&);
template std::vector<int> predict(const TinyViT<double>&, const LabeledImages&);

}  // namespace kdvit
