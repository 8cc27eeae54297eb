// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Distillation losses. Everything here is a pure function over doubles; the
// batch variants use mean reduction over samples.

#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdvit/vit.hpp"

namespace kdvit {

using ProbVector = std::vector<double>;

/// 4 x H matrix with rows [b_n, w_n, b_o, mean of W_o^T over its I rows].
using InternalEmbedding = Mat<double>;

enum class Strategy { kNone, kHinton, kMethod1, kMethod2 };
enum class TeacherKind { kPriorCopy, kEnsemble };

std::string_view to_string(Strategy s);
std::string_view to_string(TeacherKind k);
Strategy parse_strategy(std::string_view text);
TeacherKind parse_teacher_kind(std::string_view text);

struct DistillConfig {
  double temperature = 2.0;
  int total_epochs = 50;
  Strategy strategy = Strategy::kNone;
  TeacherKind teacher_kind = TeacherKind::kPriorCopy;
  std::vector<double> class_weights;  // empty means all ones
  int cosine_target = 1;

  /// Weight of class g (1 when class_weights is empty).
  double class_weight(int g) const;
  void validate(int num_classes) const;
};

struct LossBreakdown {
  double soft = 0.0;    // L_s
  double hard = 0.0;    // L_h
  double cosine = 0.0;  // L_c (0 when unused)
  double schedule_weight = 1.0;
  double total = 0.0;
};

ProbVector tempered_softmax(std::span<const double> logits, double temperature);

/// Cross-entropy -sum_i teacher_i * log(max(student_i, 1e-12)).
double soft_loss(std::span<const double> teacher_probs, std::span<const double> student_probs);

/// -w_g * log softmax(z)_g.
double hard_loss(std::span<const double> logits, int label, std::span<const double> class_weights);

/// sqrt(E / e) for 1 <= e <= E.
double schedule_weight(int epoch, int total_epochs);

template <typename Scalar>
InternalEmbedding stack_internals(const InternalParameters<Scalar>& p);

/// Row-wise cosine similarity over the 4 row pairs, mean-reduced:
/// target +1 -> mean(1 - cos), target -1 -> mean(max(0, cos)).
double cosine_embedding_loss(const InternalEmbedding& student, const InternalEmbedding& teacher,
                             int target = 1);

double hinton_total(double soft, double hard, double temperature);
double method1_total(double soft, double hard, double temperature, int epoch, int total_epochs);
double method2_total(double soft, double cosine, double hard, double temperature, int epoch,
                     int total_epochs);

/// Applies the combiner selected by `strategy` and records the breakdown.
LossBreakdown combine_losses(Strategy strategy, double soft, double hard, double cosine,
                             double temperature, int epoch, int total_epochs);

// ---------------------------------------------------------------------------
// Batched forms with analytic gradients (used by the trainer).

/// Mean over rows of tempered_softmax; rows are samples.
Mat<double> tempered_softmax_rows(const Mat<double>& logits, double temperature);

/// Mean soft loss between teacher probabilities and the student's tempered
/// softmax. When grad is non-null it receives dL/d(student logits).
double batch_soft_loss(const Mat<double>& teacher_probs, const Mat<double>& student_logits,
                       double temperature, Mat<double>* grad);

/// Mean weighted hard loss. When grad is non-null it receives dL/dlogits.
double batch_hard_loss(const Mat<double>& logits, std::span<const int> labels,
                       const DistillConfig& config, Mat<double>* grad);

/// Cosine embedding loss plus dL/d(student embedding).
double cosine_embedding_loss_grad(const InternalEmbedding& student, const InternalEmbedding& teacher,
                                  int target, InternalEmbedding* grad);

/// Adds the gradient of a scalar w.r.t. the stacked embedding back onto the
/// four parameter groups it was built from.
template <typename Scalar>
void accumulate_stack_gradient(const InternalEmbedding& grad_embedding, const ViTConfig& config,
                               VitParameters<Scalar>& grads);

}  // namespace kdvit
