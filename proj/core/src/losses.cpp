// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdvit/losses.hpp"

#include <algorithm>
#include <cmath>

#include "kdvit/error.hpp"

namespace kdvit {

namespace {

constexpr double kProbFloor = 1e-12;

void require_finite(double v, const char* what) {
  require(std::isfinite(v), Errc::kInput, std::string(what) + " is not finite");
}

void require_temperature(double t) {
  require(t > 0.0 && std::isfinite(t), Errc::kParameter, "temperature must be > 0");
}

}  // namespace

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::kNone: return "none";
    case Strategy::kHinton: return "hinton";
    case Strategy::kMethod1: return "method1";
    case Strategy::kMethod2: return "method2";
  }
  return "unknown";
}

std::string_view to_string(TeacherKind k) {
  return k == TeacherKind::kPriorCopy ? "prior_copy" : "ensemble";
}

Strategy parse_strategy(std::string_view text) {
  for (Strategy s : {Strategy::kNone, Strategy::kHinton, Strategy::kMethod1, Strategy::kMethod2}) {
    if (text == to_string(s)) return s;
  }
  fail(Errc::kConfig, "unknown strategy '" + std::string(text) + "'");
}

TeacherKind parse_teacher_kind(std::string_view text) {
  if (text == "prior_copy") return TeacherKind::kPriorCopy;
  if (text == "ensemble") return TeacherKind::kEnsemble;
  fail(Errc::kConfig, "unknown teacher kind '" + std::string(text) + "'");
}

double DistillConfig::class_weight(int g) const {
  return class_weights.empty() ? 1.0 : class_weights.at(static_cast<std::size_t>(g));
}

void DistillConfig::validate(int num_classes) const {
  require(temperature > 0.0 && std::isfinite(temperature), Errc::kConfig, "temperature must be > 0");
  require(total_epochs >= 1, Errc::kConfig, "total_epochs must be >= 1");
  require(cosine_target == 1 || cosine_target == -1, Errc::kConfig, "cosine target must be +1 or -1");
  if (!class_weights.empty()) {
    require(static_cast<int>(class_weights.size()) == num_classes, Errc::kConfig,
            "class_weights length does not match num_classes");
    for (double w : class_weights) {
      require(w > 0.0 && std::isfinite(w), Errc::kConfig, "class weights must be > 0");
    }
  }
  require(!(strategy == Strategy::kMethod2 && teacher_kind == TeacherKind::kEnsemble),
          Errc::kUnsupported, "method2 requires a prior_copy teacher; an ensemble has no internals");
}

ProbVector tempered_softmax(std::span<const double> logits, double temperature) {
  require_temperature(temperature);
  require(!logits.empty(), Errc::kInput, "empty logit vector");
  for (double z : logits) require_finite(z, "logit");
  const double mx = *std::max_element(logits.begin(), logits.end());
  ProbVector out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp((logits[i] - mx) / temperature);
    sum += out[i];
  }
  for (double& p : out) p /= sum;
  return out;
}

double soft_loss(std::span<const double> teacher_probs, std::span<const double> student_probs) {
  require(teacher_probs.size() == student_probs.size(), Errc::kInput,
          "teacher and student probability vectors differ in length");
  double loss = 0.0;
  for (std::size_t i = 0; i < teacher_probs.size(); ++i) {
    loss -= teacher_probs[i] * std::log(std::max(student_probs[i], kProbFloor));
  }
  return loss;
}

double hard_loss(std::span<const double> logits, int label, std::span<const double> class_weights) {
  require(label >= 0 && static_cast<std::size_t>(label) < logits.size(), Errc::kInput,
          "label " + std::to_string(label) + " out of range");
  const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(label)];
  require(w > 0.0, Errc::kParameter, "class weight must be > 0");
  for (double z : logits) require_finite(z, "logit");
  const auto top = std::max_element(logits.begin(), logits.end());
  const double mx = *top;
  // log-sum-exp as log1p over the non-maximal terms keeps tiny losses exact.
  double rest = 0.0;
  for (auto it = logits.begin(); it != logits.end(); ++it) {
    if (it != top) rest += std::exp(*it - mx);
  }
  return w * (std::log1p(rest) + (mx - logits[static_cast<std::size_t>(label)]));
}

double schedule_weight(int epoch, int total_epochs) {
  require(total_epochs >= 1 && epoch >= 1 && epoch <= total_epochs, Errc::kParameter,
          "epoch " + std::to_string(epoch) + " outside [1, " + std::to_string(total_epochs) + "]");
  return std::sqrt(static_cast<double>(total_epochs) / static_cast<double>(epoch));
}

template <typename Scalar>
InternalEmbedding stack_internals(const InternalParameters<Scalar>& p) {
  const Eigen::Index h = p.norm_bias.size();
  require(h > 0 && p.norm_weight.size() == h && p.linear_bias.size() == h &&
              p.linear_weight.rows() == h && p.linear_weight.cols() > 0,
          Errc::kInput, "internal parameter shapes are inconsistent");
  InternalEmbedding out(4, h);
  out.row(0) = p.norm_bias.template cast<double>();
  out.row(1) = p.norm_weight.template cast<double>();
  out.row(2) = p.linear_bias.template cast<double>();
  // W_o is H x I; its transpose is I x H and the mean over those I rows is
  // the per-hidden-channel row mean of W_o.
  out.row(3) = p.linear_weight.template cast<double>().rowwise().mean().transpose();
  return out;
}

double cosine_embedding_loss(const InternalEmbedding& student, const InternalEmbedding& teacher,
                             int target) {
  return cosine_embedding_loss_grad(student, teacher, target, nullptr);
}

double cosine_embedding_loss_grad(const InternalEmbedding& student, const InternalEmbedding& teacher,
                                  int target, InternalEmbedding* grad) {
  require(student.rows() == teacher.rows() && student.cols() == teacher.cols() && student.rows() > 0,
          Errc::kInput, "embedding shapes differ");
  require(target == 1 || target == -1, Errc::kParameter, "cosine target must be +1 or -1");
  const Eigen::Index rows = student.rows();
  if (grad != nullptr) grad->setZero(rows, student.cols());
  double loss = 0.0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const double na = student.row(r).norm();
    const double nb = teacher.row(r).norm();
    require(na > 0.0 && nb > 0.0, Errc::kDegenerate,
            "row " + std::to_string(r) + " of an internal embedding has zero norm");
    const double cos = std::clamp(student.row(r).dot(teacher.row(r)) / (na * nb), -1.0, 1.0);
    double dloss_dcos = 0.0;
    if (target == 1) {
      loss += 1.0 - cos;
      dloss_dcos = -1.0;
    } else if (cos > 0.0) {
      loss += cos;
      dloss_dcos = 1.0;
    }
    if (grad != nullptr && dloss_dcos != 0.0) {
      const auto dcos = teacher.row(r) / (na * nb) - cos * student.row(r) / (na * na);
      grad->row(r) = dloss_dcos * dcos / static_cast<double>(rows);
    }
  }
  return loss / static_cast<double>(rows);
}

double hinton_total(double soft, double hard, double temperature) {
  require_finite(soft, "soft loss");
  require_finite(hard, "hard loss");
  require_temperature(temperature);
  return temperature * temperature * soft + hard;
}

double method1_total(double soft, double hard, double temperature, int epoch, int total_epochs) {
  require_finite(soft, "soft loss");
  require_finite(hard, "hard loss");
  require_temperature(temperature);
  const double w = schedule_weight(epoch, total_epochs);
  return w * (temperature * temperature * soft) + hard;
}

double method2_total(double soft, double cosine, double hard, double temperature, int epoch,
                     int total_epochs) {
  require_finite(cosine, "cosine loss");
  require_finite(soft, "soft loss");
  require_finite(hard, "hard loss");
  require_temperature(temperature);
  const double w = schedule_weight(epoch, total_epochs);
  return w * (temperature * temperature * soft + cosine) + hard;
}

LossBreakdown combine_losses(Strategy strategy, double soft, double hard, double cosine,
                             double temperature, int epoch, int total_epochs) {
  LossBreakdown out;
  out.hard = hard;
  switch (strategy) {
    case Strategy::kNone:
      require_finite(hard, "hard loss");
      out.total = hard;
      break;
    case Strategy::kHinton:
      out.soft = soft;
      out.total = hinton_total(soft, hard, temperature);
      break;
    case Strategy::kMethod1:
      out.soft = soft;
      out.schedule_weight = schedule_weight(epoch, total_epochs);
      out.total = method1_total(soft, hard, temperature, epoch, total_epochs);
      break;
    case Strategy::kMethod2:
      out.soft = soft;
      out.cosine = cosine;
      out.schedule_weight = schedule_weight(epoch, total_epochs);
      out.total = method2_total(soft, cosine, hard, temperature, epoch, total_epochs);
      break;
  }
  return out;
}

Mat<double> tempered_softmax_rows(const Mat<double>& logits, double temperature) {
  Mat<double> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const auto p = tempered_softmax(std::span<const double>(logits.row(r).data(), logits.cols()),
                                    temperature);
    for (Eigen::Index c = 0; c < logits.cols(); ++c) out(r, c) = p[c];
  }
  return out;
}

double batch_soft_loss(const Mat<double>& teacher_probs, const Mat<double>& student_logits,
                       double temperature, Mat<double>* grad) {
  require(teacher_probs.rows() == student_logits.rows() && teacher_probs.cols() == student_logits.cols(),
          Errc::kInput, "teacher and student batches differ in shape");
  const Eigen::Index n = student_logits.rows();
  require(n > 0, Errc::kInput, "empty batch");
  const Mat<double> student = tempered_softmax_rows(student_logits, temperature);
  if (grad != nullptr) grad->setZero(n, student_logits.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    total += soft_loss(std::span<const double>(teacher_probs.row(r).data(), teacher_probs.cols()),
                       std::span<const double>(student.row(r).data(), student.cols()));
    if (grad != nullptr) {
      // d/dz_j = (y_j * sum_{i unclamped} t_i - t_j [y_j unclamped]) / T
      double active_mass = 0.0;
      for (Eigen::Index c = 0; c < student.cols(); ++c) {
        if (student(r, c) >= kProbFloor) active_mass += teacher_probs(r, c);
      }
      for (Eigen::Index c = 0; c < student.cols(); ++c) {
        const double t = student(r, c) >= kProbFloor ? teacher_probs(r, c) : 0.0;
        (*grad)(r, c) = (student(r, c) * active_mass - t) / (temperature * static_cast<double>(n));
      }
    }
  }
  return total / static_cast<double>(n);
}

double batch_hard_loss(const Mat<double>& logits, std::span<const int> labels,
                       const DistillConfig& config, Mat<double>* grad) {
  const Eigen::Index n = logits.rows();
  require(n > 0 && static_cast<std::size_t>(n) == labels.size(), Errc::kInput,
          "logit rows and labels differ in count");
  const std::span<const double> weights(config.class_weights);
  if (grad != nullptr) grad->setZero(n, logits.cols());
  double total = 0.0;
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::span<const double> z(logits.row(r).data(), logits.cols());
    const int g = labels[r];
    total += hard_loss(z, g, weights);
    if (grad != nullptr) {
      const auto p = tempered_softmax(z, 1.0);
      const double w = config.class_weight(g) / static_cast<double>(n);
      for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        (*grad)(r, c) = w * (p[c] - (c == g ? 1.0 : 0.0));
      }
    }
  }
  return total / static_cast<double>(n);
}

template <typename Scalar>
void accumulate_stack_gradient(const InternalEmbedding& g, const ViTConfig& config,
                               VitParameters<Scalar>& grads) {
  const int h = config.hidden_size;
  const int inter = config.intermediate_size;
  require(g.rows() == 4 && g.cols() == h, Errc::kInput, "embedding gradient must be 4 x H");
  auto& fc2 = grads.blocks[config.penultimate_layer()].fc2;
  grads.final_norm.bias.row(0) += g.row(0).cast<Scalar>();
  grads.final_norm.weight.row(0) += g.row(1).cast<Scalar>();
  fc2.bias.row(0) += g.row(2).cast<Scalar>();
  for (int r = 0; r < h; ++r) {
    fc2.weight.row(r).array() += static_cast<Scalar>(g(3, r) / inter);
  }
}

template InternalEmbedding stack_internals(const InternalParameters<float>&);
template InternalEmbedding stack_internals(const InternalParameters<double>&);
template void accumulate_stack_gradient(const InternalEmbedding&, const ViTConfig&,
                                        VitParameters<float>&);
template void accumulate_stack_gradient(const InternalEmbedding&, const ViTConfig&,
                                        VitParameters<double>&);

}  // namespace kdvit
