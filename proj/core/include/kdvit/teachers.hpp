// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "kdvit/losses.hpp"
#include "kdvit/vit.hpp"

namespace kdvit {

/// Soft targets for one batch, plus the teacher's stacked internals when
/// requested.
struct TeacherTargets {
  Mat<double> soft;  // batch x C, rows on the simplex
  std::optional<InternalEmbedding> internals;
};

/// A frozen teacher: either one snapshot of the student taken before
/// adaptation, or a soft-voting ensemble of N >= 2 independently trained
/// models. Members are immutable after construction.
template <typename Scalar>
class Teacher {
 public:
  static Teacher prior_copy(const TinyViT<Scalar>& student);
  static Teacher ensemble(std::vector<TinyViT<Scalar>> members);

  static Teacher load_prior_copy(const std::filesystem::path& checkpoint);
  static Teacher load_ensemble(std::span<const std::filesystem::path> checkpoints);

  TeacherKind kind() const { return kind_; }
  std::size_t size() const { return members_.size(); }
  const TinyViT<Scalar>& member(std::size_t i) const { return *members_.at(i); }
  int num_classes() const { return members_.front()->config().num_classes; }

  /// Combined parameter hash of every member.
  std::uint64_t checksum() const;

 private:
  Teacher(TeacherKind kind, std::vector<std::shared_ptr<const TinyViT<Scalar>>> members);

  TeacherKind kind_;
  std::vector<std::shared_ptr<const TinyViT<Scalar>>> members_;
};

/// Deep copy of the student wrapped as a prior-copy teacher.
template <typename Scalar>
Teacher<Scalar> snapshot_prior_copy(const TinyViT<Scalar>& student) {
  return Teacher<Scalar>::prior_copy(student);
}

/// Per-sample arithmetic mean over members of tempered_softmax(member logits, T).
template <typename Scalar>
Mat<double> ensemble_soft_probs(const Teacher<Scalar>& teacher, const ImageBatch& batch,
                                double temperature);

/// Soft targets at temperature T (no gradient tracking). With
/// want_internals the prior copy's stacked internals are returned too; an
/// ensemble cannot provide them.
template <typename Scalar>
TeacherTargets teacher_targets(const Teacher<Scalar>& teacher, const ImageBatch& batch,
                               double temperature, bool want_internals);

extern template class Teacher<float>;
extern template class Teacher<double>;

}  // namespace kdvit
