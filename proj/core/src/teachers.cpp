// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdvit/teachers.hpp"

#include "kdvit/error.hpp"

namespace kdvit {

template <typename Scalar>
Teacher<Scalar>::Teacher(TeacherKind kind, std::vector<std::shared_ptr<const TinyViT<Scalar>>> members)
    : kind_(kind), members_(std::move(members)) {}

template <typename Scalar>
Teacher<Scalar> Teacher<Scalar>::prior_copy(const TinyViT<Scalar>& student) {
  return Teacher(TeacherKind::kPriorCopy, {std::make_shared<const TinyViT<Scalar>>(student)});
}

template <typename Scalar>
Teacher<Scalar> Teacher<Scalar>::ensemble(std::vector<TinyViT<Scalar>> members) {
  require(members.size() >= 2, Errc::kConfig, "an ensemble teacher needs at least two members");
  const ViTConfig& first = members.front().config();
  std::vector<std::shared_ptr<const TinyViT<Scalar>>> frozen;
  for (auto& m : members) {
    const ViTConfig& c = m.config();
    require(c.num_classes == first.num_classes, Errc::kConfig,
            "ensemble members disagree on num_classes");
    require(c.image_size == first.image_size && c.channels == first.channels, Errc::kConfig,
            "ensemble members disagree on input geometry");
    frozen.push_back(std::make_shared<const TinyViT<Scalar>>(std::move(m)));
  }
  return Teacher(TeacherKind::kEnsemble, std::move(frozen));
}

template <typename Scalar>
Teacher<Scalar> Teacher<Scalar>::load_prior_copy(const std::filesystem::path& checkpoint) {
  return prior_copy(load_checkpoint<Scalar>(checkpoint));
}

template <typename Scalar>
Teacher<Scalar> Teacher<Scalar>::load_ensemble(std::span<const std::filesystem::path> checkpoints) {
  std::vector<TinyViT<Scalar>> members;
  for (const auto& p : checkpoints) members.push_back(load_checkpoint<Scalar>(p));
  return ensemble(std::move(members));
}

template <typename Scalar>
std::uint64_t Teacher<Scalar>::checksum() const {
  std::uint64_t h = 0;
  for (const auto& m : members_) h = h * 0x100000001b3ULL ^ parameter_hash(*m);
  return h;
}

template <typename Scalar>
Mat<double> ensemble_soft_probs(const Teacher<Scalar>& teacher, const ImageBatch& batch,
                                double temperature) {
  require(teacher.size() >= 1, Errc::kConfig, "teacher has no members");
  Mat<double> mean;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    const auto& member = teacher.member(i);
    require(member.config().num_classes == teacher.num_classes(), Errc::kConfig,
            "ensemble member class count mismatch");
    const Mat<double> logits = member.logits(batch).template cast<double>();
    const Mat<double> probs = tempered_softmax_rows(logits, temperature);
    if (i == 0) mean = probs;
    else mean += probs;
  }
  return mean / static_cast<double>(teacher.size());
}

template <typename Scalar>
TeacherTargets teacher_targets(const Teacher<Scalar>& teacher, const ImageBatch& batch,
                               double temperature, bool want_internals) {
  if (want_internals) {
    require(teacher.kind() == TeacherKind::kPriorCopy, Errc::kUnsupported,
            "an ensemble teacher has no single internal representation");
  }
  TeacherTargets out;
  out.soft = ensemble_soft_probs(teacher, batch, temperature);
  if (want_internals) out.internals = stack_internals(teacher.member(0).internal_parameters());
  return out;
}

template class Teacher<float>;
template class Teacher<double>;
template Mat<double> ensemble_soft_probs(const Teacher<float>&, const ImageBatch&, double);
template Mat<double> ensemble_soft_probs(const Teacher<double>&, const ImageBatch&, double);
template TeacherTargets teacher_targets(const Teacher<float>&, const ImageBatch&, double, bool);
template TeacherTargets teacher_targets(const Teacher<double>&, const ImageBatch&, double, bool);

}  // namespace kdvit
