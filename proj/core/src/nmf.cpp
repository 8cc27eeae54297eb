// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>

#include "kdvit/error.hpp"
#include "kdvit/explain.hpp"
#include "kdvit/rng.hpp"

namespace kdvit {

namespace {

// Guards 0/0 when a whole factor row or column has collapsed to zero; small
// enough not to perturb the monotone descent of the updates.
constexpr double kTiny = 1e-300;

double squared_error(const Mat<double>& a, const Mat<double>& w, const Mat<double>& h) {
  return (a - w * h).squaredNorm();
}

}  // namespace

NmfResult nmf(const Mat<double>& a, int k, int max_iters, double tol, std::uint64_t seed) {
  require(a.size() > 0, Errc::kInput, "cannot factorize an empty matrix");
  require((a.array() >= 0.0).all() && a.allFinite(), Errc::kInput,
          "nmf input must be finite and non-negative");
  require(k >= 1 && k <= std::min(a.rows(), a.cols()), Errc::kInput,
          "nmf rank must be in [1, min(P, D)]");
  require(max_iters >= 0 && tol >= 0.0, Errc::kInput, "invalid nmf stopping criteria");

  NmfResult out;
  const double norm_a = a.norm();
  if (norm_a == 0.0) {
    out.w = Mat<double>::Zero(a.rows(), k);
    out.h = Mat<double>::Zero(k, a.cols());
    out.objective = {0.0};
    return out;
  }

  Rng rng(seed);
  const double scale = std::sqrt(a.mean() / k);
  out.w.resize(a.rows(), k);
  out.h.resize(k, a.cols());
  // W starts constant so equal rows of A keep equal rows of W; the seeded
  // H separates the components.
  out.w.setConstant(scale * 0.5);
  for (Eigen::Index i = 0; i < out.h.size(); ++i) out.h.data()[i] = scale * rng.uniform(0.01, 1.0);

  out.objective.push_back(squared_error(a, out.w, out.h));
  for (int it = 0; it < max_iters; ++it) {
    const Mat<double> wt_a = out.w.transpose() * a;
    const Mat<double> wt_w_h = out.w.transpose() * out.w * out.h;
    out.h.array() *= wt_a.array() / wt_w_h.array().max(kTiny);

    const Mat<double> a_ht = a * out.h.transpose();
    const Mat<double> w_h_ht = out.w * (out.h * out.h.transpose());
    out.w.array() *= a_ht.array() / w_h_ht.array().max(kTiny);

    const double prev = out.objective.back();
    const double cur = squared_error(a, out.w, out.h);
    out.objective.push_back(cur);
    out.iterations = it + 1;
    if (prev <= 0.0 || (prev - cur) / prev < tol) break;
  }
  out.relative_error = std::sqrt(out.objective.back()) / norm_a;
  return out;
}

}  // namespace kdvit
