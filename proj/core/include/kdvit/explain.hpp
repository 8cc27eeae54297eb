// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0
//
// Explainability probes on the token grid: gradient-weighted class
// activation maps and deep feature factorization (NMF over activations).

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "kdvit/image.hpp"
#include "kdvit/vit.hpp"

namespace kdvit {

struct HeatMap {
  Mat<double> grid;       // grid_side x grid_side, >= 0 (before normalization)
  Mat<double> upsampled;  // image_size x image_size, in [0, 1]
  int target_class = 0;
  Site site;
  double raw_min = 0.0;  // bounds used for min-max normalization
  double raw_max = 0.0;
};

/// Min-max normalization to [0, 1]. An all-zero map stays zero; a constant
/// positive map becomes all ones.
Mat<double> normalize_unit(const Mat<double>& map, double* lo = nullptr, double* hi = nullptr);

/// CAM from one sample's site activations and the gradient of the target
/// logit w.r.t. them (both tokens x H, token 0 = class token).
HeatMap cam_from_tokens(const Mat<double>& activations, const Mat<double>& gradients, int image_size);

template <typename Scalar>
HeatMap grad_cam(const TinyViT<Scalar>& model, const Image& image, int target_class, const Site& site);

struct NmfResult {
  Mat<double> w;                  // P x k
  Mat<double> h;                  // k x D
  std::vector<double> objective;  // squared Frobenius error, index 0 = initialization
  int iterations = 0;
  double relative_error = 0.0;  // ||A - WH||_F / ||A||_F (0 when A = 0)
};

/// Lee-Seung multiplicative updates for min ||A - WH||_F^2 with W, H >= 0.
/// Stops when the relative objective improvement drops below tol or after
/// max_iters. W starts constant and H as seeded uniform noise, both scaled
/// to A's mean, so identical rows of A get identical rows of W.
NmfResult nmf(const Mat<double>& a, int k, int max_iters = 500, double tol = 1e-6,
              std::uint64_t seed = 0);

struct ConceptMaps {
  Site site;
  Mat<double> basis;                           // k x H
  std::vector<std::vector<Mat<double>>> grid;  // [image][concept], grid resolution, in [0, 1]
  std::vector<std::vector<Mat<double>>> maps;  // [image][concept], image resolution, in [0, 1]
  double residual = 0.0;                       // relative reconstruction error
};

template <typename Scalar>
ConceptMaps dff(const TinyViT<Scalar>& model, std::span<const Image> images, int k, const Site& site,
                int max_iters = 500, double tol = 1e-6, std::uint64_t seed = 0);

/// Writes the upsampled map as an 8-bit PNG plus `<stem>.json` with site,
/// class and normalization bounds.
void export_heatmap(const HeatMap& map, const std::filesystem::path& png);

/// Writes one PNG per (image, concept) as `<prefix>_img<i>_concept<j>.png`
/// and a JSON sidecar `<prefix>.json`. Returns the PNG paths.
std::vector<std::filesystem::path> export_concepts(const ConceptMaps& concepts,
                                                   const std::filesystem::path& dir,
                                                   const std::string& prefix);

}  // namespace kdvit
