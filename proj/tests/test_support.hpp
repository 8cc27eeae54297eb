// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "kdvit/image.hpp"
#include "kdvit/rng.hpp"
#include "kdvit/vit.hpp"

namespace kdvit::testing {

inline ViTConfig small_config(std::uint64_t seed = 1) {
  ViTConfig c;
  c.image_size = 16;
  c.patch_size = 4;
  c.hidden_size = 16;
  c.intermediate_size = 32;
  c.num_layers = 2;
  c.num_heads = 2;
  c.num_classes = 4;
  c.seed = seed;
  return c;
}

inline Image random_image(int channels, int size, Rng& rng) {
  Image img(channels, size, size);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

inline ImageBatch random_batch(const ViTConfig& cfg, int n, std::uint64_t seed) {
  Rng rng(seed);
  ImageBatch b;
  b.channels = cfg.channels;
  b.size = cfg.image_size;
  for (int i = 0; i < n; ++i) b.push_back(random_image(cfg.channels, cfg.image_size, rng), i % cfg.num_classes);
  return b;
}

/// Adds N(0, scale^2) noise to every parameter, so no LayerNorm bias or
/// other row is left exactly at its initial zero.
template <typename Scalar>
void jitter(TinyViT<Scalar>& model, double scale, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& t : model.params().tensors()) {
    for (Eigen::Index i = 0; i < t.value->size(); ++i) {
      t.value->data()[i] += static_cast<Scalar>(scale * rng.normal());
    }
  }
}

inline double rel_diff(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("kdvit_" + tag + "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace kdvit::testing
