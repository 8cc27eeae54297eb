// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace kdvit {

/// Planar float image, channel-major (CHW), values nominally in [0, 1].
/// Channel order is R, G, B for colour images.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  float& at(int c, int y, int x) { return data[index(c, y, x)]; }
  float at(int c, int y, int x) const { return data[index(c, y, x)]; }

  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height + y) * width + x;
  }

  bool operator==(const Image&) const = default;
};

/// A batch of equally sized square images plus their class labels.
struct ImageBatch {
  int channels = 3;
  int size = 0;
  std::vector<float> pixels;  // batch x channels x size x size
  std::vector<int> labels;

  int batch_size() const { return static_cast<int>(labels.size()); }
  std::size_t image_stride() const { return static_cast<std::size_t>(channels) * size * size; }

  std::span<const float> image(int i) const {
    return {pixels.data() + i * image_stride(), image_stride()};
  }
  std::span<float> image(int i) { return {pixels.data() + i * image_stride(), image_stride()}; }

  void push_back(const Image& img, int label);

  /// Throws an input error if the batch is empty, inconsistent, or has a
  /// label outside [0, num_classes).
  void validate(int num_classes) const;
};

}  // namespace kdvit
