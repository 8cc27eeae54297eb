// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include "kdvit/image.hpp"
#include "kdvit/vit.hpp"

namespace kdvit {

/// Decodes any format OpenCV understands into an RGB float image in [0, 1].
/// Throws an io error naming the path when the file is missing or undecodable.
Image read_image(const std::filesystem::path& path);

/// Writes an RGB (or single-channel) float image as 8-bit PNG.
void write_image(const Image& image, const std::filesystem::path& path);

/// Writes a matrix with values in [0, 1] as an 8-bit grayscale image.
void write_gray(const Mat<double>& map, const std::filesystem::path& path);

/// Bilinear resampling with half-pixel centres and edge clamping:
/// source coordinate = (dst + 0.5) * in / out - 0.5. Resizing to the same
/// size is the identity.
Image resize_bilinear(const Image& image, int height, int width);
Mat<double> resize_bilinear(const Mat<double>& map, int height, int width);

}  // namespace kdvit
