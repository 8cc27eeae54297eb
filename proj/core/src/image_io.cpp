// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdvit/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <opencv2/imgcodecs.hpp>

#include "kdvit/error.hpp"

namespace kdvit {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct Tap {
  int lo;
  int hi;
  double frac;
};

std::vector<Tap> taps(int in, int out) {
  std::vector<Tap> t(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const int lo = static_cast<int>(std::floor(src));
    t[i] = {lo, std::min(lo + 1, in - 1), src - lo};
  }
  return t;
}

template <typename Get, typename Set>
void resample(int in_h, int in_w, int out_h, int out_w, Get get, Set set) {
  const auto ty = taps(in_h, out_h);
  const auto tx = taps(in_w, out_w);
  for (int y = 0; y < out_h; ++y) {
    for (int x = 0; x < out_w; ++x) {
      const Tap& a = ty[y];
      const Tap& b = tx[x];
      const double top = get(a.lo, b.lo) * (1 - b.frac) + get(a.lo, b.hi) * b.frac;
      const double bottom = get(a.hi, b.lo) * (1 - b.frac) + get(a.hi, b.hi) * b.frac;
      set(y, x, top * (1 - a.frac) + bottom * a.frac);
    }
  }
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  require(std::filesystem::exists(path), Errc::kIo, "image not found: " + path.string());
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  require(!bgr.empty(), Errc::kIo, "cannot decode image: " + path.string());
  Image img(3, bgr.rows, bgr.cols);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[x][2 - c] / 255.0f;
    }
  }
  return img;
}

void write_image(const Image& image, const std::filesystem::path& path) {
  require(image.channels == 1 || image.channels == 3, Errc::kInput, "can only write 1 or 3 channels");
  cv::Mat out(image.height, image.width, image.channels == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < image.height; ++y) {
    auto* row = out.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width; ++x) {
      if (image.channels == 3) {
        for (int c = 0; c < 3; ++c) row[x * 3 + (2 - c)] = to_byte(image.at(c, y, x));
      } else {
        row[x] = to_byte(image.at(0, y, x));
      }
    }
  }
  require(cv::imwrite(path.string(), out), Errc::kIo, "cannot write image " + path.string());
}

void write_gray(const Mat<double>& map, const std::filesystem::path& path) {
  cv::Mat out(static_cast<int>(map.rows()), static_cast<int>(map.cols()), CV_8UC1);
  for (int y = 0; y < out.rows; ++y) {
    for (int x = 0; x < out.cols; ++x) out.at<std::uint8_t>(y, x) = to_byte(map(y, x));
  }
  require(cv::imwrite(path.string(), out), Errc::kIo, "cannot write image " + path.string());
}

Image resize_bilinear(const Image& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  Image out(image.channels, height, width);
  for (int c = 0; c < image.channels; ++c) {
    resample(
        image.height, image.width, height, width,
        [&](int y, int x) { return static_cast<double>(image.at(c, y, x)); },
        [&](int y, int x, double v) { out.at(c, y, x) = static_cast<float>(v); });
  }
  return out;
}

Mat<double> resize_bilinear(const Mat<double>& map, int height, int width) {
  if (map.rows() == height && map.cols() == width) return map;
  Mat<double> out(height, width);
  resample(
      static_cast<int>(map.rows()), static_cast<int>(map.cols()), height, width,
      [&](int y, int x) { return map(y, x); }, [&](int y, int x, double v) { out(y, x) = v; });
  return out;
}

}  // namespace kdvit
