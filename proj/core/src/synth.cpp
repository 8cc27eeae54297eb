// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include <array>
#include <cmath>
#include <numbers>

#include "kdvit/datasets.hpp"
#include "kdvit/error.hpp"
#include "kdvit/rng.hpp"

namespace kdvit {

namespace {

struct SubjectPattern {
  std::array<double, 3> color;
  double angle;      // stripe orientation
  double frequency;  // cycles per pixel
  double blob_x;     // in [0, 1] image coordinates
  double blob_y;
  double blob_radius;
};

SubjectPattern draw_subject(Rng& rng) {
  SubjectPattern p;
  for (double& c : p.color) c = rng.uniform(0.15, 0.85);
  p.angle = rng.uniform(0.0, std::numbers::pi);
  p.frequency = rng.uniform(0.07, 0.2);
  p.blob_x = rng.uniform(0.28, 0.72);
  p.blob_y = rng.uniform(0.28, 0.72);
  p.blob_radius = rng.uniform(0.16, 0.26);
  return p;
}

double smoothstep_inside(double radius, double distance) {
  return 1.0 / (1.0 + std::exp((distance - radius) / 0.9));
}

// Source domain: oriented stripes tinted by the subject colour, with a blob
// of the complementary colour.
Image render_source(const SubjectPattern& p, int size, Rng& rng, double noise) {
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double jx = rng.uniform(-1.5, 1.5);
  const double jy = rng.uniform(-1.5, 1.5);
  const double gain = rng.uniform(0.9, 1.1);
  const double ca = std::cos(p.angle);
  const double sa = std::sin(p.angle);
  const double bx = p.blob_x * size + jx;
  const double by = p.blob_y * size + jy;
  const double br = p.blob_radius * size;
  Image img(3, size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double t = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * p.frequency * (x * ca + y * sa) + phase);
      const double w = smoothstep_inside(br, std::hypot(x - bx, y - by));
      for (int c = 0; c < 3; ++c) {
        const double base = p.color[c] * (0.35 + 0.65 * t);
        const double blob = 0.9 * (1.0 - p.color[c]);
        const double v = gain * ((1 - w) * base + w * blob) + noise * rng.normal();
        img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

// Target domain: the same subject parameters with the layout rotated by 90
// degrees, concentric rings instead of stripes, and intensities inverted.
Image render_target(const SubjectPattern& p, int size, Rng& rng, double noise) {
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double jx = rng.uniform(-1.5, 1.5);
  const double jy = rng.uniform(-1.5, 1.5);
  const double gain = rng.uniform(0.9, 1.1);
  // (x, y) -> (size - 1 - y, x) rotates the source layout by 90 degrees.
  const double bx = (1.0 - p.blob_y) * size + jx;
  const double by = p.blob_x * size + jy;
  const double br = p.blob_radius * size;
  const double ring_freq = 0.5 * p.frequency + 0.6 * (p.angle / std::numbers::pi) * 0.2;
  Image img(3, size, size);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double d = std::hypot(x - bx, y - by);
      const double t = 0.5 + 0.5 * std::sin(2 * std::numbers::pi * (ring_freq + 0.05) * d + phase);
      const double w = smoothstep_inside(br, d);
      for (int c = 0; c < 3; ++c) {
        const double base = p.color[c] * (0.35 + 0.65 * t);
        const double blob = 0.9 * (1.0 - p.color[c]);
        const double v = 1.0 - gain * ((1 - w) * base + w * blob) + noise * rng.normal();
        img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

std::string subject_name(int s) {
  std::string id = std::to_string(s);
  return "S" + std::string(id.size() < 3 ? 3 - id.size() : 0, '0') + id;
}

}  // namespace

std::pair<DatasetManifest, DatasetManifest> synth_two_domain(const SynthOptions& options) {
  require(options.num_subjects >= 2, Errc::kConfig, "synthetic data needs at least 2 subjects");
  require(options.images_per_subject_per_domain >= 1, Errc::kConfig, "need >= 1 image per subject");
  require(options.image_size >= 4, Errc::kConfig, "image_size too small");
  require(options.noise >= 0.0, Errc::kConfig, "noise must be >= 0");

  Rng rng(options.seed);
  std::vector<SubjectPattern> subjects;
  for (int s = 0; s < options.num_subjects; ++s) subjects.push_back(draw_subject(rng));

  DatasetManifest source;
  DatasetManifest target;
  source.domain = "synth-source";
  target.domain = "synth-target";
  for (int s = 0; s < options.num_subjects; ++s) {
    for (int j = 0; j < options.images_per_subject_per_domain; ++j) {
      const auto key = static_cast<std::uint64_t>(s) * 4096 + static_cast<std::uint64_t>(j);
      Rng src_rng(mix_seed(options.seed, 2 * key));
      Rng tgt_rng(mix_seed(options.seed, 2 * key + 1));
      SampleRecord r;
      r.subject_id = subject_name(s);
      r.hand = Hand::kRight;
      r.side = Side::kDorsal;
      r.pixels = std::make_shared<const Image>(
          render_source(subjects[s], options.image_size, src_rng, options.noise));
      source.records.push_back(r);
      r.side = Side::kPalmar;
      r.pixels = std::make_shared<const Image>(
          render_target(subjects[s], options.image_size, tgt_rng, options.noise));
      target.records.push_back(std::move(r));
    }
  }
  source.rebuild_class_index();
  target.rebuild_class_index();
  return {std::move(source), std::move(target)};
}

}  // namespace kdvit
