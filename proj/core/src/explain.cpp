// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdvit/explain.hpp"

#include <cmath>
#include <fstream>
#include <json.hpp>

#include "kdvit/error.hpp"
#include "kdvit/image_io.hpp"

namespace kdvit {

namespace {

int grid_side_of(Eigen::Index spatial_tokens) {
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(spatial_tokens))));
  require(side > 0 && static_cast<Eigen::Index>(side) * side == spatial_tokens, Errc::kGeometry,
          std::to_string(spatial_tokens) + " spatial tokens do not form a square grid");
  return side;
}

Mat<double> to_grid(const Eigen::Ref<const Eigen::VectorXd>& values, int side) {
  Mat<double> grid(side, side);
  for (int p = 0; p < side * side; ++p) grid(p / side, p % side) = values(p);
  return grid;
}

ImageBatch single_image_batch(const Image& image, int label) {
  ImageBatch batch;
  batch.channels = image.channels;
  batch.size = image.height;
  require(image.height == image.width, Errc::kInput, "images must be square");
  batch.push_back(image, label);
  return batch;
}

}  // namespace

Mat<double> normalize_unit(const Mat<double>& map, double* lo, double* hi) {
  const double mn = map.minCoeff();
  const double mx = map.maxCoeff();
  if (lo != nullptr) *lo = mn;
  if (hi != nullptr) *hi = mx;
  if (mx <= 0.0) return Mat<double>::Zero(map.rows(), map.cols());
  if (mx == mn) return Mat<double>::Ones(map.rows(), map.cols());
  return (map.array() - mn) / (mx - mn);
}

HeatMap cam_from_tokens(const Mat<double>& activations, const Mat<double>& gradients, int image_size) {
  require(activations.rows() == gradients.rows() && activations.cols() == gradients.cols() &&
              activations.rows() >= 2,
          Errc::kInput, "activation and gradient shapes differ");
  const Eigen::Index spatial = activations.rows() - 1;
  const int side = grid_side_of(spatial);
  const auto acts = activations.bottomRows(spatial);
  const auto grads = gradients.bottomRows(spatial);
  const Eigen::RowVectorXd weights = grads.colwise().mean();
  const Eigen::VectorXd cam = (acts * weights.transpose()).cwiseMax(0.0);

  HeatMap out;
  out.grid = to_grid(cam, side);
  out.upsampled = resize_bilinear(normalize_unit(out.grid, &out.raw_min, &out.raw_max), image_size,
                                  image_size);
  return out;
}

template <typename Scalar>
HeatMap grad_cam(const TinyViT<Scalar>& model, const Image& image, int target_class, const Site& site) {
  const ViTConfig& cfg = model.config();
  require(target_class >= 0 && target_class < cfg.num_classes, Errc::kInput,
          "class " + std::to_string(target_class) + " outside [0, " + std::to_string(cfg.num_classes) + ")");
  const ImageBatch batch = single_image_batch(image, target_class);
  const Site sites[] = {site};
  const auto fwd = model.forward(batch, sites, true);
  Mat<Scalar> dlogits = Mat<Scalar>::Zero(1, cfg.num_classes);
  dlogits(0, target_class) = Scalar(1);
  const auto site_grads = model.backward(fwd, dlogits, nullptr, sites);
  HeatMap out = cam_from_tokens(fwd.captured[0].samples[0].template cast<double>(),
                                site_grads[0].samples[0].template cast<double>(), cfg.image_size);
  out.target_class = target_class;
  out.site = site;
  return out;
}

template <typename Scalar>
ConceptMaps dff(const TinyViT<Scalar>& model, std::span<const Image> images, int k, const Site& site,
                int max_iters, double tol, std::uint64_t seed) {
  require(!images.empty(), Errc::kInput, "dff needs at least one image");
  const ViTConfig& cfg = model.config();
  ImageBatch batch;
  batch.channels = cfg.channels;
  batch.size = cfg.image_size;
  for (const auto& img : images) batch.push_back(img, 0);
  const Site sites[] = {site};
  const auto fwd = model.forward(batch, sites);

  const Eigen::Index spatial = cfg.num_patches();
  const int side = grid_side_of(spatial);
  Mat<double> a(spatial * static_cast<Eigen::Index>(images.size()), cfg.hidden_size);
  for (std::size_t i = 0; i < images.size(); ++i) {
    a.middleRows(static_cast<Eigen::Index>(i) * spatial, spatial) =
        fwd.captured[0].samples[i].bottomRows(spatial).template cast<double>().cwiseMax(0.0);
  }

  const NmfResult factors = nmf(a, k, max_iters, tol, seed);
  ConceptMaps out;
  out.site = site;
  out.basis = factors.h;
  out.residual = factors.relative_error;
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::vector<Mat<double>> grids;
    std::vector<Mat<double>> maps;
    for (int c = 0; c < k; ++c) {
      const Eigen::VectorXd col = factors.w.col(c).segment(static_cast<Eigen::Index>(i) * spatial, spatial);
      Mat<double> grid = normalize_unit(to_grid(col, side));
      maps.push_back(resize_bilinear(grid, cfg.image_size, cfg.image_size));
      grids.push_back(std::move(grid));
    }
    out.grid.push_back(std::move(grids));
    out.maps.push_back(std::move(maps));
  }
  return out;
}

void export_heatmap(const HeatMap& map, const std::filesystem::path& png) {
  write_gray(map.upsampled, png);
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["kind"] = "grad_cam";
  j["site"] = map.site.name();
  j["class"] = map.target_class;
  j["grid_side"] = map.grid.rows();
  j["normalization"] = {{"min", map.raw_min}, {"max", map.raw_max}};
  auto sidecar = png;
  sidecar.replace_extension(".json");
  std::ofstream(sidecar) << j.dump(2) << '\n';
}

std::vector<std::filesystem::path> export_concepts(const ConceptMaps& concepts,
                                                   const std::filesystem::path& dir,
                                                   const std::string& prefix) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  for (std::size_t i = 0; i < concepts.maps.size(); ++i) {
    for (std::size_t c = 0; c < concepts.maps[i].size(); ++c) {
      const auto file =
          dir / (prefix + "_img" + std::to_string(i) + "_concept" + std::to_string(c) + ".png");
      write_gray(concepts.maps[i][c], file);
      written.push_back(file);
    }
  }
  nlohmann::ordered_json j;
  j["format_version"] = 1;
  j["kind"] = "dff";
  j["site"] = concepts.site.name();
  j["k"] = concepts.basis.rows();
  j["images"] = concepts.maps.size();
  j["residual"] = concepts.residual;
  j["normalization"] = "per-map min-max to [0, 1]";
  std::ofstream(dir / (prefix + ".json")) << j.dump(2) << '\n';
  return written;
}

template HeatMap grad_cam(const TinyViT<float>&, const Image&, int, const Site&);
template HeatMap grad_cam(const TinyViT<double>&, const Image&, int, const Site&);
template ConceptMaps dff(const TinyViT<float>&, std::span<const Image>, int, const Site&, int, double,
                         std::uint64_t);
template ConceptMaps dff(const TinyViT<double>&, std::span<const Image>, int, const Site&, int, double,
                         std::uint64_t);

}  // namespace kdvit
