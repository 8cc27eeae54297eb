// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0

#include "kdvit/vit.hpp"

#include <charconv>
#include <cmath>
#include <numbers>

#include "kdvit/error.hpp"
#include "kdvit/rng.hpp"

namespace kdvit {

namespace {

constexpr double kLayerNormEps = 1e-6;

template <typename Scalar>
Mat<Scalar> uniform_init(Rng& rng, int rows, int cols, double bound) {
  Mat<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
  }
  return m;
}

template <typename Scalar>
Mat<Scalar> normal_init(Rng& rng, int rows, int cols, double stddev) {
  Mat<Scalar> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<Scalar>(stddev * rng.normal());
  }
  return m;
}

template <typename Scalar>
Linear<Scalar> make_linear(Rng& rng, int in, int out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear<Scalar> lin;
  lin.weight = uniform_init<Scalar>(rng, out, in, bound);
  lin.bias = uniform_init<Scalar>(rng, 1, out, bound);
  return lin;
}

template <typename Scalar>
LayerNorm<Scalar> make_layer_norm(int width) {
  return {Mat<Scalar>::Ones(1, width), Mat<Scalar>::Zero(1, width)};
}

template <typename Scalar>
Mat<Scalar> linear_forward(const Mat<Scalar>& x, const Linear<Scalar>& lin) {
  Mat<Scalar> y = x * lin.weight.transpose();
  y.rowwise() += lin.bias.row(0);
  return y;
}

// dx = dy W; dW += dy^T x; db += colsum(dy)
template <typename Scalar>
Mat<Scalar> linear_backward(const Mat<Scalar>& x, const Mat<Scalar>& dy, const Linear<Scalar>& lin,
                            Linear<Scalar>* grad) {
  if (grad != nullptr) {
    grad->weight.noalias() += dy.transpose() * x;
    grad->bias += dy.colwise().sum();
  }
  return dy * lin.weight;
}

template <typename Scalar>
Mat<Scalar> layer_norm_forward(const Mat<Scalar>& x, const LayerNorm<Scalar>& ln,
                               LayerNormCache<Scalar>& cache) {
  const Eigen::Index n = x.rows();
  const Eigen::Index h = x.cols();
  cache.normalized.resize(n, h);
  cache.inv_std.resize(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Scalar mean = x.row(r).mean();
    const auto centered = (x.row(r).array() - mean).matrix();
    const Scalar var = centered.squaredNorm() / static_cast<Scalar>(h);
    const Scalar inv_std = Scalar(1) / std::sqrt(var + static_cast<Scalar>(kLayerNormEps));
    cache.inv_std(r) = inv_std;
    cache.normalized.row(r) = centered * inv_std;
  }
  Mat<Scalar> y = cache.normalized.array().rowwise() * ln.weight.row(0).array();
  y.rowwise() += ln.bias.row(0);
  return y;
}

template <typename Scalar>
Mat<Scalar> layer_norm_backward(const Mat<Scalar>& dy, const LayerNorm<Scalar>& ln,
                                const LayerNormCache<Scalar>& cache, LayerNorm<Scalar>* grad) {
  const Eigen::Index h = dy.cols();
  if (grad != nullptr) {
    grad->weight += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
    grad->bias += dy.colwise().sum();
  }
  Mat<Scalar> dxhat = dy.array().rowwise() * ln.weight.row(0).array();
  Mat<Scalar> dx(dy.rows(), h);
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Scalar mean_d = dxhat.row(r).mean();
    const Scalar mean_dx = dxhat.row(r).dot(cache.normalized.row(r)) / static_cast<Scalar>(h);
    dx.row(r) = (dxhat.row(r).array() - mean_d - cache.normalized.row(r).array() * mean_dx) *
                cache.inv_std(r);
  }
  return dx;
}

template <typename Scalar>
Scalar gelu(Scalar u) {
  return Scalar(0.5) * u * (Scalar(1) + std::erf(u / std::numbers::sqrt2_v<Scalar>));
}

template <typename Scalar>
Scalar gelu_grad(Scalar u) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(u / std::numbers::sqrt2_v<Scalar>));
  const Scalar pdf = std::exp(Scalar(-0.5) * u * u) * std::numbers::inv_sqrtpi_v<Scalar> /
                     std::numbers::sqrt2_v<Scalar>;
  return cdf + u * pdf;
}

template <typename Scalar>
void softmax_rows(Mat<Scalar>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const Scalar mx = m.row(r).maxCoeff();
    m.row(r) = (m.row(r).array() - mx).exp().matrix();
    m.row(r) /= m.row(r).sum();
  }
}

template <typename Scalar>
Mat<Scalar> extract_patches(std::span<const float> image, const ViTConfig& cfg) {
  const int grid = cfg.grid_side();
  const int ps = cfg.patch_size;
  const int size = cfg.image_size;
  Mat<Scalar> patches(cfg.num_patches(), cfg.patch_dim());
  for (int py = 0; py < grid; ++py) {
    for (int px = 0; px < grid; ++px) {
      const int p = py * grid + px;
      int k = 0;
      for (int c = 0; c < cfg.channels; ++c) {
        for (int dy = 0; dy < ps; ++dy) {
          for (int dx = 0; dx < ps; ++dx) {
            const int y = py * ps + dy;
            const int x = px * ps + dx;
            patches(p, k++) = static_cast<Scalar>(image[(c * size + y) * size + x]);
          }
        }
      }
    }
  }
  return patches;
}

bool site_matches(const Site& a, Site::Kind kind, int layer) {
  return a.kind == kind && (kind == Site::Kind::kFinalNorm || a.layer == layer);
}

void validate_site(const Site& site, const ViTConfig& config) {
  if (site.kind == Site::Kind::kFinalNorm) return;
  require(site.layer >= 0 && site.layer < config.num_layers, Errc::kInput,
          "site " + site.name() + " refers to a missing layer");
}

}  // namespace

// ---------------------------------------------------------------------------

void ImageBatch::push_back(const Image& img, int label) {
  require(img.channels == channels && img.height == size && img.width == size, Errc::kInput,
          "image shape does not match batch geometry");
  pixels.insert(pixels.end(), img.data.begin(), img.data.end());
  labels.push_back(label);
}

void ImageBatch::validate(int num_classes) const {
  require(batch_size() >= 1, Errc::kInput, "empty batch");
  require(pixels.size() == image_stride() * labels.size(), Errc::kInput,
          "pixel buffer size does not match batch x channels x size x size");
  for (int label : labels) {
    require(label >= 0 && label < num_classes, Errc::kInput,
            "label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
  }
}

void ViTConfig::validate() const {
  require(image_size > 0 && patch_size > 0, Errc::kConfig, "image and patch size must be positive");
  require(image_size % patch_size == 0, Errc::kConfig,
          "image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
              std::to_string(patch_size));
  require(channels >= 1, Errc::kConfig, "channels must be >= 1");
  require(num_heads >= 1 && hidden_size >= 1 && hidden_size % num_heads == 0, Errc::kConfig,
          "hidden_size must be divisible by num_heads");
  require(intermediate_size >= hidden_size, Errc::kConfig, "intermediate_size must be >= hidden_size");
  require(num_classes >= 2, Errc::kConfig, "num_classes must be >= 2");
  require(num_layers >= 2, Errc::kConfig, "num_layers must be >= 2 (a penultimate block is required)");
}

Site Site::parse(std::string_view text, const ViTConfig& config) {
  if (text == "final_norm") return final_norm();
  if (text == "penultimate_linear") return penultimate_linear(config);
  constexpr std::string_view prefix = "blocks.";
  if (text.starts_with(prefix)) {
    text.remove_prefix(prefix.size());
    int layer = -1;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), layer);
    const std::string_view rest(ptr, text.data() + text.size() - ptr);
    if (ec == std::errc{}) {
      Site site;
      if (rest == ".mlp_out") site = mlp_output(layer);
      else if (rest == ".out") site = block_output(layer);
      else fail(Errc::kInput, "unknown site suffix '" + std::string(rest) + "'");
      validate_site(site, config);
      return site;
    }
  }
  fail(Errc::kInput, "unknown site '" + std::string(text) + "'");
}

std::string Site::name() const {
  switch (kind) {
    case Kind::kFinalNorm: return "final_norm";
    case Kind::kMlpOutput: return "blocks." + std::to_string(layer) + ".mlp_out";
    case Kind::kBlockOutput: return "blocks." + std::to_string(layer) + ".out";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------

template <typename Scalar>
std::vector<NamedTensor<Scalar>> VitParameters<Scalar>::tensors() {
  std::vector<NamedTensor<Scalar>> out;
  auto lin = [&](const std::string& prefix, Linear<Scalar>& l) {
    out.push_back({prefix + ".weight", &l.weight});
    out.push_back({prefix + ".bias", &l.bias});
  };
  auto norm = [&](const std::string& prefix, LayerNorm<Scalar>& n) {
    out.push_back({prefix + ".weight", &n.weight});
    out.push_back({prefix + ".bias", &n.bias});
  };
  lin("patch_embed", patch_embed);
  out.push_back({"cls_token", &cls_token});
  out.push_back({"pos_embed", &pos_embed});
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i);
    norm(p + ".norm1", blocks[i].norm1);
    lin(p + ".qkv", blocks[i].qkv);
    lin(p + ".attn_out", blocks[i].attn_out);
    norm(p + ".norm2", blocks[i].norm2);
    lin(p + ".fc1", blocks[i].fc1);
    lin(p + ".fc2", blocks[i].fc2);
  }
  norm("final_norm", final_norm);
  lin("head", head);
  return out;
}

template <typename Scalar>
std::vector<ConstNamedTensor<Scalar>> VitParameters<Scalar>::tensors() const {
  auto mutable_view = const_cast<VitParameters*>(this)->tensors();
  std::vector<ConstNamedTensor<Scalar>> out;
  out.reserve(mutable_view.size());
  for (auto& t : mutable_view) out.push_back({std::move(t.name), t.value});
  return out;
}

template <typename Scalar>
VitParameters<Scalar> VitParameters<Scalar>::zeros_like() const {
  VitParameters copy = *this;
  copy.set_zero();
  return copy;
}

template <typename Scalar>
void VitParameters<Scalar>::set_zero() {
  for (auto& t : tensors()) t.value->setZero();
}

template <typename Scalar>
std::size_t VitParameters<Scalar>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors()) n += static_cast<std::size_t>(t.value->size());
  return n;
}

template <typename Scalar>
bool VitParameters<Scalar>::all_finite() const {
  for (const auto& t : tensors()) {
    if (!t.value->allFinite()) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
TinyViT<Scalar>::TinyViT(const ViTConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const int h = config_.hidden_size;
  params_.patch_embed = make_linear<Scalar>(rng, config_.patch_dim(), h);
  params_.cls_token = normal_init<Scalar>(rng, 1, h, 0.02);
  params_.pos_embed = normal_init<Scalar>(rng, config_.num_tokens(), h, 0.02);
  params_.blocks.resize(config_.num_layers);
  for (auto& block : params_.blocks) {
    block.norm1 = make_layer_norm<Scalar>(h);
    block.qkv = make_linear<Scalar>(rng, h, 3 * h);
    block.attn_out = make_linear<Scalar>(rng, h, h);
    block.norm2 = make_layer_norm<Scalar>(h);
    block.fc1 = make_linear<Scalar>(rng, h, config_.intermediate_size);
    block.fc2 = make_linear<Scalar>(rng, config_.intermediate_size, h);
  }
  params_.final_norm = make_layer_norm<Scalar>(h);
  params_.head = make_linear<Scalar>(rng, h, config_.num_classes);
}

template <typename Scalar>
TinyViT<Scalar>::TinyViT(const ViTConfig& config, VitParameters<Scalar> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  const TinyViT reference_shape(config_);
  const auto expected = reference_shape.params().tensors();
  auto actual = params_.tensors();
  require(expected.size() == actual.size(), Errc::kConfig, "parameter count does not match config");
  for (std::size_t i = 0; i < expected.size(); ++i) {
    require(expected[i].value->rows() == actual[i].value->rows() &&
                expected[i].value->cols() == actual[i].value->cols(),
            Errc::kConfig, "parameter " + expected[i].name + " has the wrong shape");
  }
}

template <typename Scalar>
ForwardResult<Scalar> TinyViT<Scalar>::forward(const ImageBatch& batch, std::span<const Site> capture,
                                               bool keep_cache) const {
  const ViTConfig& cfg = config_;
  require(batch.size == cfg.image_size && batch.channels == cfg.channels, Errc::kInput,
          "batch geometry " + std::to_string(batch.channels) + "x" + std::to_string(batch.size) +
              " does not match model " + std::to_string(cfg.channels) + "x" +
              std::to_string(cfg.image_size));
  require(batch.batch_size() >= 1 && batch.pixels.size() == batch.image_stride() * batch.labels.size(),
          Errc::kInput, "malformed batch");
  for (const Site& s : capture) validate_site(s, cfg);

  const int n_batch = batch.batch_size();
  const int h = cfg.hidden_size;
  const int dh = cfg.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  ForwardResult<Scalar> result;
  result.logits.resize(n_batch, cfg.num_classes);
  result.captured.resize(capture.size());
  for (std::size_t s = 0; s < capture.size(); ++s) {
    result.captured[s].site = capture[s];
    result.captured[s].samples.resize(n_batch);
  }
  if (keep_cache) result.cache.resize(n_batch);

  auto record = [&](int sample, Site::Kind kind, int layer, const Mat<Scalar>& value) {
    for (std::size_t s = 0; s < capture.size(); ++s) {
      if (site_matches(capture[s], kind, layer)) result.captured[s].samples[sample] = value;
    }
  };

  for (int b = 0; b < n_batch; ++b) {
    ActivationCache<Scalar> local;
    ActivationCache<Scalar>& c = keep_cache ? result.cache[b] : local;
    c.patches = extract_patches<Scalar>(batch.image(b), cfg);
    Mat<Scalar> x(cfg.num_tokens(), h);
    x.row(0) = params_.cls_token.row(0);
    x.bottomRows(cfg.num_patches()) = linear_forward(c.patches, params_.patch_embed);
    x += params_.pos_embed;

    c.blocks.resize(cfg.num_layers);
    for (int l = 0; l < cfg.num_layers; ++l) {
      const EncoderBlock<Scalar>& p = params_.blocks[l];
      BlockCache<Scalar>& bc = c.blocks[l];
      bc.input = x;
      bc.ln1_out = layer_norm_forward(x, p.norm1, bc.ln1);
      bc.qkv = linear_forward(bc.ln1_out, p.qkv);
      bc.attn.resize(cfg.num_heads);
      bc.heads_concat.resize(cfg.num_tokens(), h);
      for (int head = 0; head < cfg.num_heads; ++head) {
        const auto q = bc.qkv.middleCols(head * dh, dh);
        const auto k = bc.qkv.middleCols(h + head * dh, dh);
        const auto v = bc.qkv.middleCols(2 * h + head * dh, dh);
        Mat<Scalar> scores = (q * k.transpose()) * scale;
        softmax_rows(scores);
        bc.heads_concat.middleCols(head * dh, dh) = scores * v;
        bc.attn[head] = std::move(scores);
      }
      bc.after_attn = x + linear_forward(bc.heads_concat, p.attn_out);
      bc.ln2_out = layer_norm_forward(bc.after_attn, p.norm2, bc.ln2);
      bc.pre_gelu = linear_forward(bc.ln2_out, p.fc1);
      bc.post_gelu = bc.pre_gelu.unaryExpr([](Scalar u) { return gelu(u); });
      bc.mlp_out = linear_forward(bc.post_gelu, p.fc2);
      bc.output = bc.after_attn + bc.mlp_out;
      x = bc.output;
      record(b, Site::Kind::kMlpOutput, l, bc.mlp_out);
      record(b, Site::Kind::kBlockOutput, l, bc.output);
    }
    c.final_out = layer_norm_forward(x, params_.final_norm, c.final_ln);
    record(b, Site::Kind::kFinalNorm, -1, c.final_out);
    Mat<Scalar> cls = c.final_out.topRows(1);
    result.logits.row(b) = linear_forward(cls, params_.head).row(0);
  }
  return result;
}

template <typename Scalar>
std::vector<TokenStates<Scalar>> TinyViT<Scalar>::backward(const ForwardResult<Scalar>& fwd,
                                                           const Mat<Scalar>& dlogits,
                                                           VitParameters<Scalar>* grads,
                                                           std::span<const Site> grad_sites) const {
  const ViTConfig& cfg = config_;
  const int n_batch = static_cast<int>(fwd.logits.rows());
  require(static_cast<int>(fwd.cache.size()) == n_batch, Errc::kInput,
          "backward requires a forward pass run with keep_cache");
  require(dlogits.rows() == n_batch && dlogits.cols() == cfg.num_classes, Errc::kInput,
          "dlogits shape mismatch");
  for (const Site& s : grad_sites) validate_site(s, cfg);

  const int h = cfg.hidden_size;
  const int dh = cfg.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

  std::vector<TokenStates<Scalar>> site_grads(grad_sites.size());
  for (std::size_t s = 0; s < grad_sites.size(); ++s) {
    site_grads[s].site = grad_sites[s];
    site_grads[s].samples.resize(n_batch);
  }
  auto record = [&](int sample, Site::Kind kind, int layer, const Mat<Scalar>& value) {
    for (std::size_t s = 0; s < grad_sites.size(); ++s) {
      if (site_matches(grad_sites[s], kind, layer)) site_grads[s].samples[sample] = value;
    }
  };

  for (int b = 0; b < n_batch; ++b) {
    const ActivationCache<Scalar>& c = fwd.cache[b];
    const Mat<Scalar> dz = dlogits.row(b);

    Mat<Scalar> dfinal = Mat<Scalar>::Zero(cfg.num_tokens(), h);
    const Mat<Scalar> cls = c.final_out.topRows(1);
    dfinal.topRows(1) = linear_backward(cls, dz, params_.head, grads ? &grads->head : nullptr);
    record(b, Site::Kind::kFinalNorm, -1, dfinal);

    Mat<Scalar> dx = layer_norm_backward(dfinal, params_.final_norm, c.final_ln,
                                         grads ? &grads->final_norm : nullptr);

    for (int l = cfg.num_layers - 1; l >= 0; --l) {
      const EncoderBlock<Scalar>& p = params_.blocks[l];
      const BlockCache<Scalar>& bc = c.blocks[l];
      EncoderBlock<Scalar>* g = grads ? &grads->blocks[l] : nullptr;

      record(b, Site::Kind::kBlockOutput, l, dx);
      record(b, Site::Kind::kMlpOutput, l, dx);

      // MLP branch; dx is the gradient w.r.t. both mlp_out and after_attn.
      Mat<Scalar> dgelu = linear_backward(bc.post_gelu, dx, p.fc2, g ? &g->fc2 : nullptr);
      Mat<Scalar> dpre = dgelu.array() * bc.pre_gelu.unaryExpr([](Scalar u) { return gelu_grad(u); }).array();
      Mat<Scalar> dln2 = linear_backward(bc.ln2_out, dpre, p.fc1, g ? &g->fc1 : nullptr);
      Mat<Scalar> dafter = dx + layer_norm_backward(dln2, p.norm2, bc.ln2, g ? &g->norm2 : nullptr);

      // Attention branch.
      Mat<Scalar> dconcat = linear_backward(bc.heads_concat, dafter, p.attn_out, g ? &g->attn_out : nullptr);
      Mat<Scalar> dqkv(cfg.num_tokens(), 3 * h);
      for (int head = 0; head < cfg.num_heads; ++head) {
        const auto q = bc.qkv.middleCols(head * dh, dh);
        const auto k = bc.qkv.middleCols(h + head * dh, dh);
        const auto v = bc.qkv.middleCols(2 * h + head * dh, dh);
        const Mat<Scalar>& attn = bc.attn[head];
        const Mat<Scalar> dout = dconcat.middleCols(head * dh, dh);
        const Mat<Scalar> dattn = dout * v.transpose();
        dqkv.middleCols(2 * h + head * dh, dh) = attn.transpose() * dout;
        Mat<Scalar> dscores = attn.array() * dattn.array();
        const auto row_dot = dscores.rowwise().sum().eval();
        dscores -= (attn.array().colwise() * row_dot.array()).matrix();
        dscores *= scale;
        dqkv.middleCols(head * dh, dh) = dscores * k;
        dqkv.middleCols(h + head * dh, dh) = dscores.transpose() * q;
      }
      Mat<Scalar> dln1 = linear_backward(bc.ln1_out, dqkv, p.qkv, g ? &g->qkv : nullptr);
      dx = dafter + layer_norm_backward(dln1, p.norm1, bc.ln1, g ? &g->norm1 : nullptr);
    }

    if (grads != nullptr) {
      grads->pos_embed += dx;
      grads->cls_token += dx.topRows(1);
      const Mat<Scalar> dpatch = dx.bottomRows(cfg.num_patches());
      linear_backward(c.patches, dpatch, params_.patch_embed, &grads->patch_embed);
    }
  }
  return site_grads;
}

template <typename Scalar>
InternalParameters<Scalar> TinyViT<Scalar>::internal_parameters() const {
  const auto& fc2 = params_.blocks[config_.penultimate_layer()].fc2;
  InternalParameters<Scalar> out;
  out.norm_bias = params_.final_norm.bias.row(0);
  out.norm_weight = params_.final_norm.weight.row(0);
  out.linear_bias = fc2.bias.row(0);
  out.linear_weight = fc2.weight;
  return out;
}

template <typename Scalar>
template <typename Other>
TinyViT<Other> TinyViT<Scalar>::cast() const {
  TinyViT<Other> out(config_);
  auto src = params_.tensors();
  auto dst = out.params().tensors();
  for (std::size_t i = 0; i < src.size(); ++i) {
    *dst[i].value = src[i].value->template cast<Other>();
  }
  return out;
}

template <typename Scalar>
std::uint64_t parameter_hash(const TinyViT<Scalar>& model) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (const auto& t : model.params().tensors()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.value->data());
    const std::size_t n = static_cast<std::size_t>(t.value->size()) * sizeof(Scalar);
    for (std::size_t i = 0; i < n; ++i) {
      hash ^= bytes[i];
      hash *= 0x100000001b3ULL;
    }
  }
  return hash;
}

template struct VitParameters<float>;
template struct VitParameters<double>;
template class TinyViT<float>;
template class TinyViT<double>;
template TinyViT<float> TinyViT<float>::cast<float>() const;
template TinyViT<double> TinyViT<float>::cast<double>() const;
template TinyViT<float> TinyViT<double>::cast<float>() const;
template TinyViT<double> TinyViT<double>::cast<double>() const;
template std::uint64_t parameter_hash(const TinyViT<float>&);
template std::uint64_t parameter_hash(const TinyViT<double>&);

}  // namespace kdvit
