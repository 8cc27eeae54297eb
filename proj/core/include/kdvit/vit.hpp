// Copyright 2026 The kdvit Authors
// SPDX-License-Identifier: Apache-2.0
//
// A small pre-norm vision transformer with hand-written backward passes.
//
//   patches -> linear embed -> [cls; tokens] + pos
//   L x { x += MHSA(LN1(x)); x += fc2(GELU(fc1(LN2(x)))) }
//   LN_final -> head(cls token)
//
// The two components used by internal-state distillation and by the
// explainability probes are the final layer norm and the second MLP linear
// (fc2) of the penultimate encoder block.

#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kdvit/image.hpp"

namespace kdvit {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVec = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

struct ViTConfig {
  int image_size = 32;
  int patch_size = 8;
  int channels = 3;
  int hidden_size = 32;        // H
  int intermediate_size = 64;  // I
  int num_layers = 2;          // L
  int num_heads = 4;
  int num_classes = 10;  // C
  std::uint64_t seed = 0;

  int grid_side() const { return image_size / patch_size; }
  int num_patches() const { return grid_side() * grid_side(); }
  int num_tokens() const { return num_patches() + 1; }
  int patch_dim() const { return channels * patch_size * patch_size; }
  int head_dim() const { return hidden_size / num_heads; }
  int penultimate_layer() const { return num_layers - 2; }

  /// Throws a config error when any structural invariant is violated.
  void validate() const;

  bool operator==(const ViTConfig&) const = default;
};

/// Named activation site inside the network.
struct Site {
  enum class Kind { kBlockOutput, kMlpOutput, kFinalNorm };

  Kind kind = Kind::kFinalNorm;
  int layer = -1;

  static Site final_norm() { return {Kind::kFinalNorm, -1}; }
  static Site mlp_output(int layer) { return {Kind::kMlpOutput, layer}; }
  static Site block_output(int layer) { return {Kind::kBlockOutput, layer}; }
  /// Output of fc2 in block L-2: the linear whose parameters feed b_o / W_o.
  static Site penultimate_linear(const ViTConfig& config) {
    return mlp_output(config.penultimate_layer());
  }

  /// "final_norm", "blocks.<i>.mlp_out", "blocks.<i>.out", or the alias
  /// "penultimate_linear" (resolved against config).
  static Site parse(std::string_view text, const ViTConfig& config);
  std::string name() const;

  bool operator==(const Site&) const = default;
};

/// Token activations (or their gradients) at one site: one
/// (1 + num_patches) x H matrix per sample, token 0 being the class token.
template <typename Scalar>
struct TokenStates {
  Site site;
  std::vector<Mat<Scalar>> samples;
};

template <typename Scalar>
struct Linear {
  Mat<Scalar> weight;  // out x in
  Mat<Scalar> bias;    // 1 x out
};

template <typename Scalar>
struct LayerNorm {
  Mat<Scalar> weight;  // 1 x H
  Mat<Scalar> bias;    // 1 x H
};

template <typename Scalar>
struct EncoderBlock {
  LayerNorm<Scalar> norm1;
  Linear<Scalar> qkv;       // 3H x H, rows ordered [Q; K; V]
  Linear<Scalar> attn_out;  // H x H
  LayerNorm<Scalar> norm2;
  Linear<Scalar> fc1;  // I x H
  Linear<Scalar> fc2;  // H x I
};

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Mat<Scalar>* value;
};

template <typename Scalar>
struct ConstNamedTensor {
  std::string name;
  const Mat<Scalar>* value;
};

template <typename Scalar>
struct VitParameters {
  Linear<Scalar> patch_embed;  // H x patch_dim
  Mat<Scalar> cls_token;       // 1 x H
  Mat<Scalar> pos_embed;       // tokens x H
  std::vector<EncoderBlock<Scalar>> blocks;
  LayerNorm<Scalar> final_norm;
  Linear<Scalar> head;  // C x H

  /// Every tensor in canonical order (the order used for initialization,
  /// checkpoints and hashing).
  std::vector<NamedTensor<Scalar>> tensors();
  std::vector<ConstNamedTensor<Scalar>> tensors() const;

  VitParameters zeros_like() const;
  void set_zero();
  std::size_t scalar_count() const;
  bool all_finite() const;
};

/// (b_n, w_n, b_o, W_o) as copies out of a model.
template <typename Scalar>
struct InternalParameters {
  RowVec<Scalar> norm_bias;      // b_n, length H
  RowVec<Scalar> norm_weight;    // w_n, length H
  RowVec<Scalar> linear_bias;    // b_o, length H
  Mat<Scalar> linear_weight;     // W_o, H x I
};

template <typename Scalar>
struct ActivationCache;

template <typename Scalar>
struct ForwardResult {
  Mat<Scalar> logits;  // batch x C
  std::vector<TokenStates<Scalar>> captured;
  std::vector<ActivationCache<Scalar>> cache;  // empty unless requested
};

template <typename Scalar>
class TinyViT {
 public:
  /// Deterministic initialization from config.seed.
  explicit TinyViT(const ViTConfig& config);
  TinyViT(const ViTConfig& config, VitParameters<Scalar> params);

  const ViTConfig& config() const { return config_; }
  VitParameters<Scalar>& params() { return params_; }
  const VitParameters<Scalar>& params() const { return params_; }

  /// Runs the network. With keep_cache the per-sample activations needed by
  /// backward() are retained in the result.
  ForwardResult<Scalar> forward(const ImageBatch& batch, std::span<const Site> capture = {},
                                bool keep_cache = false) const;

  /// Convenience: logits only.
  Mat<Scalar> logits(const ImageBatch& batch) const { return forward(batch).logits; }

  /// Back-propagates dL/dlogits through the cached forward pass. Parameter
  /// gradients are accumulated into *grads when non-null. The returned
  /// TokenStates hold dL/d(activation) for each requested site.
  std::vector<TokenStates<Scalar>> backward(const ForwardResult<Scalar>& forward,
                                            const Mat<Scalar>& dlogits,
                                            VitParameters<Scalar>* grads,
                                            std::span<const Site> grad_sites = {}) const;

  InternalParameters<Scalar> internal_parameters() const;

  template <typename Other>
  TinyViT<Other> cast() const;

 private:
  ViTConfig config_;
  VitParameters<Scalar> params_;
};

/// Same as model.internal_parameters(); named for the operation it performs.
template <typename Scalar>
InternalParameters<Scalar> extract_internal_parameters(const TinyViT<Scalar>& model) {
  return model.internal_parameters();
}

/// FNV-1a over the raw bytes of every parameter, in canonical order.
template <typename Scalar>
std::uint64_t parameter_hash(const TinyViT<Scalar>& model);

// Checkpoint: one binary archive holding the config as JSON text plus every
// named parameter array. Parameters are stored in the model's precision and
// converted on load.
template <typename Scalar>
void save_checkpoint(const TinyViT<Scalar>& model, const std::filesystem::path& path);

/// Loads a checkpoint. When `expected` is given, a config mismatch is a
/// config error.
template <typename Scalar>
TinyViT<Scalar> load_checkpoint(const std::filesystem::path& path,
                                const ViTConfig* expected = nullptr);

std::string config_to_json(const ViTConfig& config);
ViTConfig config_from_json(std::string_view text);

// ---------------------------------------------------------------------------
// Activation cache. Exposed so tests and tools can inspect intermediate
// values; callers normally treat it as opaque.

template <typename Scalar>
struct LayerNormCache {
  Mat<Scalar> normalized;   // (x - mean) * inv_std
  RowVec<Scalar> inv_std;   // one per token
};

template <typename Scalar>
struct BlockCache {
  Mat<Scalar> input;
  LayerNormCache<Scalar> ln1;
  Mat<Scalar> ln1_out;
  Mat<Scalar> qkv;
  std::vector<Mat<Scalar>> attn;  // per head, tokens x tokens
  Mat<Scalar> heads_concat;
  Mat<Scalar> after_attn;
  LayerNormCache<Scalar> ln2;
  Mat<Scalar> ln2_out;
  Mat<Scalar> pre_gelu;
  Mat<Scalar> post_gelu;
  Mat<Scalar> mlp_out;
  Mat<Scalar> output;
};

template <typename Scalar>
struct ActivationCache {
  Mat<Scalar> patches;  // num_patches x patch_dim
  std::vector<BlockCache<Scalar>> blocks;
  LayerNormCache<Scalar> final_ln;
  Mat<Scalar> final_out;
};

extern template class TinyViT<float>;
extern template class TinyViT<double>;

}  // namespace kdvit
