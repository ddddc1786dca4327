// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "omim/tokenizer.hpp"

namespace omim {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  int patch_size = 16;
  int height = 64;
  int width = 64;
  int enc_depth = 4;
  int dec_depth = 2;
  int enc_dim = 128;
  int dec_dim = 64;
  int heads = 4;
  int mlp_ratio = 4;
  std::uint64_t seed = 0;

  int grid_h() const { return height / patch_size; }
  int grid_w() const { return width / patch_size; }
  int num_patches() const { return grid_h() * grid_w(); }
  int patch_dim() const { return patch_size * patch_size * 3; }

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

/// Pre-norm transformer block weights. Linear weights are (in x out).
template <typename Scalar>
struct BlockParams {
  Mat<Scalar> ln1_g, ln1_b, qkv_w, qkv_b, proj_w, proj_b;
  Mat<Scalar> ln2_g, ln2_b, fc1_w, fc1_b, fc2_w, fc2_b;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "ln1.g", ln1_g, false);
    f(prefix + "ln1.b", ln1_b, false);
    f(prefix + "attn.qkv.w", qkv_w, true);
    f(prefix + "attn.qkv.b", qkv_b, false);
    f(prefix + "attn.proj.w", proj_w, true);
    f(prefix + "attn.proj.b", proj_b, false);
    f(prefix + "ln2.g", ln2_g, false);
    f(prefix + "ln2.b", ln2_b, false);
    f(prefix + "mlp.fc1.w", fc1_w, true);
    f(prefix + "mlp.fc1.b", fc1_b, false);
    f(prefix + "mlp.fc2.w", fc2_w, true);
    f(prefix + "mlp.fc2.b", fc2_b, false);
  }
};

/// Every tensor of the encoder-decoder. Biases and norm parameters are 1 x n.
template <typename Scalar>
struct Params {
  Mat<Scalar> patch_w, patch_b;
  Mat<Scalar> enc_pos;  ///< frozen
  std::vector<BlockParams<Scalar>> enc_blocks;
  Mat<Scalar> enc_norm_g, enc_norm_b;
  Mat<Scalar> dec_embed_w, dec_embed_b;
  Mat<Scalar> mask_token;
  Mat<Scalar> dec_pos;  ///< frozen
  std::vector<BlockParams<Scalar>> dec_blocks;
  Mat<Scalar> dec_norm_g, dec_norm_b;
  Mat<Scalar> head_w, head_b;

  /// f(name, tensor, role) for every tensor in a fixed order. role is one of
  /// Role::weight (trainable, decayed), Role::other (trainable, not decayed),
  /// Role::frozen.
  enum class Role { weight, other, frozen };

  template <typename F>
  void for_each(F&& f) {
    f("patch_embed.w", patch_w, Role::weight);
    f("patch_embed.b", patch_b, Role::other);
    f("enc_pos", enc_pos, Role::frozen);
    for (std::size_t i = 0; i < enc_blocks.size(); ++i)
      enc_blocks[i].visit("enc." + std::to_string(i) + ".",
                          [&](const std::string& n, Mat<Scalar>& t, bool w) { f(n, t, w ? Role::weight : Role::other); });
    f("enc_norm.g", enc_norm_g, Role::other);
    f("enc_norm.b", enc_norm_b, Role::other);
    f("dec_embed.w", dec_embed_w, Role::weight);
    f("dec_embed.b", dec_embed_b, Role::other);
    f("mask_token", mask_token, Role::other);
    f("dec_pos", dec_pos, Role::frozen);
    for (std::size_t i = 0; i < dec_blocks.size(); ++i)
      dec_blocks[i].visit("dec." + std::to_string(i) + ".",
                          [&](const std::string& n, Mat<Scalar>& t, bool w) { f(n, t, w ? Role::weight : Role::other); });
    f("dec_norm.g", dec_norm_g, Role::other);
    f("dec_norm.b", dec_norm_b, Role::other);
    f("head.w", head_w, Role::weight);
    f("head.b", head_b, Role::other);
  }

  template <typename F>
  void for_each(F&& f) const {
    const_cast<Params*>(this)->for_each(
        [&](const std::string& n, Mat<Scalar>& t, Role r) { f(n, static_cast<const Mat<Scalar>&>(t), r); });
  }

  /// Same shapes, all zeros.
  Params zeros_like() const;
  std::int64_t num_trainable() const;

  template <typename Other>
  Params<Other> cast() const;
};

/// Deterministic per seed: truncated-normal Xavier weights, zero biases, unit
/// norm gains, zero mask token, fixed 2-D sine-cosine positions.
template <typename Scalar>
Params<Scalar> init_params(const ModelConfig& cfg, std::uint64_t seed);

/// 2-D sine-cosine table, one row per patch position.
Mat<double> sincos_positions(int grid_h, int grid_w, int dim);

template <typename Scalar>
struct LayerNormCache {
  Mat<Scalar> xhat;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rstd;
};

template <typename Scalar>
struct BlockCache {
  Mat<Scalar> x_in, a_in, qkv, attn, x1, m_in, h_pre, h_act;
  LayerNormCache<Scalar> ln1, ln2;
  std::vector<Mat<Scalar>> probs;  ///< per (segment, head)
};

/// Intermediate activations kept for the backward pass.
template <typename Scalar>
struct Tape {
  int batch = 0;
  std::vector<const MaskPlan*> plans;
  std::vector<int> enc_offsets;  ///< size batch + 1
  std::vector<int> dec_offsets;
  Mat<Scalar> enc_in;
  std::vector<BlockCache<Scalar>> enc;
  LayerNormCache<Scalar> enc_norm;
  Mat<Scalar> enc_normed;
  std::vector<BlockCache<Scalar>> dec;
  LayerNormCache<Scalar> dec_norm;
  Mat<Scalar> dec_normed;
};

/// One sample of a batch: its patch sequence and masking plan.
struct ModelInput {
  const PatchGrid::Patches* patches;
  const MaskPlan* plan;
};

template <typename Scalar>
class MaskedAutoencoder {
 public:
  MaskedAutoencoder(ModelConfig cfg, Params<Scalar> params);

  const ModelConfig& config() const { return cfg_; }
  const Params<Scalar>& params() const { return params_; }
  Params<Scalar>& params() { return params_; }

  /// Decoder output for every position of every sample, stacked: row
  /// b * M + i is sample b, patch i. Only the encoder sees pixel data, and
  /// only for visible patches. When `tape` is non-null activations are kept.
  Mat<Scalar> forward(const std::vector<ModelInput>& batch, Tape<Scalar>* tape = nullptr) const;

  /// Accumulates parameter gradients for d(loss)/d(output) into `grads`.
  void backward(const Tape<Scalar>& tape, const Mat<Scalar>& d_out, Params<Scalar>& grads) const;

 private:
  ModelConfig cfg_;
  Params<Scalar> params_;
};

/// Rows of a sample's full decoder output that belong to masked patches, in masked_idx order.
template <typename Scalar>
Mat<Scalar> gather_masked(const Mat<Scalar>& out, int sample, const MaskPlan& plan);

}  // namespace omim
