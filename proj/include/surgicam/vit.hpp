#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "surgicam/tensor.hpp"

namespace surgicam {

struct ModelConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 16;
  std::size_t embed_dim = 768;
  std::size_t num_heads = 12;
  std::size_t num_layers = 12;
  std::size_t ffn_dim = 3072;
  std::size_t proj_dim = 512;
  // 0 means 1/sqrt(head_dim).
  float attn_scale = 0.0f;

  std::size_t grid_side() const { return image_size / patch_size; }
  std::size_t num_tokens() const { return grid_side() * grid_side() + 1; }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  float effective_attn_scale() const;

  // Throws ShapeError on inconsistent sizes.
  void validate() const;
};

struct LayerNormWeights {
  Tensor gamma;
  Tensor beta;
};

struct BlockWeights {
  LayerNormWeights ln1;
  LayerNormWeights ln2;
  Tensor wq, bq;
  Tensor wk, bk;
  Tensor wv, bv;
  Tensor w_out, b_out;
  Tensor ffn_w1, ffn_b1;
  Tensor ffn_w2, ffn_b2;
};

struct ModelBundle {
  ModelConfig config;
  // [C x 3*patch*patch], flattened per patch in (channel, row, col) order.
  Tensor patch_embed;
  Tensor patch_bias;
  Tensor class_token;
  Tensor pos_embed;
  // Applied to the token stream before the first block when present.
  std::optional<LayerNormWeights> pre_ln;
  std::vector<BlockWeights> blocks;
  LayerNormWeights final_ln;
  Tensor proj;

  // Checks every weight shape against the config and that all values are finite.
  void validate() const;
};

struct SurgeryConfig {
  std::size_t depth_d = 7;
  bool enabled = true;
};

struct AttentionResult {
  Tensor out;   // [N x C]
  Tensor attn;  // [heads x N x N]
};

// Residual-branch class-token output of one sub-module.
struct ClassRecord {
  enum class Kind { attention, ffn };
  std::size_t layer = 0;  // 1-based
  Kind kind = Kind::attention;
  Tensor value;  // [C]
};

struct DualForwardResult {
  Tensor original_tokens;         // [N_i x C], after final layer norm
  Tensor original_class_embed;    // [proj_dim], unit norm
  Tensor original_image_embeds;   // [(N_i-1) x proj_dim], unit rows
  Tensor surgery_tokens;          // empty when surgery is disabled
  Tensor surgery_image_embeds;    // empty when surgery is disabled
  std::vector<Tensor> attn_raw_per_layer;  // one per layer
  std::vector<Tensor> attn_vv_per_layer;   // layers depth_d..L
  std::size_t surgery_start_layer = 0;     // 0 when disabled
  std::vector<ClassRecord> per_block_class_records;  // 2 per layer

  bool has_surgery() const { return !surgery_tokens.empty(); }
};

// Per-head pre-softmax logits scale * Q K^T, [heads x N x N].
Tensor attention_logits_raw(const Tensor& x, const BlockWeights& block,
                            std::size_t heads, float scale);
// Per-head pre-softmax logits scale * V V^T, [heads x N x N].
Tensor attention_logits_consistent(const Tensor& x, const BlockWeights& block,
                                   std::size_t heads, float scale);

// softmax(scale Q K^T) V per head, concatenated and projected by w_out.
AttentionResult attention_raw(const Tensor& x, const BlockWeights& block,
                              std::size_t heads, float scale);
// softmax(scale V V^T) V per head with the same output projection.
AttentionResult attention_consistent(const Tensor& x, const BlockWeights& block,
                                     std::size_t heads, float scale);

Tensor feed_forward(const Tensor& x, const BlockWeights& block);

// Class token followed by row-major patch tokens, plus positional embedding.
Tensor patch_embed_tokens(const Tensor& image, const ModelBundle& model);

// Runs the unmodified block stack and, from layer depth_d on, a second
// FFN-free stream that accumulates consistent-attention outputs.
DualForwardResult forward_dual(const Tensor& image, const ModelBundle& model,
                               const SurgeryConfig& surgery);

// Mean cosine between the projected class record and each text row.
double affinity(const Tensor& text_feats, const Tensor& class_record,
                const ModelBundle& model);

}  // namespace surgicam
