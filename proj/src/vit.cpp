#include "surgicam/vit.hpp"

#include <cmath>
#include <string>

namespace surgicam {

namespace {

void expect_shape(const Tensor& t, const Shape& shape, const std::string& name) {
  if (t.shape() != shape) {
    throw ShapeError(name + ": expected " + shape_to_string(shape) + ", got " +
                     shape_to_string(t.shape()));
  }
}

void expect_finite(const Tensor& t, const std::string& name) {
  if (!t.all_finite()) throw ShapeError(name + ": contains non-finite values");
}

void check_attention_input(const Tensor& x, const BlockWeights& block, std::size_t heads) {
  if (x.rank() != 2) throw ShapeError("attention: input must be [N x C], got " +
                                      shape_to_string(x.shape()));
  const std::size_t c = x.dim(1);
  if (heads == 0 || c % heads != 0) {
    throw ShapeError("attention: " + std::to_string(heads) + " heads do not divide width " +
                     std::to_string(c));
  }
  expect_shape(block.wq, {c, c}, "wq");
  expect_shape(block.wk, {c, c}, "wk");
  expect_shape(block.wv, {c, c}, "wv");
  expect_shape(block.w_out, {c, c}, "w_out");
}

// scale * A_h B_h^T for every head h, where A_h/B_h are column blocks.
Tensor head_logits(const Tensor& a, const Tensor& b, std::size_t heads, float scale) {
  const std::size_t n = a.dim(0), c = a.dim(1), hd = c / heads;
  Tensor logits({heads, n, n});
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < n; ++i) {
      const float* ar = a.data().data() + i * c + off;
      for (std::size_t j = 0; j < n; ++j) {
        const float* br = b.data().data() + j * c + off;
        double acc = 0.0;
        for (std::size_t d = 0; d < hd; ++d) acc += static_cast<double>(ar[d]) * br[d];
        logits.at(h, i, j) = static_cast<float>(scale * acc);
      }
    }
  }
  return logits;
}

// Concatenated per-head attn_h * V_h, [N x C].
Tensor apply_heads(const Tensor& attn, const Tensor& v, std::size_t heads) {
  const std::size_t n = v.dim(0), c = v.dim(1), hd = c / heads;
  Tensor out({n, c});
  std::vector<double> acc(hd);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * hd;
    for (std::size_t i = 0; i < n; ++i) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double a = attn.at(h, i, j);
        const float* vr = v.data().data() + j * c + off;
        for (std::size_t d = 0; d < hd; ++d) acc[d] += a * vr[d];
      }
      float* orow = out.data().data() + i * c + off;
      for (std::size_t d = 0; d < hd; ++d) orow[d] = static_cast<float>(acc[d]);
    }
  }
  return out;
}

Tensor class_row(const Tensor& tokens) {
  const auto r = tokens.row(0);
  return Tensor({r.size()}, std::vector<float>(r.begin(), r.end()));
}

Tensor project_and_normalize(const Tensor& tokens, const Tensor& proj) {
  return ops::l2_normalize(ops::matmul(tokens, proj), 1);
}

}  // namespace

float ModelConfig::effective_attn_scale() const {
  if (attn_scale > 0.0f) return attn_scale;
  return static_cast<float>(1.0 / std::sqrt(static_cast<double>(head_dim())));
}

void ModelConfig::validate() const {
  if (patch_size == 0 || image_size == 0 || image_size % patch_size != 0) {
    throw ShapeError("image_size " + std::to_string(image_size) +
                     " must be a positive multiple of patch_size " + std::to_string(patch_size));
  }
  if (num_heads == 0 || embed_dim == 0 || embed_dim % num_heads != 0) {
    throw ShapeError("embed_dim " + std::to_string(embed_dim) + " must be divisible by num_heads " +
                     std::to_string(num_heads));
  }
  if (num_layers == 0 || ffn_dim == 0 || proj_dim == 0) {
    throw ShapeError("num_layers, ffn_dim and proj_dim must be positive");
  }
  if (!(attn_scale >= 0.0f) || !std::isfinite(attn_scale)) {
    throw ShapeError("attn_scale must be finite and non-negative");
  }
}

void ModelBundle::validate() const {
  config.validate();
  const std::size_t c = config.embed_dim, f = config.ffn_dim;
  const std::size_t patch_in = 3 * config.patch_size * config.patch_size;
  expect_shape(patch_embed, {c, patch_in}, "patch_embed");
  expect_shape(patch_bias, {c}, "patch_bias");
  expect_shape(class_token, {c}, "class_token");
  expect_shape(pos_embed, {config.num_tokens(), c}, "pos_embed");
  if (pre_ln) {
    expect_shape(pre_ln->gamma, {c}, "pre_ln.gamma");
    expect_shape(pre_ln->beta, {c}, "pre_ln.beta");
  }
  if (blocks.size() != config.num_layers) {
    throw ShapeError("expected " + std::to_string(config.num_layers) + " blocks, got " +
                     std::to_string(blocks.size()));
  }
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    expect_shape(b.ln1.gamma, {c}, p + "ln1.gamma");
    expect_shape(b.ln1.beta, {c}, p + "ln1.beta");
    expect_shape(b.ln2.gamma, {c}, p + "ln2.gamma");
    expect_shape(b.ln2.beta, {c}, p + "ln2.beta");
    expect_shape(b.wq, {c, c}, p + "wq");
    expect_shape(b.wk, {c, c}, p + "wk");
    expect_shape(b.wv, {c, c}, p + "wv");
    expect_shape(b.w_out, {c, c}, p + "w_out");
    expect_shape(b.bq, {c}, p + "bq");
    expect_shape(b.bk, {c}, p + "bk");
    expect_shape(b.bv, {c}, p + "bv");
    expect_shape(b.b_out, {c}, p + "b_out");
    expect_shape(b.ffn_w1, {c, f}, p + "ffn_w1");
    expect_shape(b.ffn_b1, {f}, p + "ffn_b1");
    expect_shape(b.ffn_w2, {f, c}, p + "ffn_w2");
    expect_shape(b.ffn_b2, {c}, p + "ffn_b2");
    for (const Tensor* t : {&b.wq, &b.wk, &b.wv, &b.w_out, &b.ffn_w1, &b.ffn_w2, &b.bq, &b.bk,
                            &b.bv, &b.b_out, &b.ffn_b1, &b.ffn_b2, &b.ln1.gamma, &b.ln1.beta,
                            &b.ln2.gamma, &b.ln2.beta}) {
      expect_finite(*t, p + "weights");
    }
  }
  expect_shape(final_ln.gamma, {c}, "final_ln.gamma");
  expect_shape(final_ln.beta, {c}, "final_ln.beta");
  expect_shape(proj, {c, config.proj_dim}, "proj");
  for (const Tensor* t : {&patch_embed, &patch_bias, &class_token, &pos_embed, &final_ln.gamma,
                          &final_ln.beta, &proj}) {
    expect_finite(*t, "model weights");
  }
}

Tensor attention_logits_raw(const Tensor& x, const BlockWeights& block, std::size_t heads,
                            float scale) {
  check_attention_input(x, block, heads);
  const Tensor q = ops::linear(x, block.wq, &block.bq);
  const Tensor k = ops::linear(x, block.wk, &block.bk);
  return head_logits(q, k, heads, scale);
}

Tensor attention_logits_consistent(const Tensor& x, const BlockWeights& block,
                                   std::size_t heads, float scale) {
  check_attention_input(x, block, heads);
  const Tensor v = ops::linear(x, block.wv, &block.bv);
  return head_logits(v, v, heads, scale);
}

AttentionResult attention_raw(const Tensor& x, const BlockWeights& block, std::size_t heads,
                              float scale) {
  check_attention_input(x, block, heads);
  const Tensor q = ops::linear(x, block.wq, &block.bq);
  const Tensor k = ops::linear(x, block.wk, &block.bk);
  const Tensor v = ops::linear(x, block.wv, &block.bv);
  Tensor attn = ops::softmax(head_logits(q, k, heads, scale), 2);
  Tensor out = ops::linear(apply_heads(attn, v, heads), block.w_out, &block.b_out);
  return {std::move(out), std::move(attn)};
}

AttentionResult attention_consistent(const Tensor& x, const BlockWeights& block,
                                     std::size_t heads, float scale) {
  check_attention_input(x, block, heads);
  const Tensor v = ops::linear(x, block.wv, &block.bv);
  Tensor attn = ops::softmax(head_logits(v, v, heads, scale), 2);
  Tensor out = ops::linear(apply_heads(attn, v, heads), block.w_out, &block.b_out);
  return {std::move(out), std::move(attn)};
}

Tensor feed_forward(const Tensor& x, const BlockWeights& block) {
  const Tensor hidden = ops::quick_gelu(ops::linear(x, block.ffn_w1, &block.ffn_b1));
  return ops::linear(hidden, block.ffn_w2, &block.ffn_b2);
}

Tensor patch_embed_tokens(const Tensor& image, const ModelBundle& model) {
  const ModelConfig& cfg = model.config;
  const std::size_t side = cfg.image_size, p = cfg.patch_size, grid = cfg.grid_side();
  if (image.shape() != Shape{3, side, side}) {
    throw ShapeError("image must be " + shape_to_string({3, side, side}) + ", got " +
                     shape_to_string(image.shape()));
  }
  const std::size_t c = cfg.embed_dim, patch_in = 3 * p * p;
  Tensor patches({grid * grid, patch_in});
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      auto dst = patches.row(gy * grid + gx);
      std::size_t k = 0;
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t py = 0; py < p; ++py)
          for (std::size_t px = 0; px < p; ++px)
            dst[k++] = image.at(ch, gy * p + py, gx * p + px);
    }
  }
  const Tensor embedded = ops::matmul_transposed(patches, model.patch_embed);

  Tensor tokens({grid * grid + 1, c});
  for (std::size_t j = 0; j < c; ++j) tokens.at(0, j) = model.class_token[j] + model.pos_embed.at(0, j);
  for (std::size_t t = 0; t < grid * grid; ++t) {
    for (std::size_t j = 0; j < c; ++j) {
      tokens.at(t + 1, j) = embedded.at(t, j) + model.patch_bias[j] + model.pos_embed.at(t + 1, j);
    }
  }
  return tokens;
}

DualForwardResult forward_dual(const Tensor& image, const ModelBundle& model,
                               const SurgeryConfig& surgery) {
  const ModelConfig& cfg = model.config;
  if (model.blocks.size() != cfg.num_layers) {
    throw ShapeError("model has " + std::to_string(model.blocks.size()) + " blocks, config says " +
                     std::to_string(cfg.num_layers));
  }
  if (surgery.enabled && (surgery.depth_d < 1 || surgery.depth_d > cfg.num_layers)) {
    throw std::out_of_range("surgery depth " + std::to_string(surgery.depth_d) +
                            " outside [1, " + std::to_string(cfg.num_layers) + "]");
  }
  const std::size_t heads = cfg.num_heads;
  const float scale = cfg.effective_attn_scale();

  DualForwardResult result;
  Tensor x = patch_embed_tokens(image, model);
  if (model.pre_ln) x = ops::layer_norm(x, model.pre_ln->gamma, model.pre_ln->beta);

  Tensor x_hat;
  for (std::size_t layer = 1; layer <= cfg.num_layers; ++layer) {
    const BlockWeights& block = model.blocks[layer - 1];
    const Tensor normed = ops::layer_norm(x, block.ln1.gamma, block.ln1.beta);

    AttentionResult raw = attention_raw(normed, block, heads, scale);
    result.per_block_class_records.push_back(
        {layer, ClassRecord::Kind::attention, class_row(raw.out)});

    if (surgery.enabled && layer >= surgery.depth_d) {
      AttentionResult con = attention_consistent(normed, block, heads, scale);
      x_hat = ops::add(con.out, layer == surgery.depth_d ? x : x_hat);
      result.attn_vv_per_layer.push_back(std::move(con.attn));
    }
    result.attn_raw_per_layer.push_back(std::move(raw.attn));

    const Tensor mid = ops::add(raw.out, x);
    const Tensor ffn = feed_forward(ops::layer_norm(mid, block.ln2.gamma, block.ln2.beta), block);
    result.per_block_class_records.push_back({layer, ClassRecord::Kind::ffn, class_row(ffn)});
    x = ops::add(ffn, mid);
  }

  const std::size_t n = cfg.num_tokens();
  result.original_tokens = ops::layer_norm(x, model.final_ln.gamma, model.final_ln.beta);
  const Tensor original_embeds = project_and_normalize(result.original_tokens, model.proj);
  result.original_class_embed = class_row(original_embeds);
  result.original_image_embeds = original_embeds.slice_rows(1, n);

  if (surgery.enabled) {
    result.surgery_start_layer = surgery.depth_d;
    result.surgery_tokens = ops::layer_norm(x_hat, model.final_ln.gamma, model.final_ln.beta);
    result.surgery_image_embeds =
        project_and_normalize(result.surgery_tokens.slice_rows(1, n), model.proj);
  }
  return result;
}

double affinity(const Tensor& text_feats, const Tensor& class_record, const ModelBundle& model) {
  if (text_feats.rank() != 2 || text_feats.dim(1) != model.config.proj_dim) {
    throw ShapeError("affinity: text features " + shape_to_string(text_feats.shape()) +
                     " do not match proj_dim " + std::to_string(model.config.proj_dim));
  }
  if (class_record.numel() != model.config.embed_dim) {
    throw ShapeError("affinity: class record " + shape_to_string(class_record.shape()) +
                     " does not match embed_dim " + std::to_string(model.config.embed_dim));
  }
  const Tensor projected = ops::l2_normalize(
      ops::matmul(class_record.reshaped({1, model.config.embed_dim}), model.proj), 1);
  double total = 0.0;
  for (std::size_t t = 0; t < text_feats.dim(0); ++t) {
    const auto r = text_feats.row(t);
    double dot = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) dot += static_cast<double>(r[j]) * projected[j];
    total += dot;
  }
  return total / static_cast<double>(text_feats.dim(0));
}

}  // namespace surgicam
