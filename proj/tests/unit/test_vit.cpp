#include <gtest/gtest.h>

#include <cmath>

#include "convert.hpp"
#include "oracle.hpp"
#include "surgicam/synth.hpp"
#include "surgicam/vit.hpp"

using namespace surgicam;
using testsupport::to_block;
using testsupport::to_model;
using testsupport::to_tensor;
using testsupport::to_vec;

namespace {

Tensor random_image(const ModelConfig& cfg, std::uint64_t seed) {
  synth::Rng rng(seed);
  return synth::random_tensor(rng, {3, cfg.image_size, cfg.image_size});
}

void expect_close(const Tensor& got, const std::vector<double>& want, double tol) {
  ASSERT_EQ(got.numel(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "at " << i;
}

void expect_rows_sum_to_one(const Tensor& attn) {
  for (std::size_t h = 0; h < attn.dim(0); ++h)
    for (std::size_t i = 0; i < attn.dim(1); ++i) {
      double s = 0;
      for (std::size_t j = 0; j < attn.dim(2); ++j) s += attn.at(h, i, j);
      EXPECT_NEAR(s, 1.0, 1e-5);
    }
}

}  // namespace

TEST(ModelConfig, Validation) {
  ModelConfig cfg = synth::tiny_config();
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.num_tokens(), 5u);
  EXPECT_FLOAT_EQ(cfg.effective_attn_scale(), 1.0f / std::sqrt(8.0f));
  cfg.image_size = 10;
  EXPECT_THROW(cfg.validate(), ShapeError);
  cfg = synth::tiny_config();
  cfg.num_heads = 3;
  EXPECT_THROW(cfg.validate(), ShapeError);
}

TEST(Attention, SingleTokenIsProjectedValue) {
  const ModelBundle m = synth::random_model(synth::tiny_config(), 1);
  const auto& b = m.blocks[0];
  synth::Rng rng(2);
  const Tensor x = synth::random_tensor(rng, {1, 16});
  const Tensor expect = ops::linear(ops::linear(x, b.wv, &b.bv), b.w_out, &b.b_out);
  for (auto fn : {attention_raw, attention_consistent}) {
    const AttentionResult r = fn(x, b, 2, 0.35f);
    for (std::size_t h = 0; h < 2; ++h) EXPECT_FLOAT_EQ(r.attn.at(h, 0, 0), 1.0f);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(r.out[i], expect[i], 1e-5);
  }
}

TEST(Attention, IdenticalTokensGiveUniformRows) {
  const ModelBundle m = synth::random_model(synth::tiny_config(), 3);
  synth::Rng rng(4);
  const Tensor row = synth::random_tensor(rng, {1, 16});
  const Tensor x = ops::broadcast_expand(row, {5, 16});
  for (auto fn : {attention_raw, attention_consistent}) {
    const Tensor a = fn(x, m.blocks[0], 2, 0.35f).attn;
    for (float v : a.data()) EXPECT_NEAR(v, 0.2, 1e-6);
  }
}

TEST(Attention, RawAndConsistentMatchOracle) {
  const ModelBundle m = synth::random_model(synth::tiny_config(2, 16, 2), 5);
  oracle::Generator gen(6);
  const auto xm = gen.matrix(4, 16);
  for (bool consistent : {false, true}) {
    const auto ref = oracle::attention(xm, to_block(m.blocks[1]), 2, 0.35, consistent);
    const AttentionResult r = consistent ? attention_consistent(to_tensor(xm), m.blocks[1], 2, 0.35f)
                                         : attention_raw(to_tensor(xm), m.blocks[1], 2, 0.35f);
    expect_close(r.out, ref.out.v, 1e-5);
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(r.attn.at(h, i, j), ref.attn[h](i, j), 1e-5);
  }
}

TEST(Attention, ConsistentLogitsSymmetric) {
  const ModelBundle m = synth::random_model(synth::tiny_config(1, 32, 4), 7);
  synth::Rng rng(8);
  const Tensor x = synth::random_tensor(rng, {9, 32});
  const Tensor l = attention_logits_consistent(x, m.blocks[0], 4, 0.5f);
  for (std::size_t h = 0; h < 4; ++h)
    for (std::size_t i = 0; i < 9; ++i)
      for (std::size_t j = 0; j < 9; ++j) EXPECT_NEAR(l.at(h, i, j), l.at(h, j, i), 1e-5);
}

TEST(PatchEmbed, ZeroImageGivesClassAndPosition) {
  ModelBundle m = synth::random_model(synth::tiny_config(), 9);
  m.patch_bias = Tensor({16}, 0.0f);
  const Tensor tokens = patch_embed_tokens(Tensor({3, 8, 8}, 0.0f), m);
  ASSERT_EQ(tokens.dim(0), 5u);
  for (std::size_t j = 0; j < 16; ++j) {
    EXPECT_FLOAT_EQ(tokens.at(0, j), m.class_token[j] + m.pos_embed.at(0, j));
    for (std::size_t t = 1; t < 5; ++t) EXPECT_FLOAT_EQ(tokens.at(t, j), m.pos_embed.at(t, j));
  }
  EXPECT_THROW(patch_embed_tokens(Tensor({3, 4, 4}), m), ShapeError);
}

TEST(ForwardDual, DisabledSurgeryMatchesOracleBaseline) {
  const ModelBundle m = synth::random_model(synth::tiny_config(3, 16, 2), 10);
  const Tensor img = random_image(m.config, 11);
  const DualForwardResult r = forward_dual(img, m, {1, false});
  EXPECT_FALSE(r.has_surgery());
  EXPECT_TRUE(r.attn_vv_per_layer.empty());
  const auto ref = oracle::forward(to_vec(img), to_model(m), 0);
  expect_close(r.original_class_embed, ref.class_embed, 1e-5);
  expect_close(r.original_image_embeds, ref.original_image_embeds.v, 1e-5);
  ASSERT_EQ(r.per_block_class_records.size(), 6u);
  for (std::size_t k = 0; k < 6; ++k) {
    EXPECT_EQ(r.per_block_class_records[k].layer, k / 2 + 1);
    expect_close(r.per_block_class_records[k].value, ref.class_records[k], 1e-4);
  }
}

TEST(ForwardDual, SurgeryNeverPerturbsOriginalPath) {
  const ModelBundle m = synth::random_model(synth::tiny_config(3, 16, 2), 12);
  const Tensor img = random_image(m.config, 13);
  const DualForwardResult base = forward_dual(img, m, {1, false});
  for (std::size_t d = 1; d <= 3; ++d) {
    const DualForwardResult r = forward_dual(img, m, {d, true});
    EXPECT_EQ(r.original_class_embed, base.original_class_embed);
    EXPECT_EQ(r.original_tokens, base.original_tokens);
    EXPECT_EQ(r.attn_vv_per_layer.size(), 3 - d + 1);
    EXPECT_EQ(r.surgery_start_layer, d);
  }
}

TEST(ForwardDual, SurgeryTokensMatchTwoStepOracle) {
  const ModelBundle m = synth::random_model(synth::tiny_config(2, 16, 2, 8, 4), 14);
  const Tensor img = random_image(m.config, 15);
  for (std::size_t d = 1; d <= 2; ++d) {
    const DualForwardResult r = forward_dual(img, m, {d, true});
    const auto ref = oracle::forward(to_vec(img), to_model(m), d);
    expect_close(r.surgery_tokens, ref.surgery_tokens.v, 1e-5);
    expect_close(r.surgery_image_embeds, ref.surgery_image_embeds.v, 1e-5);
  }
}

TEST(ForwardDual, InvariantsAndErrors) {
  const ModelBundle m = synth::random_model(synth::tiny_config(2, 16, 2), 16);
  const Tensor img = random_image(m.config, 17);
  const DualForwardResult r = forward_dual(img, m, {1, true});
  double n = 0;
  for (float v : r.original_class_embed.data()) n += double(v) * v;
  EXPECT_NEAR(std::sqrt(n), 1.0, 1e-5);
  for (const auto& a : r.attn_raw_per_layer) expect_rows_sum_to_one(a);
  for (const auto& a : r.attn_vv_per_layer) expect_rows_sum_to_one(a);
  EXPECT_THROW(forward_dual(img, m, {0, true}), std::out_of_range);
  EXPECT_THROW(forward_dual(img, m, {3, true}), std::out_of_range);
}

TEST(ForwardDual, EqualProjectionsAndNoFfnCollapsePaths) {
  // With wq = wk = wv, zero FFN and d = 1, the new path follows the original.
  ModelBundle m = synth::random_model(synth::tiny_config(1, 16, 2), 18);
  auto& b = m.blocks[0];
  b.wq = b.wk = b.wv;
  b.bq = b.bk = b.bv;
  b.ffn_w2 = Tensor(b.ffn_w2.shape(), 0.0f);
  b.ffn_b2 = Tensor(b.ffn_b2.shape(), 0.0f);
  const Tensor img = random_image(m.config, 19);
  const DualForwardResult same = forward_dual(img, m, {1, true});
  for (std::size_t i = 0; i < same.original_tokens.numel(); ++i) {
    EXPECT_NEAR(same.surgery_tokens[i], same.original_tokens[i], 1e-5);
  }

  const ModelBundle other = synth::random_model(synth::tiny_config(1, 16, 2), 18);
  const DualForwardResult diff = forward_dual(img, other, {1, true});
  double gap = 0;
  for (std::size_t i = 0; i < diff.original_tokens.numel(); ++i) {
    gap = std::max(gap, double(std::fabs(diff.surgery_tokens[i] - diff.original_tokens[i])));
  }
  EXPECT_GT(gap, 1e-3);
}

TEST(Affinity, AlignedOrthogonalAndOracle) {
  const ModelBundle m = synth::random_model(synth::tiny_config(), 20);
  synth::Rng rng(21);
  const Tensor record = synth::random_tensor(rng, {16});
  const Tensor dir = ops::l2_normalize(ops::matmul(record.reshaped({1, 16}), m.proj), 1);
  EXPECT_NEAR(affinity(dir, record, m), 1.0, 1e-6);

  // Gram-Schmidt a vector against the projected direction.
  Tensor orth = synth::random_unit_rows(rng, 1, 8);
  double d = 0;
  for (std::size_t j = 0; j < 8; ++j) d += double(orth[j]) * dir[j];
  for (std::size_t j = 0; j < 8; ++j) orth[j] -= static_cast<float>(d * dir[j]);
  orth = ops::l2_normalize(orth, 1);
  EXPECT_NEAR(affinity(orth, record, m), 0.0, 1e-6);

  const Tensor texts = synth::random_unit_rows(rng, 3, 8);
  const auto p = oracle::normalize(oracle::matmul(testsupport::to_matrix(record), testsupport::to_matrix(m.proj)).v);
  double mean = 0;
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t j = 0; j < 8; ++j) mean += texts.at(t, j) * p[j] / 3.0;
  EXPECT_NEAR(affinity(texts, record, m), mean, 1e-6);
}
