#include "surgicam/synth.hpp"

#include <algorithm>
#include <cmath>

namespace surgicam::synth {

Tensor random_tensor(Rng& rng, Shape shape, float stddev, float mean) {
  std::normal_distribution<float> dist(mean, stddev);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Tensor random_unit_rows(Rng& rng, std::size_t rows, std::size_t cols) {
  return ops::l2_normalize(random_tensor(rng, {rows, cols}), 1);
}

ModelConfig tiny_config(std::size_t layers, std::size_t embed_dim, std::size_t heads,
                        std::size_t image_size, std::size_t patch_size, std::size_t proj_dim) {
  ModelConfig cfg;
  cfg.image_size = image_size;
  cfg.patch_size = patch_size;
  cfg.embed_dim = embed_dim;
  cfg.num_heads = heads;
  cfg.num_layers = layers;
  cfg.ffn_dim = 4 * embed_dim;
  cfg.proj_dim = proj_dim;
  cfg.validate();
  return cfg;
}

ModelBundle random_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const std::size_t c = cfg.embed_dim, f = cfg.ffn_dim;
  const float w_std = 1.0f / std::sqrt(static_cast<float>(c));
  const float small = 0.02f;

  ModelBundle m;
  m.config = cfg;
  const std::size_t patch_in = 3 * cfg.patch_size * cfg.patch_size;
  m.patch_embed = random_tensor(rng, {c, patch_in}, 1.0f / std::sqrt(static_cast<float>(patch_in)));
  m.patch_bias = random_tensor(rng, {c}, small);
  m.class_token = random_tensor(rng, {c}, 0.5f);
  m.pos_embed = random_tensor(rng, {cfg.num_tokens(), c}, 0.1f);
  m.pre_ln = LayerNormWeights{random_tensor(rng, {c}, 0.05f, 1.0f), random_tensor(rng, {c}, small)};
  for (std::size_t i = 0; i < cfg.num_layers; ++i) {
    BlockWeights b;
    b.ln1 = {random_tensor(rng, {c}, 0.05f, 1.0f), random_tensor(rng, {c}, small)};
    b.ln2 = {random_tensor(rng, {c}, 0.05f, 1.0f), random_tensor(rng, {c}, small)};
    b.wq = random_tensor(rng, {c, c}, w_std);
    b.bq = random_tensor(rng, {c}, small);
    b.wk = random_tensor(rng, {c, c}, w_std);
    b.bk = random_tensor(rng, {c}, small);
    b.wv = random_tensor(rng, {c, c}, w_std);
    b.bv = random_tensor(rng, {c}, small);
    b.w_out = random_tensor(rng, {c, c}, w_std);
    b.b_out = random_tensor(rng, {c}, small);
    b.ffn_w1 = random_tensor(rng, {c, f}, w_std);
    b.ffn_b1 = random_tensor(rng, {f}, small);
    b.ffn_w2 = random_tensor(rng, {f, c}, 1.0f / std::sqrt(static_cast<float>(f)));
    b.ffn_b2 = random_tensor(rng, {c}, small);
    m.blocks.push_back(std::move(b));
  }
  m.final_ln = {random_tensor(rng, {c}, 0.05f, 1.0f), random_tensor(rng, {c}, small)};
  m.proj = random_tensor(rng, {c, cfg.proj_dim}, w_std);
  m.validate();
  return m;
}

TextFeatureSet random_texts(std::size_t classes, std::size_t dim, std::uint64_t seed,
                            bool with_empty) {
  Rng rng(seed);
  TextFeatureSet texts;
  texts.features = random_unit_rows(rng, classes, dim);
  for (std::size_t i = 0; i < classes; ++i) texts.labels.push_back("class" + std::to_string(i));
  if (with_empty) texts.empty_feature = ops::l2_normalize(random_tensor(rng, {dim}), 0);
  return texts;
}

SyntheticScene random_scene(std::size_t size, const std::vector<std::int32_t>& classes,
                            std::int32_t background_label, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<float> color(0.0f, 1.0f);
  std::uniform_int_distribution<std::size_t> coord(0, size - 1);

  SyntheticScene scene;
  scene.image = Tensor({3, size, size});
  scene.labels = {size, size, std::vector<std::int32_t>(size * size, background_label)};
  for (std::size_t ch = 0; ch < 3; ++ch) {
    const float bg = color(rng);
    for (std::size_t i = 0; i < size * size; ++i) scene.image[ch * size * size + i] = bg;
  }
  for (const std::int32_t cls : classes) {
    std::size_t y0 = coord(rng), y1 = coord(rng), x0 = coord(rng), x1 = coord(rng);
    if (y0 > y1) std::swap(y0, y1);
    if (x0 > x1) std::swap(x0, x1);
    // Keep every object at least a quarter of the side wide.
    y1 = std::min(size - 1, std::max(y1, y0 + size / 4));
    x1 = std::min(size - 1, std::max(x1, x0 + size / 4));
    const float rgb[3] = {color(rng), color(rng), color(rng)};
    for (std::size_t y = y0; y <= y1; ++y) {
      for (std::size_t x = x0; x <= x1; ++x) {
        scene.labels.labels[y * size + x] = cls;
        for (std::size_t ch = 0; ch < 3; ++ch) scene.image.at(ch, y, x) = rgb[ch];
      }
    }
  }
  return scene;
}

}  // namespace surgicam::synth
