#include "surgicam/explain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace surgicam {

namespace {

void check_token_grid(const Tensor& token_scores, std::size_t grid_side) {
  if (token_scores.rank() != 2) {
    throw ShapeError("token scores must be [tokens x classes], got " +
                     shape_to_string(token_scores.shape()));
  }
  if (grid_side == 0 || token_scores.dim(0) != grid_side * grid_side) {
    throw ShapeError(std::to_string(token_scores.dim(0)) + " image tokens do not form a " +
                     std::to_string(grid_side) + "x" + std::to_string(grid_side) + " grid");
  }
}

Tensor class_grid(const Tensor& token_scores, std::size_t grid_side, std::size_t cls) {
  Tensor grid({grid_side, grid_side});
  for (std::size_t t = 0; t < grid_side * grid_side; ++t) grid[t] = token_scores.at(t, cls);
  return grid;
}

ScoredPoint point_at(const Tensor& scores, std::size_t flat) {
  const std::size_t w = scores.dim(1);
  return {static_cast<int>(flat % w), static_cast<int>(flat / w), scores[flat]};
}

}  // namespace

std::string to_string(MapSource source) {
  return source == MapSource::surgery ? "surgery" : "raw-clip";
}

std::vector<SimilarityMap> similarity_map(const Tensor& token_scores, std::size_t grid_side,
                                          std::size_t out_h, std::size_t out_w,
                                          const std::vector<std::string>& labels,
                                          MapSource source) {
  check_token_grid(token_scores, grid_side);
  const std::size_t classes = token_scores.dim(1);
  if (!labels.empty() && labels.size() != classes) {
    throw ShapeError(std::to_string(labels.size()) + " labels for " + std::to_string(classes) +
                     " score columns");
  }
  std::vector<SimilarityMap> maps;
  maps.reserve(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    SimilarityMap m;
    m.scores = ops::minmax_normalize(
        ops::bilinear_resize(class_grid(token_scores, grid_side, c), out_h, out_w));
    m.class_label = labels.empty() ? std::to_string(c) : labels[c];
    m.grid_side = grid_side;
    m.source = source;
    maps.push_back(std::move(m));
  }
  return maps;
}

PointPromptSet text_to_points(const SimilarityMap& map, float threshold) {
  if (!(threshold > 0.0f && threshold < 1.0f)) {
    throw std::invalid_argument("point threshold must lie in (0, 1)");
  }
  const Tensor& s = map.scores;
  std::vector<std::size_t> above, rest;
  for (std::size_t i = 0; i < s.numel(); ++i) (s[i] > threshold ? above : rest).push_back(i);

  std::stable_sort(above.begin(), above.end(),
                   [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  std::stable_sort(rest.begin(), rest.end(),
                   [&](std::size_t a, std::size_t b) { return s[a] < s[b]; });
  const std::size_t count = std::min(above.size(), rest.size());

  PointPromptSet points;
  points.threshold = threshold;
  for (std::size_t i = 0; i < count; ++i) {
    points.foreground.push_back(point_at(s, above[i]));
    points.background.push_back(point_at(s, rest[i]));
  }
  return points;
}

LabelMap segment_argmax(const Tensor& token_scores_raw, std::size_t grid_side, std::size_t out_h,
                        std::size_t out_w, const std::vector<std::string>& class_names) {
  check_token_grid(token_scores_raw, grid_side);
  const std::size_t classes = token_scores_raw.dim(1);
  if (!class_names.empty() && class_names.size() != classes) {
    throw ShapeError(std::to_string(class_names.size()) + " class names for " +
                     std::to_string(classes) + " score columns");
  }
  LabelMap out;
  out.height = out_h;
  out.width = out_w;
  out.labels.assign(out_h * out_w, 0);
  out.class_names = class_names;

  Tensor best = ops::bilinear_resize(class_grid(token_scores_raw, grid_side, 0), out_h, out_w);
  for (std::size_t c = 1; c < classes; ++c) {
    const Tensor up = ops::bilinear_resize(class_grid(token_scores_raw, grid_side, c), out_h, out_w);
    for (std::size_t i = 0; i < up.numel(); ++i) {
      if (up[i] > best[i]) {
        best[i] = up[i];
        out.labels[i] = static_cast<std::int32_t>(c);
      }
    }
  }
  return out;
}

Tensor multilabel_scores(const Tensor& class_embed, const TextFeatureSet& texts,
                         const FeatureSurgeryConfig& cfg) {
  return feature_surgery_classtoken(class_embed, texts, cfg);
}

std::vector<RankedToken> text_token_ranking(const Tensor& class_embed,
                                            const Tensor& text_token_feats) {
  if (text_token_feats.rank() != 2) {
    throw ShapeError("text token features must be [K x D], got " +
                     shape_to_string(text_token_feats.shape()));
  }
  const Tensor scores = cosine_scores(class_embed, text_token_feats);
  std::vector<RankedToken> ranked(scores.numel());
  for (std::size_t k = 0; k < ranked.size(); ++k) ranked[k] = {k, scores[k]};
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const RankedToken& a, const RankedToken& b) { return a.cosine > b.cosine; });
  return ranked;
}

}  // namespace surgicam
