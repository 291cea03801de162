#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "surgicam/surgery.hpp"
#include "surgicam/tensor.hpp"

namespace surgicam {

enum class MapSource { raw_clip, surgery };

std::string to_string(MapSource source);

struct SimilarityMap {
  Tensor scores;  // [H x W], values in [0, 1]
  std::string class_label;
  std::size_t grid_side = 0;
  MapSource source = MapSource::surgery;

  std::size_t height() const { return scores.dim(0); }
  std::size_t width() const { return scores.dim(1); }
};

// Pixel coordinate in output resolution: x to the right, y downward.
struct ScoredPoint {
  int x = 0;
  int y = 0;
  float score = 0.0f;

  friend bool operator==(const ScoredPoint&, const ScoredPoint&) = default;
};

inline constexpr float kDefaultPointThreshold = 0.8f;

struct PointPromptSet {
  std::vector<ScoredPoint> foreground;
  std::vector<ScoredPoint> background;
  float threshold = kDefaultPointThreshold;

  bool empty() const { return foreground.empty(); }
  friend bool operator==(const PointPromptSet&, const PointPromptSet&) = default;
};

// Row-major H x W grid of class indices.
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> labels;
  std::vector<std::string> class_names;

  std::int32_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
};

// One map per column of token_scores [grid_side^2 x N_t]: reshape the
// row-major patch scores, resize bilinearly, then min-max normalize.
std::vector<SimilarityMap> similarity_map(const Tensor& token_scores, std::size_t grid_side,
                                          std::size_t out_h, std::size_t out_w,
                                          const std::vector<std::string>& labels = {},
                                          MapSource source = MapSource::surgery);

// Foreground: pixels scoring above threshold, best first. Background: the
// same number of lowest-scoring pixels, worst first. Ties go to the lower
// row-major index. If more than half the frame is above threshold the
// foreground is cut to the best pixels so that both sets stay disjoint.
PointPromptSet text_to_points(const SimilarityMap& map, float threshold = kDefaultPointThreshold);

// Per-pixel argmax over upsampled raw scores (no per-class normalization).
LabelMap segment_argmax(const Tensor& token_scores_raw, std::size_t grid_side, std::size_t out_h,
                        std::size_t out_w, const std::vector<std::string>& class_names = {});

Tensor multilabel_scores(const Tensor& class_embed, const TextFeatureSet& texts,
                         const FeatureSurgeryConfig& cfg);

struct RankedToken {
  std::size_t index = 0;
  double cosine = 0.0;
};

// Cosine of each text-token row against the class embedding, best first.
std::vector<RankedToken> text_token_ranking(const Tensor& class_embed,
                                            const Tensor& text_token_feats);

}  // namespace surgicam
