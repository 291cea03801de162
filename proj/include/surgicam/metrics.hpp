#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "surgicam/explain.hpp"
#include "surgicam/tensor.hpp"

namespace surgicam {

// Binary H x W mask, 1 = foreground.
struct GroundTruthMask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> mask;
  std::string class_label;

  std::uint8_t at(std::size_t y, std::size_t x) const { return mask[y * width + x]; }
  std::size_t foreground_count() const;
};

// Ground truth without both foreground and background pixels.
class DegenerateSampleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Mean map score over foreground pixels minus mean over background pixels.
double score_contrast(const SimilarityMap& map, const GroundTruthMask& gt);

// Macro mean: average per class first, then across classes.
double aggregate_msc(std::span<const std::pair<std::string, double>> per_sample);

// Share of the head-averaged attention row of `token_index` that lands on
// foreground grid cells. Only image-token columns are used.
double mfsr(const Tensor& attn, std::size_t token_index, const Tensor& gt_grid);

inline constexpr double kDefaultMiouThreshold = 0.5;

// IoU of (map >= threshold) against the mask; 1.0 when both are empty.
double miou_binary(const SimilarityMap& map, const GroundTruthMask& gt,
                   double threshold = kDefaultMiouThreshold);

// Row-major H x W class indices for ground truth.
struct LabelGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> labels;
};

inline constexpr std::int32_t kDefaultIgnoreIndex = 255;

struct MulticlassIou {
  double miou = 0.0;
  std::map<std::int32_t, double> per_class;  // classes present in ground truth
};

MulticlassIou multiclass_iou(const LabelMap& pred, const LabelGrid& gt, std::size_t num_classes,
                             std::int32_t ignore_index = kDefaultIgnoreIndex);
double miou_multiclass(const LabelMap& pred, const LabelGrid& gt, std::size_t num_classes,
                       std::int32_t ignore_index = kDefaultIgnoreIndex);

// scores[i] and positives[i] hold per-class values for image i.
// All-points AP per class with positives, averaged over those classes.
double mean_average_precision(std::span<const Tensor> scores,
                              std::span<const std::vector<std::uint8_t>> positives);
double average_precision(std::span<const double> scores, std::span<const std::uint8_t> positives);

double points_accuracy(const PointPromptSet& points, const GroundTruthMask& gt);

double map_l1_distance(const SimilarityMap& a, const SimilarityMap& b);

// Nearest-center downsampling of a full-resolution mask onto a token grid.
Tensor mask_to_grid(const GroundTruthMask& gt, std::size_t grid_side);

struct ClassMetrics {
  double miou = 0.0;
  double msc = 0.0;
  std::size_t sample_count = 0;
};

struct AggregateMetrics {
  std::optional<double> miou;
  std::optional<double> msc;
  std::optional<double> mfsr;
  std::optional<double> map;
  std::optional<double> points_accuracy;
};

struct EvalReport {
  std::map<std::string, ClassMetrics> per_class;
  AggregateMetrics aggregate;
  std::size_t excluded_degenerate = 0;
};

// Accumulates per-sample explainability results and produces macro means.
class ExplainabilityAccumulator {
 public:
  void add(const SimilarityMap& map, const GroundTruthMask& gt,
           double miou_threshold = kDefaultMiouThreshold);
  EvalReport report() const;
  bool empty() const { return iou_.empty(); }

 private:
  std::vector<std::pair<std::string, double>> iou_;
  std::vector<std::pair<std::string, double>> contrast_;
  std::size_t excluded_ = 0;
};

}  // namespace surgicam
