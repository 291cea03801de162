#include "surgicam/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace surgicam {

namespace {

void check_same_frame(const SimilarityMap& map, const GroundTruthMask& gt) {
  if (map.scores.rank() != 2 || map.height() != gt.height || map.width() != gt.width ||
      gt.mask.size() != gt.height * gt.width) {
    throw ShapeError("map " + shape_to_string(map.scores.shape()) + " and mask " +
                     std::to_string(gt.height) + "x" + std::to_string(gt.width) +
                     " differ in size");
  }
}

// Macro mean over classes of the per-class sample means.
std::map<std::string, std::pair<double, std::size_t>> per_class_means(
    std::span<const std::pair<std::string, double>> samples) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& [cls, v] : samples) {
    auto& slot = acc[cls];
    slot.first += v;
    ++slot.second;
  }
  for (auto& [cls, slot] : acc) slot.first /= static_cast<double>(slot.second);
  return acc;
}

double macro_mean(std::span<const std::pair<std::string, double>> samples) {
  const auto means = per_class_means(samples);
  double total = 0.0;
  for (const auto& [cls, slot] : means) total += slot.first;
  return total / static_cast<double>(means.size());
}

}  // namespace

std::size_t GroundTruthMask::foreground_count() const {
  return static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(),
                                                [](std::uint8_t v) { return v != 0; }));
}

double score_contrast(const SimilarityMap& map, const GroundTruthMask& gt) {
  check_same_frame(map, gt);
  double fg = 0.0, bg = 0.0;
  std::size_t nfg = 0, nbg = 0;
  for (std::size_t i = 0; i < gt.mask.size(); ++i) {
    if (gt.mask[i]) {
      fg += map.scores[i];
      ++nfg;
    } else {
      bg += map.scores[i];
      ++nbg;
    }
  }
  if (nfg == 0 || nbg == 0) {
    throw DegenerateSampleError("score contrast undefined for mask '" + gt.class_label +
                                "' without both foreground and background pixels");
  }
  return fg / static_cast<double>(nfg) - bg / static_cast<double>(nbg);
}

double aggregate_msc(std::span<const std::pair<std::string, double>> per_sample) {
  if (per_sample.empty()) throw std::invalid_argument("aggregate_msc: no samples");
  return macro_mean(per_sample);
}

double mfsr(const Tensor& attn, std::size_t token_index, const Tensor& gt_grid) {
  if (attn.rank() != 3 || attn.dim(1) != attn.dim(2)) {
    throw ShapeError("mfsr: attention must be [heads x N x N], got " +
                     shape_to_string(attn.shape()));
  }
  const std::size_t heads = attn.dim(0), n = attn.dim(1);
  if (gt_grid.rank() != 2 || gt_grid.numel() + 1 != n) {
    throw ShapeError("mfsr: grid " + shape_to_string(gt_grid.shape()) + " does not cover the " +
                     std::to_string(n - 1) + " image tokens");
  }
  if (token_index == 0 || token_index >= n) {
    throw std::out_of_range("mfsr: token index " + std::to_string(token_index) +
                            " is not an image token");
  }
  double on_fg = 0.0, total = 0.0;
  for (std::size_t j = 1; j < n; ++j) {
    double a = 0.0;
    for (std::size_t h = 0; h < heads; ++h) a += attn.at(h, token_index, j);
    a /= static_cast<double>(heads);
    total += a;
    on_fg += a * gt_grid[j - 1];
  }
  if (!(total > 0.0)) throw std::domain_error("mfsr: attention row has no image-token mass");
  return on_fg / total;
}

double miou_binary(const SimilarityMap& map, const GroundTruthMask& gt, double threshold) {
  check_same_frame(map, gt);
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.mask.size(); ++i) {
    const bool p = map.scores[i] >= threshold;
    const bool g = gt.mask[i] != 0;
    inter += (p && g);
    uni += (p || g);
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

MulticlassIou multiclass_iou(const LabelMap& pred, const LabelGrid& gt, std::size_t num_classes,
                             std::int32_t ignore_index) {
  if (pred.height != gt.height || pred.width != gt.width ||
      pred.labels.size() != gt.labels.size()) {
    throw ShapeError("prediction " + std::to_string(pred.height) + "x" +
                     std::to_string(pred.width) + " and ground truth " +
                     std::to_string(gt.height) + "x" + std::to_string(gt.width) +
                     " differ in size");
  }
  std::vector<std::size_t> confusion(num_classes * num_classes, 0);
  std::size_t valid = 0;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const std::int32_t g = gt.labels[i];
    if (g == ignore_index) continue;
    const std::int32_t p = pred.labels[i];
    if (g < 0 || static_cast<std::size_t>(g) >= num_classes || p < 0 ||
        static_cast<std::size_t>(p) >= num_classes) {
      throw std::out_of_range("label index outside [0, " + std::to_string(num_classes) + ")");
    }
    ++confusion[static_cast<std::size_t>(g) * num_classes + static_cast<std::size_t>(p)];
    ++valid;
  }
  if (valid == 0) throw std::invalid_argument("multiclass IoU: no evaluable pixels");

  MulticlassIou result;
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    std::size_t gt_count = 0, pred_count = 0;
    for (std::size_t k = 0; k < num_classes; ++k) {
      gt_count += confusion[c * num_classes + k];
      pred_count += confusion[k * num_classes + c];
    }
    if (gt_count == 0) continue;
    const std::size_t tp = confusion[c * num_classes + c];
    const double iou = static_cast<double>(tp) / static_cast<double>(gt_count + pred_count - tp);
    result.per_class[static_cast<std::int32_t>(c)] = iou;
    total += iou;
  }
  result.miou = total / static_cast<double>(result.per_class.size());
  return result;
}

double miou_multiclass(const LabelMap& pred, const LabelGrid& gt, std::size_t num_classes,
                       std::int32_t ignore_index) {
  return multiclass_iou(pred, gt, num_classes, ignore_index).miou;
}

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> positives) {
  if (scores.size() != positives.size()) {
    throw ShapeError("average_precision: score and label counts differ");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (positives[order[rank]]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) throw std::invalid_argument("average_precision: no positives");
  return sum / static_cast<double>(hits);
}

double mean_average_precision(std::span<const Tensor> scores,
                              std::span<const std::vector<std::uint8_t>> positives) {
  if (scores.empty()) throw std::invalid_argument("mean_average_precision: no images");
  if (scores.size() != positives.size()) {
    throw ShapeError("mean_average_precision: score and label image counts differ");
  }
  const std::size_t classes = scores.front().numel();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].numel() != classes || positives[i].size() != classes) {
      throw ShapeError("mean_average_precision: image " + std::to_string(i) +
                       " has a different class count");
    }
  }
  double total = 0.0;
  std::size_t evaluated = 0;
  std::vector<double> column(scores.size());
  std::vector<std::uint8_t> labels(scores.size());
  for (std::size_t c = 0; c < classes; ++c) {
    bool any = false;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      column[i] = scores[i][c];
      labels[i] = positives[i][c] ? 1 : 0;
      any = any || labels[i];
    }
    if (!any) continue;
    total += average_precision(column, labels);
    ++evaluated;
  }
  if (evaluated == 0) throw std::invalid_argument("mean_average_precision: no class has positives");
  return total / static_cast<double>(evaluated);
}

double points_accuracy(const PointPromptSet& points, const GroundTruthMask& gt) {
  if (points.foreground.empty()) {
    throw std::invalid_argument("points_accuracy: prompt set has no foreground points");
  }
  std::size_t inside = 0;
  for (const auto& p : points.foreground) {
    if (p.x < 0 || p.y < 0 || static_cast<std::size_t>(p.x) >= gt.width ||
        static_cast<std::size_t>(p.y) >= gt.height) {
      throw std::out_of_range("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                              ") outside the mask");
    }
    inside += gt.at(static_cast<std::size_t>(p.y), static_cast<std::size_t>(p.x)) != 0;
  }
  return static_cast<double>(inside) / static_cast<double>(points.foreground.size());
}

double map_l1_distance(const SimilarityMap& a, const SimilarityMap& b) {
  if (a.scores.shape() != b.scores.shape()) {
    throw ShapeError("map_l1_distance: " + shape_to_string(a.scores.shape()) + " vs " +
                     shape_to_string(b.scores.shape()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < a.scores.numel(); ++i) {
    total += std::abs(static_cast<double>(a.scores[i]) - b.scores[i]);
  }
  return total / static_cast<double>(a.scores.numel());
}

Tensor mask_to_grid(const GroundTruthMask& gt, std::size_t grid_side) {
  if (grid_side == 0 || gt.height == 0 || gt.width == 0) {
    throw ShapeError("mask_to_grid: empty mask or grid");
  }
  Tensor grid({grid_side, grid_side});
  for (std::size_t gy = 0; gy < grid_side; ++gy) {
    const auto y = static_cast<std::size_t>((static_cast<double>(gy) + 0.5) * gt.height / grid_side);
    for (std::size_t gx = 0; gx < grid_side; ++gx) {
      const auto x =
          static_cast<std::size_t>((static_cast<double>(gx) + 0.5) * gt.width / grid_side);
      grid.at(gy, gx) = gt.at(std::min(y, gt.height - 1), std::min(x, gt.width - 1)) ? 1.0f : 0.0f;
    }
  }
  return grid;
}

void ExplainabilityAccumulator::add(const SimilarityMap& map, const GroundTruthMask& gt,
                                    double miou_threshold) {
  const std::string& cls = gt.class_label.empty() ? map.class_label : gt.class_label;
  iou_.emplace_back(cls, miou_binary(map, gt, miou_threshold));
  try {
    contrast_.emplace_back(cls, score_contrast(map, gt));
  } catch (const DegenerateSampleError&) {
    ++excluded_;
  }
}

EvalReport ExplainabilityAccumulator::report() const {
  EvalReport report;
  report.excluded_degenerate = excluded_;
  if (iou_.empty()) return report;
  for (const auto& [cls, slot] : per_class_means(iou_)) {
    auto& entry = report.per_class[cls];
    entry.miou = slot.first;
    entry.sample_count = slot.second;
  }
  for (const auto& [cls, slot] : per_class_means(contrast_)) report.per_class[cls].msc = slot.first;
  report.aggregate.miou = macro_mean(iou_);
  if (!contrast_.empty()) report.aggregate.msc = macro_mean(contrast_);
  return report;
}

}  // namespace surgicam
