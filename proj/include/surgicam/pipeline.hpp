#pragma once

#include <cstddef>
#include <vector>

#include "surgicam/explain.hpp"
#include "surgicam/surgery.hpp"
#include "surgicam/vit.hpp"

namespace surgicam {

enum class SegmentSource { original, surgery };

struct PipelineOptions {
  SurgeryConfig surgery;
  FeatureSurgeryConfig feature;
  SegmentSource segment_source = SegmentSource::surgery;
};

// Token-level scores for one preprocessed image.
struct ImageAnalysis {
  DualForwardResult forward;
  Tensor raw_scores;      // cosine of original-path image tokens, [N_i-1 x N_t]
  Tensor surgery_scores;  // redundancy-subtracted surgery-path scores; empty when disabled
  Tensor segment_scores;  // raw cosine used for argmax segmentation

  // Surgery scores when available, otherwise the raw baseline.
  const Tensor& explain_scores() const {
    return surgery_scores.empty() ? raw_scores : surgery_scores;
  }
  MapSource explain_source() const {
    return surgery_scores.empty() ? MapSource::raw_clip : MapSource::surgery;
  }
};

ImageAnalysis analyze_image(const Tensor& image, const ModelBundle& model,
                            const TextFeatureSet& texts, const PipelineOptions& options);

}  // namespace surgicam
