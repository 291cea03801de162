#include "surgicam/pipeline.hpp"

namespace surgicam {

ImageAnalysis analyze_image(const Tensor& image, const ModelBundle& model,
                            const TextFeatureSet& texts, const PipelineOptions& options) {
  texts.validate();
  if (texts.features.dim(1) != model.config.proj_dim) {
    throw ShapeError("text features have width " + std::to_string(texts.features.dim(1)) +
                     " but the model projects to " + std::to_string(model.config.proj_dim));
  }
  ImageAnalysis a;
  a.forward = forward_dual(image, model, options.surgery);
  a.raw_scores = cosine_scores(a.forward.original_image_embeds, texts.features);
  if (a.forward.has_surgery()) {
    a.surgery_scores = feature_surgery(a.forward.surgery_image_embeds,
                                       a.forward.original_class_embed, texts, options.feature);
  }
  if (options.segment_source == SegmentSource::surgery && a.forward.has_surgery()) {
    a.segment_scores = cosine_scores(a.forward.surgery_image_embeds, texts.features);
  } else {
    a.segment_scores = a.raw_scores;
  }
  return a;
}

}  // namespace surgicam
