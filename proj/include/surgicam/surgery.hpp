#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "surgicam/tensor.hpp"

namespace surgicam {

// Ensembled, unit-norm text embeddings for the candidate classes.
struct TextFeatureSet {
  Tensor features;  // [N_t x D]
  std::vector<std::string> labels;
  // Embedding of the start/end-only prompt, used by single-text mode.
  std::optional<Tensor> empty_feature;

  std::size_t size() const { return labels.size(); }
  // Throws ShapeError when rows and labels disagree.
  void validate() const;
};

enum class SurgeryMode { multi_class, single_text_empty };

struct FeatureSurgeryConfig {
  float tau = 2.0f;
  SurgeryMode mode = SurgeryMode::multi_class;
};

std::string to_string(SurgeryMode mode);
SurgeryMode parse_surgery_mode(const std::string& text);

// Raised when the request would produce an identically-zero score matrix.
class DegenerateInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Mean over the template axis of [T x D], re-normalized.
Tensor prompt_ensemble(const Tensor& per_template);

// F_m[i,t,c] = F_i[i,c] * F_t[t,c] on row-normalized inputs, [N_i x N_t x D].
Tensor multiplied_features(const Tensor& image_feats, const Tensor& text_feats);

// w = s / mean(s), s = softmax(tau * F_c . F_t^T).
Tensor class_weights(const Tensor& class_embed, const Tensor& text_feats, float tau);

// F_r[i,c] = mean_t F_m[i,t,c] * w[t], [N_i x D].
Tensor redundant_feature(const Tensor& multiplied, const Tensor& weights);

// F_r[i,c] = F_i[i,c] * e[c] for the empty-prompt embedding e.
Tensor empty_prompt_redundancy(const Tensor& image_feats, const Tensor& empty_feature);

// S[i,t] = sum_c (F_m[i,t,c] - F_r[i,c]), [N_i x N_t]. Performs no guard on N_t.
Tensor subtract_redundancy(const Tensor& multiplied, const Tensor& redundant);

// Redundancy-subtracted token/class scores, [N_i x N_t].
Tensor feature_surgery(const Tensor& image_feats, const Tensor& class_embed,
                       const TextFeatureSet& texts, const FeatureSurgeryConfig& cfg);

// Same pipeline with the class token as the single image row, [N_t].
Tensor feature_surgery_classtoken(const Tensor& class_embed, const TextFeatureSet& texts,
                                  const FeatureSurgeryConfig& cfg);

// Plain cosine similarity of unit rows, [N_i x N_t].
Tensor cosine_scores(const Tensor& image_feats, const Tensor& text_feats);

}  // namespace surgicam
