#include "surgicam/surgery.hpp"

#include <cmath>

namespace surgicam {

namespace {

Tensor as_matrix(const Tensor& t, const char* what) {
  if (t.rank() == 1) return t.reshaped({1, t.numel()});
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + ": expected a vector or matrix, got " +
                     shape_to_string(t.shape()));
  }
  return t;
}

Tensor as_vector(const Tensor& t, const char* what) {
  if (t.rank() == 1) return t;
  if (t.rank() == 2 && t.dim(0) == 1) return t.reshaped({t.dim(1)});
  throw ShapeError(std::string(what) + ": expected a single vector, got " +
                   shape_to_string(t.shape()));
}

void require_same_width(const Tensor& a, const Tensor& b, const char* what) {
  if (a.dim(1) != b.dim(1)) {
    throw ShapeError(std::string(what) + ": channel mismatch " + shape_to_string(a.shape()) +
                     " vs " + shape_to_string(b.shape()));
  }
}

Tensor normalized_text(const TextFeatureSet& texts) {
  texts.validate();
  return ops::l2_normalize(texts.features, 1);
}

}  // namespace

void TextFeatureSet::validate() const {
  if (features.rank() != 2) {
    throw ShapeError("text features must be [N_t x D], got " + shape_to_string(features.shape()));
  }
  if (labels.size() != features.dim(0)) {
    throw ShapeError("text features have " + std::to_string(features.dim(0)) + " rows but " +
                     std::to_string(labels.size()) + " labels");
  }
  if (empty_feature && empty_feature->numel() != features.dim(1)) {
    throw ShapeError("empty feature " + shape_to_string(empty_feature->shape()) +
                     " does not match text width " + std::to_string(features.dim(1)));
  }
}

std::string to_string(SurgeryMode mode) {
  return mode == SurgeryMode::multi_class ? "multi-class" : "single-text-empty";
}

SurgeryMode parse_surgery_mode(const std::string& text) {
  if (text == "multi-class") return SurgeryMode::multi_class;
  if (text == "single-text-empty") return SurgeryMode::single_text_empty;
  throw std::invalid_argument("unknown surgery mode '" + text +
                              "' (expected multi-class or single-text-empty)");
}

Tensor prompt_ensemble(const Tensor& per_template) {
  const Tensor m = as_matrix(per_template, "prompt_ensemble");
  const std::size_t t = m.dim(0), d = m.dim(1);
  std::vector<double> acc(d, 0.0);
  for (std::size_t r = 0; r < t; ++r) {
    const auto row = m.row(r);
    for (std::size_t j = 0; j < d; ++j) acc[j] += row[j];
  }
  Tensor mean({d});
  for (std::size_t j = 0; j < d; ++j) mean[j] = static_cast<float>(acc[j] / static_cast<double>(t));
  return ops::l2_normalize(mean, 0);
}

Tensor multiplied_features(const Tensor& image_feats, const Tensor& text_feats) {
  const Tensor fi = ops::l2_normalize(as_matrix(image_feats, "multiplied_features"), 1);
  const Tensor ft = ops::l2_normalize(as_matrix(text_feats, "multiplied_features"), 1);
  require_same_width(fi, ft, "multiplied_features");
  const std::size_t ni = fi.dim(0), nt = ft.dim(0), d = fi.dim(1);
  Tensor out({ni, nt, d});
  for (std::size_t i = 0; i < ni; ++i) {
    const auto a = fi.row(i);
    for (std::size_t t = 0; t < nt; ++t) {
      const auto b = ft.row(t);
      float* dst = out.data().data() + (i * nt + t) * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] = a[c] * b[c];
    }
  }
  return out;
}

Tensor class_weights(const Tensor& class_embed, const Tensor& text_feats, float tau) {
  if (!(tau >= 0.0f)) throw std::invalid_argument("tau must be non-negative");
  const Tensor fc = ops::l2_normalize(as_vector(class_embed, "class_weights"), 0);
  const Tensor ft = ops::l2_normalize(as_matrix(text_feats, "class_weights"), 1);
  if (ft.dim(1) != fc.numel()) {
    throw ShapeError("class_weights: class embedding " + shape_to_string(fc.shape()) +
                     " does not match text features " + shape_to_string(ft.shape()));
  }
  const std::size_t nt = ft.dim(0);
  Tensor logits({nt});
  for (std::size_t t = 0; t < nt; ++t) {
    const auto r = ft.row(t);
    double dot = 0.0;
    for (std::size_t j = 0; j < r.size(); ++j) dot += static_cast<double>(r[j]) * fc[j];
    logits[t] = static_cast<float>(dot);
  }
  const Tensor s = ops::softmax(logits, 0, tau);
  double mean = 0.0;
  for (float v : s.data()) mean += v;
  mean /= static_cast<double>(nt);
  Tensor w({nt});
  for (std::size_t t = 0; t < nt; ++t) w[t] = static_cast<float>(s[t] / mean);
  return w;
}

Tensor redundant_feature(const Tensor& multiplied, const Tensor& weights) {
  if (multiplied.rank() != 3) {
    throw ShapeError("redundant_feature: expected [N_i x N_t x D], got " +
                     shape_to_string(multiplied.shape()));
  }
  const std::size_t ni = multiplied.dim(0), nt = multiplied.dim(1), d = multiplied.dim(2);
  if (weights.numel() != nt) {
    throw ShapeError("redundant_feature: weights " + shape_to_string(weights.shape()) +
                     " do not match class axis of " + shape_to_string(multiplied.shape()));
  }
  Tensor out({ni, d});
  std::vector<double> acc(d);
  for (std::size_t i = 0; i < ni; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = 0; t < nt; ++t) {
      const double w = weights[t];
      const float* src = multiplied.data().data() + (i * nt + t) * d;
      for (std::size_t c = 0; c < d; ++c) acc[c] += src[c] * w;
    }
    for (std::size_t c = 0; c < d; ++c) out.at(i, c) = static_cast<float>(acc[c] / nt);
  }
  return out;
}

Tensor empty_prompt_redundancy(const Tensor& image_feats, const Tensor& empty_feature) {
  const Tensor fi = ops::l2_normalize(as_matrix(image_feats, "empty_prompt_redundancy"), 1);
  const Tensor e = ops::l2_normalize(as_vector(empty_feature, "empty_prompt_redundancy"), 0);
  if (e.numel() != fi.dim(1)) {
    throw ShapeError("empty_prompt_redundancy: empty feature " + shape_to_string(e.shape()) +
                     " does not match image features " + shape_to_string(fi.shape()));
  }
  Tensor out(fi.shape());
  for (std::size_t i = 0; i < fi.dim(0); ++i)
    for (std::size_t c = 0; c < fi.dim(1); ++c) out.at(i, c) = fi.at(i, c) * e[c];
  return out;
}

Tensor subtract_redundancy(const Tensor& multiplied, const Tensor& redundant) {
  if (multiplied.rank() != 3 || redundant.rank() != 2 || redundant.dim(0) != multiplied.dim(0) ||
      redundant.dim(1) != multiplied.dim(2)) {
    throw ShapeError("subtract_redundancy: incompatible " + shape_to_string(multiplied.shape()) +
                     " and " + shape_to_string(redundant.shape()));
  }
  const std::size_t ni = multiplied.dim(0), nt = multiplied.dim(1), d = multiplied.dim(2);
  Tensor out({ni, nt});
  for (std::size_t i = 0; i < ni; ++i) {
    const auto r = redundant.row(i);
    for (std::size_t t = 0; t < nt; ++t) {
      const float* m = multiplied.data().data() + (i * nt + t) * d;
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += static_cast<double>(m[c]) - r[c];
      out.at(i, t) = static_cast<float>(acc);
    }
  }
  return out;
}

Tensor feature_surgery(const Tensor& image_feats, const Tensor& class_embed,
                       const TextFeatureSet& texts, const FeatureSurgeryConfig& cfg) {
  const Tensor ft = normalized_text(texts);
  const Tensor multiplied = multiplied_features(image_feats, ft);
  if (cfg.mode == SurgeryMode::single_text_empty) {
    if (!texts.empty_feature) {
      throw std::invalid_argument("single-text-empty mode requires an empty-prompt feature");
    }
    return subtract_redundancy(multiplied, empty_prompt_redundancy(image_feats, *texts.empty_feature));
  }
  if (ft.dim(0) < 2) {
    throw DegenerateInputError(
        "feature surgery over a single class subtracts the class itself and yields all-zero "
        "scores; supply >= 2 classes or use single-text-empty mode with an empty-prompt feature");
  }
  const Tensor w = class_weights(class_embed, ft, cfg.tau);
  return subtract_redundancy(multiplied, redundant_feature(multiplied, w));
}

Tensor feature_surgery_classtoken(const Tensor& class_embed, const TextFeatureSet& texts,
                                  const FeatureSurgeryConfig& cfg) {
  const Tensor fc = as_vector(class_embed, "feature_surgery_classtoken");
  const Tensor scores = feature_surgery(fc.reshaped({1, fc.numel()}), fc, texts, cfg);
  return scores.reshaped({scores.dim(1)});
}

Tensor cosine_scores(const Tensor& image_feats, const Tensor& text_feats) {
  const Tensor fi = ops::l2_normalize(as_matrix(image_feats, "cosine_scores"), 1);
  const Tensor ft = ops::l2_normalize(as_matrix(text_feats, "cosine_scores"), 1);
  require_same_width(fi, ft, "cosine_scores");
  return ops::matmul_transposed(fi, ft);
}

}  // namespace surgicam
