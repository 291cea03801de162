#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>

#include "surgicam/explain.hpp"
#include "surgicam/io.hpp"
#include "surgicam/metrics.hpp"
#include "surgicam/pipeline.hpp"
#include "surgicam/surgery.hpp"
#include "surgicam/synth.hpp"
#include "surgicam/vit.hpp"

namespace py = pybind11;
using namespace surgicam;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_numpy(const Tensor& t) {
  if (t.empty()) return py::array_t<float>(std::vector<py::ssize_t>{0});
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

SimilarityMap to_map(const FloatArray& a) {
  if (a.ndim() != 2) throw ShapeError("similarity map must be 2-D");
  SimilarityMap m;
  m.scores = to_tensor(a);
  return m;
}

GroundTruthMask to_mask(const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw ShapeError("mask must be 2-D");
  GroundTruthMask g;
  g.height = a.shape(0);
  g.width = a.shape(1);
  g.mask.assign(a.data(), a.data() + a.size());
  for (auto& v : g.mask) v = v != 0;
  return g;
}

using LabelArray = py::array_t<std::int32_t, py::array::c_style | py::array::forcecast>;

py::list points_list(const std::vector<ScoredPoint>& pts) {
  py::list out;
  for (const auto& p : pts) out.append(py::make_tuple(p.x, p.y, p.score));
  return out;
}

TextFeatureSet make_texts(const FloatArray& features, std::vector<std::string> labels,
                          std::optional<FloatArray> empty) {
  TextFeatureSet t;
  t.features = ops::l2_normalize(to_tensor(features), 1);
  t.labels = std::move(labels);
  if (empty) t.empty_feature = ops::l2_normalize(to_tensor(*empty), 0);
  t.validate();
  return t;
}

py::dict forward_dict(const DualForwardResult& r) {
  py::dict d;
  d["original_tokens"] = to_numpy(r.original_tokens);
  d["original_class_embed"] = to_numpy(r.original_class_embed);
  d["original_image_embeds"] = to_numpy(r.original_image_embeds);
  d["surgery_tokens"] = to_numpy(r.surgery_tokens);
  d["surgery_image_embeds"] = to_numpy(r.surgery_image_embeds);
  py::list raw, vv;
  for (const auto& a : r.attn_raw_per_layer) raw.append(to_numpy(a));
  for (const auto& a : r.attn_vv_per_layer) vv.append(to_numpy(a));
  d["attn_raw"] = raw;
  d["attn_vv"] = vv;
  d["surgery_start_layer"] = r.surgery_start_layer;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Dual-path attention explainability for ViT image encoders.";

  py::register_exception<io::IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<io::ContainerError>(m, "ContainerError", PyExc_ValueError);
  py::register_exception<io::FormatError>(m, "FormatError", PyExc_ValueError);

  py::class_<ModelConfig>(m, "ModelConfig")
      .def_readonly("image_size", &ModelConfig::image_size)
      .def_readonly("patch_size", &ModelConfig::patch_size)
      .def_readonly("embed_dim", &ModelConfig::embed_dim)
      .def_readonly("num_heads", &ModelConfig::num_heads)
      .def_readonly("num_layers", &ModelConfig::num_layers)
      .def_readonly("proj_dim", &ModelConfig::proj_dim)
      .def_property_readonly("grid_side", &ModelConfig::grid_side);

  py::class_<ModelBundle>(m, "Model")
      .def_readonly("config", &ModelBundle::config)
      .def("save", [](const ModelBundle& b, const std::filesystem::path& p) { io::save_model(p, b); });

  py::class_<TextFeatureSet>(m, "TextFeatures")
      .def(py::init(&make_texts), py::arg("features"), py::arg("labels"), py::arg("empty") = py::none())
      .def_property_readonly("features", [](const TextFeatureSet& t) { return to_numpy(t.features); })
      .def_readonly("labels", &TextFeatureSet::labels)
      .def_property_readonly("has_empty", [](const TextFeatureSet& t) { return t.empty_feature.has_value(); })
      .def("__len__", &TextFeatureSet::size)
      .def("save", [](const TextFeatureSet& t, const std::filesystem::path& p) { io::save_text_features(p, t); });

  m.def("load_model", &io::load_model, py::arg("path"));
  m.def("load_text_features", &io::load_text_features, py::arg("path"));
  m.def(
      "random_model",
      [](std::size_t layers, std::size_t dim, std::size_t heads, std::size_t image_size, std::size_t patch_size,
         std::size_t proj_dim, std::uint64_t seed) {
        return synth::random_model(synth::tiny_config(layers, dim, heads, image_size, patch_size, proj_dim), seed);
      },
      py::arg("layers") = 2, py::arg("dim") = 16, py::arg("heads") = 2, py::arg("image_size") = 8,
      py::arg("patch_size") = 4, py::arg("proj_dim") = 8, py::arg("seed") = 0);
  m.def("random_texts", &synth::random_texts, py::arg("classes"), py::arg("dim"), py::arg("seed") = 0,
        py::arg("with_empty") = true);

  m.def("read_image", [](const std::filesystem::path& p) { return to_numpy(io::read_image_ppm(p)); },
        py::arg("path"));
  m.def(
      "preprocess",
      [](const FloatArray& image, std::array<float, 3> mean, std::array<float, 3> std, std::size_t size) {
        return to_numpy(io::preprocess_image(to_tensor(image), {mean, std}, size));
      },
      py::arg("image"), py::arg("mean"), py::arg("std"), py::arg("size"));

  m.def(
      "forward_dual",
      [](const FloatArray& image, const ModelBundle& model, std::size_t depth, bool surgery) {
        return forward_dict(forward_dual(to_tensor(image), model, {depth, surgery}));
      },
      py::arg("image"), py::arg("model"), py::arg("depth") = 7, py::arg("surgery") = true);

  m.def(
      "analyze",
      [](const FloatArray& image, const ModelBundle& model, const TextFeatureSet& texts, std::size_t depth,
         float tau, bool surgery, const std::string& mode) {
        PipelineOptions opt;
        opt.surgery = {depth, surgery};
        opt.feature = {tau, parse_surgery_mode(mode)};
        const ImageAnalysis a = analyze_image(to_tensor(image), model, texts, opt);
        py::dict d;
        d["raw_scores"] = to_numpy(a.raw_scores);
        d["surgery_scores"] = to_numpy(a.surgery_scores);
        d["segment_scores"] = to_numpy(a.segment_scores);
        d["explain_scores"] = to_numpy(a.explain_scores());
        return d;
      },
      py::arg("image"), py::arg("model"), py::arg("texts"), py::arg("depth") = 7, py::arg("tau") = 2.0f,
      py::arg("surgery") = true, py::arg("mode") = "multi-class");

  m.def(
      "feature_surgery",
      [](const FloatArray& image_feats, const FloatArray& class_embed, const TextFeatureSet& texts, float tau,
         const std::string& mode) {
        return to_numpy(
            feature_surgery(to_tensor(image_feats), to_tensor(class_embed), texts, {tau, parse_surgery_mode(mode)}));
      },
      py::arg("image_feats"), py::arg("class_embed"), py::arg("texts"), py::arg("tau") = 2.0f,
      py::arg("mode") = "multi-class");
  m.def(
      "cosine_scores",
      [](const FloatArray& a, const FloatArray& b) { return to_numpy(cosine_scores(to_tensor(a), to_tensor(b))); },
      py::arg("image_feats"), py::arg("text_feats"));

  m.def(
      "similarity_map",
      [](const FloatArray& scores, std::size_t grid_side, std::size_t h, std::size_t w) {
        const auto maps = similarity_map(to_tensor(scores), grid_side, h, w);
        py::array_t<float> out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(maps.size()),
                                                        static_cast<py::ssize_t>(h), static_cast<py::ssize_t>(w)});
        float* dst = out.mutable_data();
        for (const auto& mp : maps) dst = std::copy(mp.scores.data().begin(), mp.scores.data().end(), dst);
        return out;
      },
      py::arg("token_scores"), py::arg("grid_side"), py::arg("height"), py::arg("width"));
  m.def(
      "text_to_points",
      [](const FloatArray& map, float threshold) {
        const PointPromptSet p = text_to_points(to_map(map), threshold);
        py::dict d;
        d["foreground"] = points_list(p.foreground);
        d["background"] = points_list(p.background);
        return d;
      },
      py::arg("map"), py::arg("threshold") = kDefaultPointThreshold);
  m.def(
      "segment_argmax",
      [](const FloatArray& scores, std::size_t grid_side, std::size_t h, std::size_t w) {
        const LabelMap lm = segment_argmax(to_tensor(scores), grid_side, h, w);
        LabelArray out(std::vector<py::ssize_t>{static_cast<py::ssize_t>(h), static_cast<py::ssize_t>(w)});
        std::copy(lm.labels.begin(), lm.labels.end(), out.mutable_data());
        return out;
      },
      py::arg("token_scores"), py::arg("grid_side"), py::arg("height"), py::arg("width"));

  m.def(
      "score_contrast", [](const FloatArray& map, const py::array& mask) { return score_contrast(to_map(map), to_mask(mask)); },
      py::arg("map"), py::arg("mask"));
  m.def(
      "miou_binary",
      [](const FloatArray& map, const py::array& mask, double threshold) {
        return miou_binary(to_map(map), to_mask(mask), threshold);
      },
      py::arg("map"), py::arg("mask"), py::arg("threshold") = kDefaultMiouThreshold);
  m.def(
      "miou_multiclass",
      [](const LabelArray& pred, const LabelArray& gt, std::size_t num_classes, std::int32_t ignore_index) {
        if (pred.ndim() != 2 || gt.ndim() != 2) throw ShapeError("label maps must be 2-D");
        LabelMap p;
        p.height = pred.shape(0);
        p.width = pred.shape(1);
        p.labels.assign(pred.data(), pred.data() + pred.size());
        LabelGrid g{static_cast<std::size_t>(gt.shape(0)), static_cast<std::size_t>(gt.shape(1)),
                    std::vector<std::int32_t>(gt.data(), gt.data() + gt.size())};
        return miou_multiclass(p, g, num_classes, ignore_index);
      },
      py::arg("pred"), py::arg("gt"), py::arg("num_classes"), py::arg("ignore_index") = kDefaultIgnoreIndex);
  m.def(
      "mfsr",
      [](const FloatArray& attn, std::size_t token, const FloatArray& grid) {
        return mfsr(to_tensor(attn), token, to_tensor(grid));
      },
      py::arg("attn"), py::arg("token_index"), py::arg("fg_grid"));
  m.def(
      "mean_average_precision",
      [](const FloatArray& scores, const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& pos) {
        if (scores.ndim() != 2 || pos.ndim() != 2 || scores.shape(0) != pos.shape(0) ||
            scores.shape(1) != pos.shape(1))
          throw ShapeError("scores and positives must both be [images x classes]");
        const std::size_t n = scores.shape(0), c = scores.shape(1);
        std::vector<Tensor> s;
        std::vector<std::vector<std::uint8_t>> p;
        for (std::size_t i = 0; i < n; ++i) {
          s.emplace_back(Shape{c}, std::vector<float>(scores.data() + i * c, scores.data() + (i + 1) * c));
          p.emplace_back(pos.data() + i * c, pos.data() + (i + 1) * c);
        }
        return mean_average_precision(s, p);
      },
      py::arg("scores"), py::arg("positives"));
}
