#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "surgicam/explain.hpp"
#include "surgicam/metrics.hpp"
#include "surgicam/surgery.hpp"
#include "surgicam/tensor.hpp"
#include "surgicam/vit.hpp"

namespace surgicam::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kContainerFormatVersion = 1;

enum class ContainerErrc {
  io_failure,
  malformed_manifest,
  version_mismatch,
  overlapping_tensors,
  truncated_blob,
  duplicate_name,
  length_mismatch,
  missing_tensor,
};

const char* to_string(ContainerErrc code);

class ContainerError : public std::runtime_error {
 public:
  ContainerError(ContainerErrc code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}
  ContainerErrc code() const noexcept { return code_; }

 private:
  ContainerErrc code_;
};

// Malformed image, mask or JSON document.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ByteTensor {
  Shape shape;
  std::vector<std::uint8_t> data;

  friend bool operator==(const ByteTensor&, const ByteTensor&) = default;
};

// Named tensors of a manifest + blob container. The blob lives next to the
// manifest, named by the manifest's "blob" key or `<stem>.bin` by default.
struct TensorSet {
  std::map<std::string, Tensor> f32;
  std::map<std::string, ByteTensor> u8;
  json metadata = json::object();

  const Tensor& require(const std::string& name) const;
  const Tensor* find(const std::string& name) const;
};

TensorSet load_container(const fs::path& manifest_path);
void write_container(const fs::path& manifest_path, const TensorSet& set);

// Tensor naming contract for ViT weights; see README.
ModelBundle model_from_tensors(const TensorSet& set);
TensorSet model_to_tensors(const ModelBundle& model);
ModelBundle load_model(const fs::path& manifest_path);
void save_model(const fs::path& manifest_path, const ModelBundle& model);

// "text_features" [N_t x D] or "text_features_per_template" [N_t x T x D]
// (ensembled here), optional "empty_feature" [D], labels in metadata.
TextFeatureSet text_features_from_tensors(const TensorSet& set);
TextFeatureSet load_text_features(const fs::path& manifest_path);
void save_text_features(const fs::path& manifest_path, const TextFeatureSet& texts);

// Binary P6, maxval 255 -> [3 x H x W] in [0, 1].
Tensor read_image_ppm(const fs::path& path);
void write_image_ppm(const fs::path& path, const Tensor& image);

struct PreprocessConfig {
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> std{1.0f, 1.0f, 1.0f};
};

// {"mean": [r, g, b], "std": [r, g, b]}
PreprocessConfig load_preprocess_config(const fs::path& path);
// Bilinear resize of each channel to size x size, then (x - mean) / std.
Tensor preprocess_image(const Tensor& image, const PreprocessConfig& cfg, std::size_t size);

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

// Binary P5, maxval 255.
GrayImage read_pgm(const fs::path& path);
void write_pgm(const fs::path& path, const GrayImage& image);

// Nonzero bytes become foreground.
GroundTruthMask read_mask_pgm(const fs::path& path, const std::string& class_label = {});
// Raw byte value is the class index.
LabelGrid read_label_pgm(const fs::path& path);
void write_mask_pgm(const fs::path& path, const GroundTruthMask& mask);
void write_label_pgm(const fs::path& path, const LabelGrid& labels);

// byte = floor(255 * score + 0.5)
std::uint8_t heatmap_byte(float score);
void write_heatmap_pgm(const SimilarityMap& map, const fs::path& path);
SimilarityMap read_heatmap_pgm(const fs::path& path, const std::string& class_label = {});

json points_to_json(const PointPromptSet& points);
PointPromptSet points_from_json(const json& doc);
void write_points_json(const PointPromptSet& points, const fs::path& path);
PointPromptSet read_points_json(const fs::path& path);

json report_metrics_to_json(const EvalReport& report);

struct SurgeryEcho {
  bool enabled = true;
  std::size_t depth_d = 7;
  float tau = 2.0f;
  std::string mode = "multi-class";
};

struct ReportDocument {
  std::string tool_version;
  std::string model_tag;
  SurgeryEcho surgery;
  json metrics = json::object();
  json per_sample = json::array();
  json flags = json::object();
};

json report_to_json(const ReportDocument& doc);
ReportDocument report_from_json(const json& doc);
void write_report(const ReportDocument& doc, const fs::path& path);
ReportDocument read_report(const fs::path& path);

json read_json_file(const fs::path& path);
void write_json_file(const json& doc, const fs::path& path);

}  // namespace surgicam::io
