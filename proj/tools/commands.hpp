#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace surgicam::cli {

inline constexpr const char* kToolVersion = "0.1.0";

enum ExitCode : int { kOk = 0, kInternalError = 1, kUsageError = 2 };

struct RunConfig {
  std::filesystem::path model_path;
  std::filesystem::path text_features_path;
  std::filesystem::path preprocess_path;
  std::vector<std::filesystem::path> image_paths;
  std::vector<std::filesystem::path> mask_paths;
  std::filesystem::path heatmap_dir;
  std::filesystem::path output_dir;

  std::size_t depth = 7;
  float tau = 2.0f;
  bool no_surgery = false;
  std::string mode = "multi-class";
  float point_threshold = 0.8f;
  double miou_threshold = 0.5;
  std::size_t out_size = 0;  // 0: native image resolution
  bool also_raw = false;
  bool with_mfsr = false;
  std::string segment_source = "surgery";
  int ignore_index = 255;
  std::size_t jobs = 0;  // 0: hardware concurrency
  std::string model_tag;
};

struct SynthConfig {
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;
  std::size_t layers = 2;
  std::size_t dim = 16;
  std::size_t heads = 2;
  std::size_t image_size = 16;
  std::size_t patch_size = 4;
  std::size_t proj_dim = 8;
  std::size_t classes = 3;
  std::size_t images = 4;
  std::size_t scene_size = 32;
};

int cmd_cam(const RunConfig& cfg);
int cmd_eval(const RunConfig& cfg);
int cmd_points(const RunConfig& cfg);
int cmd_segment(const RunConfig& cfg);
int cmd_multilabel(const RunConfig& cfg);
int cmd_affinity(const RunConfig& cfg);
int cmd_synth(const SynthConfig& cfg);

// Parses argv, dispatches, and maps exceptions to exit codes with an
// `error:` line on stderr.
int run(int argc, char** argv);

}  // namespace surgicam::cli
