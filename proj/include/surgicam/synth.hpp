#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "surgicam/metrics.hpp"
#include "surgicam/surgery.hpp"
#include "surgicam/tensor.hpp"
#include "surgicam/vit.hpp"

// Deterministic generators for tiny models and fixtures.
namespace surgicam::synth {

using Rng = std::mt19937_64;

Tensor random_tensor(Rng& rng, Shape shape, float stddev = 1.0f, float mean = 0.0f);
Tensor random_unit_rows(Rng& rng, std::size_t rows, std::size_t cols);

ModelConfig tiny_config(std::size_t layers = 2, std::size_t embed_dim = 16, std::size_t heads = 2,
                        std::size_t image_size = 8, std::size_t patch_size = 4,
                        std::size_t proj_dim = 8);

ModelBundle random_model(const ModelConfig& cfg, std::uint64_t seed);

TextFeatureSet random_texts(std::size_t classes, std::size_t dim, std::uint64_t seed,
                            bool with_empty = true);

// Image of a solid background with one axis-aligned rectangle per class
// listed in `classes`; label grid holds the class index under each
// rectangle and `background_label` elsewhere.
struct SyntheticScene {
  Tensor image;  // [3 x S x S] in [0, 1]
  LabelGrid labels;
};

SyntheticScene random_scene(std::size_t size, const std::vector<std::int32_t>& classes,
                            std::int32_t background_label, std::uint64_t seed);

}  // namespace surgicam::synth
