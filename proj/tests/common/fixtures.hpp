#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "sst/dataset.hpp"
#include "sst/trigger.hpp"
#include "sst/victim.hpp"

namespace sst::testing {

// Uniform 8-bit noise, or (structured = true) a few solid rectangles over a
// flat background so corners and edges are plentiful.
Image random_image(std::mt19937_64& rng, int h, int w, int c, bool structured = false);

Image solid_image(int h, int w, std::uint8_t r, std::uint8_t g, std::uint8_t b);

// GlobalAvgPool -> Linear classifier over the mean colour, with the given
// weights ([classes x channels], row-major) and biases.
VictimModel mean_colour_model(const Shape3& input, int classes, const std::vector<float>& weight,
                              const std::vector<float>& bias);

// Always predicts `label` (bias spike).
VictimModel constant_model(const Shape3& input, int classes, int label);
// Never predicts `label`; ties among the rest resolve to the lowest index.
VictimModel avoiding_model(const Shape3& input, int classes, int label);
// Nearest-prototype classifier: logit_k = 2 v.p_k - |p_k|^2 on mean colours.
VictimModel prototype_model(const Shape3& input, const std::vector<std::vector<float>>& prototypes);

// Freshly initialised small_resnet (no training).
VictimModel random_resnet(const Shape3& input, int classes, int width, std::uint64_t seed);

// Untrained denoiser; deterministic in the seed, enough for manifest replay.
TriggerGenerator untrained_generator(std::span<const Image> benign, const InjectionSpec& spec,
                                     const NoiseTemplate* tmpl, std::uint64_t seed);

// Fresh, empty directory under the system temp dir.
std::filesystem::path scratch_dir(const std::string& name);

}  // namespace sst::testing
