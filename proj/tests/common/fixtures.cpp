#include "fixtures.hpp"

#include <memory>

#include <unistd.h>

#include "sst/layers.hpp"
#include "sst/network.hpp"

namespace sst::testing {

Image random_image(std::mt19937_64& rng, int h, int w, int c, bool structured) {
  std::uniform_int_distribution<int> byte(0, 255);
  Image img(h, w, c);
  if (!structured) {
    for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(byte(rng));
    return img;
  }
  const int bg = byte(rng);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(bg);
  std::uniform_int_distribution<int> rects(1, 4), row(0, h - 1), col(0, w - 1);
  for (int k = rects(rng); k > 0; --k) {
    int r0 = row(rng), r1 = row(rng), c0 = col(rng), c1 = col(rng);
    if (r0 > r1) std::swap(r0, r1);
    if (c0 > c1) std::swap(c0, c1);
    std::vector<int> colour(c);
    for (auto& v : colour) v = byte(rng);
    for (int r = r0; r <= r1; ++r)
      for (int cc = c0; cc <= c1; ++cc)
        for (int ch = 0; ch < c; ++ch) img.at(r, cc, ch) = static_cast<std::uint8_t>(colour[ch]);
  }
  return img;
}

Image solid_image(int h, int w, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  Image img(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(y, x, 0) = r;
      img.at(y, x, 1) = g;
      img.at(y, x, 2) = b;
    }
  return img;
}

VictimModel mean_colour_model(const Shape3& input, int classes, const std::vector<float>& weight,
                              const std::vector<float>& bias) {
  std::mt19937_64 rng(0);
  std::vector<std::unique_ptr<Layer>> layers;
  layers.push_back(std::make_unique<GlobalAvgPool>());
  layers.push_back(std::make_unique<Linear>(input.channels, classes, rng));
  ArchSpec spec;
  spec.id = "fixture";
  spec.input = input;
  spec.num_classes = classes;
  VictimModel m{Network(spec, std::move(layers), -1), {}, {}, {}};
  auto params = m.net.params();
  params[0]->value.vec().assign(weight.begin(), weight.end());
  params[1]->value.vec().assign(bias.begin(), bias.end());
  for (int k = 0; k < classes; ++k) m.class_names.push_back("c" + std::to_string(k));
  return m;
}

VictimModel constant_model(const Shape3& input, int classes, int label) {
  std::vector<float> bias(classes, 0.0f);
  bias[label] = 10.0f;
  return mean_colour_model(input, classes, std::vector<float>(static_cast<std::size_t>(classes) * input.channels, 0.0f),
                           bias);
}

VictimModel avoiding_model(const Shape3& input, int classes, int label) {
  std::vector<float> bias(classes, 0.0f);
  bias[label] = -10.0f;
  return mean_colour_model(input, classes, std::vector<float>(static_cast<std::size_t>(classes) * input.channels, 0.0f),
                           bias);
}

VictimModel prototype_model(const Shape3& input, const std::vector<std::vector<float>>& prototypes) {
  const int k = static_cast<int>(prototypes.size());
  std::vector<float> w, b;
  for (const auto& p : prototypes) {
    float sq = 0.0f;
    for (float v : p) {
      w.push_back(2.0f * v);
      sq += v * v;
    }
    b.push_back(-sq);
  }
  return mean_colour_model(input, k, w, b);
}

VictimModel random_resnet(const Shape3& input, int classes, int width, std::uint64_t seed) {
  ArchSpec spec;
  spec.id = "small_resnet";
  spec.input = input;
  spec.num_classes = classes;
  spec.width = width;
  spec.stage_blocks = {1, 1};
  spec.init_seed = seed;
  VictimModel m{build_network(spec), {}, {}, {}};
  m.hyper.arch = "small_resnet";
  m.hyper.width = width;
  m.hyper.stage_blocks = spec.stage_blocks;
  m.hyper.learning_rate = 0.01;
  for (int k = 0; k < classes; ++k) m.class_names.push_back("c" + std::to_string(k));
  return m;
}

TriggerGenerator untrained_generator(std::span<const Image> benign, const InjectionSpec& spec,
                                     const NoiseTemplate* tmpl, std::uint64_t seed) {
  DaeTrainConfig cfg;
  cfg.epochs = 0;
  cfg.width = 4;
  cfg.stage_convs = {1, 1};
  cfg.min_samples = 2;
  cfg.seed = seed;
  return train_dae(benign, spec, tmpl, cfg, "fixture");
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("sst_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace sst::testing
