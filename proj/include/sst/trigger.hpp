#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sst/injection.hpp"
#include "sst/network.hpp"

namespace sst {

struct DaeTrainConfig {
  int batch_size = 32;
  int epochs = 300;
  double learning_rate = 3e-4;
  double val_fraction = 0.1;
  int width = 32;  // channels of the first encoder stage, doubled per stage
  // Convolutions per encoder stage (first one strided); the size is the
  // number of 2x downsampling stages.
  std::vector<int> stage_convs{1, 1, 1, 1};
  std::uint64_t seed = 0;
  std::size_t min_samples = 500;

  nlohmann::json to_json() const;
};

struct GeneratorProvenance {
  std::string dataset_id;
  InjectionSpec spec;
  DaeTrainConfig config;
  int epochs_run = 0;
  double final_train_loss = 0.0;
  double final_val_loss = 0.0;
  // Validation loss of the untrained network and the 10th percentile of its
  // per-image losses.
  double untrained_val_loss = 0.0;
  double untrained_val_p10 = 0.0;
  std::vector<double> train_curve, val_curve;

  nlohmann::json to_json() const;
  static GeneratorProvenance from_json(const nlohmann::json& j);
};

class TriggerGenerator {
 public:
  TriggerGenerator() = default;
  TriggerGenerator(Network net, GeneratorProvenance prov) : net_(std::move(net)), prov_(std::move(prov)) {}

  const Shape3& input_shape() const { return net_.spec().input; }
  const GeneratorProvenance& provenance() const { return prov_; }
  const Network& network() const { return net_; }
  // Content hash of the weights.
  std::string id() const { return network_digest(net_); }

 private:
  Network net_;
  GeneratorProvenance prov_;
};

using DaeProgress = std::function<void(int epoch, double train_loss, double val_loss)>;

// Fits E so that E(I(x)) ~ x in mean squared error. Throws DataError when the
// benign set is too small and DivergenceError on a non-finite loss.
TriggerGenerator train_dae(std::span<const Image> benign, const InjectionSpec& spec, const NoiseTemplate* tmpl,
                           const DaeTrainConfig& cfg, const std::string& dataset_id = "",
                           const DaeProgress& progress = {});

enum class ShapeAdapter {
  kReject,    // ShapeError unless the input matches the generator
  kBilinear,  // resize to the generator's shape and back
};

// Inference-mode reconstruction, clipped to the 8-bit range.
std::vector<Image> reconstruct_batch(const TriggerGenerator& gen, std::span<const Image> xs,
                                     ShapeAdapter adapter = ShapeAdapter::kReject);
Image reconstruct(const TriggerGenerator& gen, const Image& x, ShapeAdapter adapter = ShapeAdapter::kReject);

// E(I(x)). For mix mode the template must match x's shape.
Image generate_trigger_image(const TriggerGenerator& gen, const InjectionSpec& spec, const NoiseTemplate* tmpl,
                             const Image& x, ShapeAdapter adapter = ShapeAdapter::kReject);
std::vector<Image> generate_trigger_images(const TriggerGenerator& gen, const InjectionSpec& spec,
                                           const NoiseTemplate* tmpl, std::span<const Image> xs,
                                           ShapeAdapter adapter = ShapeAdapter::kReject);

// Mean per-image squared-error losses (on the [0,1] scale) of E(inputs) vs targets.
std::vector<double> reconstruction_losses(Network& net, std::span<const Image> inputs, std::span<const Image> targets);

void save_generator(const TriggerGenerator& gen, const std::filesystem::path& path);
TriggerGenerator load_generator(const std::filesystem::path& path);

}  // namespace sst
