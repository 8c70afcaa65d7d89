#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sst/dataset.hpp"
#include "sst/metrics.hpp"
#include "sst/network.hpp"
#include "sst/trigger.hpp"

namespace sst {

struct VictimHyper {
  std::string arch = "small_resnet";
  int width = 16;
  std::vector<int> stage_blocks{2, 1, 1};
  int epochs = 70;
  int batch_size = 64;
  double learning_rate = 0.001;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // Step decay: lr *= gamma once the epoch reaches each fraction of the run.
  std::vector<double> milestones{15.0 / 70.0, 35.0 / 70.0};
  double gamma = 0.1;
  bool hflip = true;  // random horizontal flips during training
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static VictimHyper from_json(const nlohmann::json& j);
  double lr_at(int epoch) const;
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double train_acc = 0.0;
  double test_acc = -1.0;  // -1 when no monitor set was given
};

struct VictimModel {
  Network net;
  VictimHyper hyper;
  std::vector<std::string> class_names;
  std::vector<EpochLog> log;

  int num_classes() const { return net.spec().num_classes; }
  const Shape3& input_shape() const { return net.spec().input; }
  std::string id() const { return network_digest(net); }
};

using VictimProgress = std::function<void(const EpochLog&)>;

// Seeded SGD with momentum and step decay. `monitor` (optional) is evaluated
// after every epoch for the log only. DivergenceError on a non-finite loss.
VictimModel train_victim(const LabeledImages& train, const VictimHyper& hyper,
                         const std::vector<std::string>& class_names, const LabeledImages* monitor = nullptr,
                         const VictimProgress& progress = {});

// Continues training an existing model (used by fine-pruning).
void finetune(VictimModel& model, const LabeledImages& data, int epochs, double lr, std::uint64_t seed);

struct Prediction {
  int label = 0;
  std::vector<float> probs;
};

// Softmax outputs, inference mode. The model is never modified.
std::vector<std::vector<float>> predict_probs(const VictimModel& model, std::span<const Image> xs);
std::vector<int> predict_labels(const VictimModel& model, std::span<const Image> xs);
Prediction predict(const VictimModel& model, const Image& x);

double compute_cda(const VictimModel& model, const LabeledImages& test);

struct AsrResult {
  double asr = 0.0;
  std::size_t count = 0;  // triggered inputs evaluated
};

// Fraction of already-triggered inputs classified as y_t.
AsrResult asr_of(const VictimModel& model, std::span<const Image> triggered, int target_label);

// Test images whose true label differs from y_t.
std::vector<Image> non_target_images(const LabeledImages& test, int target_label);

AsrResult compute_asr(const VictimModel& model, const LabeledImages& test, const TriggerGenerator& gen,
                      const InjectionSpec& spec, const NoiseTemplate* tmpl, int target_label,
                      ShapeAdapter adapter = ShapeAdapter::kReject);

struct ExclusivityResult {
  double same_asr = 0.0;   // trigger residual applied to its own image
  double cross_asr = 0.0;  // residual of x1 applied to a different x2
  double null_asr = 0.0;   // clean images (zero residual)
  std::size_t pairs = 0;
};

// Residual delta(x) = E(I(x)) - x on the 8-bit scale.
std::vector<int> trigger_residual(const Image& x, const Image& x_p);
Image apply_residual(const Image& x, const std::vector<int>& delta);

ExclusivityResult exclusivity_test(const VictimModel& model, const LabeledImages& test, const TriggerGenerator& gen,
                                   const InjectionSpec& spec, const NoiseTemplate* tmpl, int target_label,
                                   std::uint64_t pairing_seed, ShapeAdapter adapter = ShapeAdapter::kReject);

void save_victim(const VictimModel& model, const std::filesystem::path& path);
VictimModel load_victim(const std::filesystem::path& path);

}  // namespace sst
