#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sst/poisoning.hpp"
#include "sst/victim.hpp"

namespace sst {

// --- Fine-pruning -------------------------------------------------------------

struct FinePruningConfig {
  std::vector<double> ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  int finetune_epochs = 5;
  double lr_scale = 0.1;  // fine-tune lr relative to the model's base lr
  std::uint64_t seed = 0;
};

struct PrunePoint {
  double ratio = 0.0;
  int pruned = 0;
  double cda = 0.0;
  double asr = 0.0;
  std::vector<int> channels;  // pruned channel indices
};

struct FinePruningReport {
  int channels = 0;
  std::vector<double> mean_activation;  // per channel, on the clean subset
  std::vector<PrunePoint> points;
  nlohmann::json to_json() const;
};

// Mean activation of each channel of the last convolutional block.
std::vector<double> channel_activations(const VictimModel& model, std::span<const Image> clean);
// Channels ordered by ascending mean activation (ties: lower index first).
std::vector<int> prune_order(const std::vector<double>& activation);

// `clean` drives both the ranking and the fine-tuning; CDA is measured on
// `test` and ASR on `triggered` (inputs carrying the trigger, true label != y_t).
FinePruningReport fine_pruning(const VictimModel& model, const LabeledImages& clean, const LabeledImages& test,
                               std::span<const Image> triggered, int target_label, const FinePruningConfig& cfg);

// --- Neural Cleanse -----------------------------------------------------------

struct NeuralCleanseConfig {
  int epochs = 100;
  int batch_size = 32;
  double learning_rate = 0.1;
  double init_lambda = 1e-3;
  double success_threshold = 0.99;
  double anomaly_threshold = 2.0;
  std::uint64_t seed = 0;
};

struct ReversedTrigger {
  int label = 0;
  double l1 = 0.0;         // |m|_1 of the best mask reaching the success threshold
  double success = 0.0;    // attack success of that trigger on the sample set
  bool reached = false;    // whether the threshold was ever reached
  bool diverged = false;
  std::string error;
  std::vector<float> mask;  // H*W
};

struct NeuralCleanseReport {
  std::vector<ReversedTrigger> triggers;
  std::vector<double> anomaly_index;
  double threshold = 2.0;
  std::vector<int> flagged;
  nlohmann::json to_json() const;
};

// |l - median| / (1.4826 * MAD); all zeros when MAD = 0.
std::vector<double> anomaly_indices(const std::vector<double>& norms);

ReversedTrigger reverse_trigger(const VictimModel& model, std::span<const Image> samples, int label,
                                const NeuralCleanseConfig& cfg);
NeuralCleanseReport neural_cleanse(const VictimModel& model, std::span<const Image> samples,
                                   const NeuralCleanseConfig& cfg);

// --- STRIP ----------------------------------------------------------------------

// Pixelwise average of two images, rounded half up.
Image blend_half(const Image& a, const Image& b);

// Shannon entropy in bits.
double entropy_bits(std::span<const float> probs);

// Mean prediction entropy over n blends of `x` with distinct random overlays.
double strip_entropy(const VictimModel& model, const Image& x, std::span<const Image> overlays, int n,
                     std::uint64_t seed);

struct StripReport {
  std::vector<double> clean_entropy, trigger_entropy;
  double threshold = 0.0;       // 1st percentile of clean entropy
  double false_rejection = 0.0;  // clean inputs at or below the threshold
  double detection = 0.0;        // trigger inputs at or below the threshold
  double auc = 0.0;              // P(trigger entropy < clean entropy)
  double z = 0.0, p_value = 1.0;  // two-proportion test, detection vs false rejection
  bool distinguishable = false;   // p < 0.05
  nlohmann::json to_json() const;
};

StripReport strip_sweep(const VictimModel& model, std::span<const Image> clean, std::span<const Image> triggered,
                        std::span<const Image> overlays, int n, std::uint64_t seed);

// Area under the ROC when low `positive` scores indicate the positive class.
double auc_lower_is_positive(const std::vector<double>& positive, const std::vector<double>& negative);

// --- Grad-CAM / SentiNet proxy --------------------------------------------------

struct GradCamParts {
  Tensor activation;  // [1, K, h, w] at the target layer
  Tensor gradient;    // d(class score)/d(activation)
  std::vector<double> weights;  // spatially pooled gradient per channel
  int target_class = 0;
};

// target_class < 0 selects the predicted class; layer < 0 the last
// convolutional feature layer.
GradCamParts gradcam_parts(const VictimModel& model, const Image& x, int target_class = -1, int layer = -1);
// H*W saliency in [0,1].
std::vector<double> gradcam(const VictimModel& model, const Image& x, int target_class = -1, int layer = -1);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);
double sentinet_overlap(const VictimModel& model, const Image& clean_x, const Image& poisoned_x, int layer = -1);

// --- Patch-trigger reference attack ---------------------------------------------

PoisonedDataset patch_trigger_fixture(const DatasetManifest& train, const Shape3& shape, int patch_size,
                                      const PoisonConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace sst
