#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sst/defenses.hpp"
#include "sst/injection.hpp"
#include "sst/poisoning.hpp"
#include "sst/trigger.hpp"
#include "sst/victim.hpp"

namespace sst {

inline constexpr int kConfigSchemaVersion = 1;

struct DataConfig {
  // Dataset roots (`<root>/<class>/<files>`) or saved dataset manifests.
  std::filesystem::path train, test, benign, holdout;
  Shape3 shape{32, 32, 3};
  bool resize = true;  // resize + center-crop mismatched files instead of rejecting them
};

struct EvaluateConfig {
  bool exclusivity = true;
  std::filesystem::path clean_model;  // optional clean baseline for relative CDA
  std::size_t stealth_samples = 500;  // 0 = every test image
};

struct DefenseConfig {
  bool fine_pruning = true;
  FinePruningConfig pruning;
  bool neural_cleanse = true;
  NeuralCleanseConfig cleanse;
  int cleanse_per_class = 20;
  bool strip = true;
  int strip_n = 100;
  int strip_inputs = 200;
  bool gradcam = true;
  int gradcam_pairs = 100;
  bool patch_fixture = true;
  int patch_size = 3;
};

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 0;
  std::filesystem::path output = "runs/default";
  DataConfig data;
  InjectionSpec injection;
  bool noise_seed_explicit = false;
  DaeTrainConfig dae;
  std::filesystem::path generator;  // pre-trained (possibly foreign) generator; skips DAE training
  ShapeAdapter adapter = ShapeAdapter::kReject;
  PoisonConfig poison;
  VictimHyper victim;
  bool clean_baseline = true;  // also train a clean model with identical seeds
  EvaluateConfig evaluate;
  DefenseConfig defense;

  // Canonical, fully-resolved form used for stage hashing and report echoes.
  nlohmann::json to_json() const;
};

struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> output;
  std::vector<std::string> assignments;  // "section.key=value"
};

// Parses the sectioned key = value format. Unknown sections or keys, bad
// values and missing required paths raise ConfigError naming the field.
// Relative paths resolve against the config file's directory.
ExperimentConfig load_config(const std::filesystem::path& path, const ConfigOverrides& overrides = {});
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir,
                              const ConfigOverrides& overrides = {});

// Stage seeds are derived from the global seed and the stage name.
void derive_stage_seeds(ExperimentConfig& cfg);

}  // namespace sst
