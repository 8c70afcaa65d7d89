#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sst/dataset.hpp"
#include "sst/trigger.hpp"

namespace sst {

struct PoisonConfig {
  double rho = 0.1;
  int target_label = 0;
  std::uint64_t selection_seed = 0;
  bool exclude_target_class = true;

  nlohmann::json to_json() const;
};

// round(rho * |train|) sample ids, uniformly drawn with the selection seed,
// returned in manifest order. ConfigError on a bad rho or target label.
std::vector<std::string> select_poison_sources(const DatasetManifest& train, const PoisonConfig& cfg);

struct PoisonRecord {
  std::string source_id;
  std::string source;  // path of the clean original
  int source_label = 0;
  std::string poisoned;  // path of the written poisoned image
  int target_label = 0;
  std::string generator_id;
  std::string spec_id;
};

inline constexpr int kPoisonManifestSchema = 1;

struct PoisonManifest {
  int schema_version = kPoisonManifestSchema;
  PoisonConfig config;
  std::size_t train_count = 0;
  std::string generator_id;
  std::string generator_path;  // empty for generator-free fixtures
  nlohmann::json spec;         // injection spec (or fixture description)
  std::string spec_id;
  std::string template_path;  // mix mode only
  std::uint64_t template_seed = 0;
  std::string adapter = "reject";
  Shape3 image_shape;  // shape the sources are decoded to
  std::vector<PoisonRecord> records;

  nlohmann::json to_json() const;
  static PoisonManifest from_json(const nlohmann::json& j);
};

void save_poison_manifest(const PoisonManifest& m, const std::filesystem::path& path);
PoisonManifest load_poison_manifest(const std::filesystem::path& path);

struct PoisonedDataset {
  DatasetManifest mixed;  // D_clean plus the relabelled poisoned images
  PoisonManifest manifest;
};

// Batch transform producing x_p for each selected source.
using PoisonTransform = std::function<std::vector<Image>(std::span<const Image>)>;

// Writes `<out>/data/<class>/...` (clean files copied, poisoned files written
// as PNG into the target class), `<out>/dataset.json` and `<out>/poison.json`.
// On failure the output directory is removed.
PoisonedDataset build_poisoned_dataset(const DatasetManifest& train, const Shape3& shape, const PoisonConfig& cfg,
                                       const PoisonTransform& transform, PoisonManifest header,
                                       const std::filesystem::path& out_dir);

// The DAE-driven attack: x_p = E(I(x)). `generator_path` is recorded so the
// manifest can be re-verified later.
PoisonedDataset build_poisoned_dataset(const DatasetManifest& train, const Shape3& shape, const TriggerGenerator& gen,
                                       const std::filesystem::path& generator_path, const InjectionSpec& spec,
                                       const PoisonConfig& cfg, const std::filesystem::path& out_dir,
                                       ShapeAdapter adapter = ShapeAdapter::kReject);

// White square of side `size` in the bottom-right corner: the classical
// universal patch trigger used as a reference attack.
Image stamp_patch(const Image& x, int size);

struct VerificationReport {
  std::size_t records = 0;
  std::size_t rederived = 0;
  std::vector<std::string> rederived_ids;
};

// Structural checks on every record plus bit-exact regeneration of `sample`
// randomly chosen records. Throws VerificationError listing all violations.
VerificationReport verify_manifest(const PoisonManifest& m, std::size_t sample = 10, std::uint64_t seed = 0);
VerificationReport verify_manifest(const std::filesystem::path& manifest_path, std::size_t sample = 10,
                                   std::uint64_t seed = 0);

}  // namespace sst
