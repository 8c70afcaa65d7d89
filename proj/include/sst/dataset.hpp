#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sst/image.hpp"
#include "sst/image_io.hpp"

namespace sst {

struct Sample {
  std::string id;               // "<class>/<file>", unique within a dataset
  std::filesystem::path path;   // absolute or relative to the working directory
  int label = 0;
};

// A labelled list of image files. Class names are sorted lexicographically
// and label i refers to class_names[i].
struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<Sample> samples;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
  std::string digest() const;
};

// Scans `<root>/<class_name>/<image files>` (png, jpg, jpeg).
DatasetManifest scan_dataset(const std::filesystem::path& root);

void save_dataset_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_dataset_manifest(const std::filesystem::path& path);

// Decoded images in manifest order.
struct LabeledImages {
  std::vector<Image> images;
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return images.size(); }
};

LabeledImages load_images(const DatasetManifest& m, const Shape3& shape,
                          ResizePolicy policy = ResizePolicy::kResizeCenterCrop);

// --- Procedural corpora -------------------------------------------------------

enum class SyntheticKind {
  kShapes,  // ten geometric object classes on textured gradient backgrounds
  kFaces,   // stylized face crops, one class per identity
};

struct SyntheticSpec {
  SyntheticKind kind = SyntheticKind::kShapes;
  Shape3 shape{32, 32, 3};
  int num_classes = 10;
  int per_class = 100;
  std::uint64_t seed = 1;
};

SyntheticKind parse_synthetic_kind(const std::string& name);
std::vector<std::string> synthetic_class_names(const SyntheticSpec& spec);

// Deterministic in (spec, label, index).
Image render_synthetic(const SyntheticSpec& spec, int label, int index);

// Writes `<root>/<class>/<index>.png` and returns the scanned manifest.
DatasetManifest write_synthetic_dataset(const std::filesystem::path& root, const SyntheticSpec& spec);

}  // namespace sst
