#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sst/image.hpp"
#include "sst/layers.hpp"

namespace sst {

// Everything needed to rebuild a network's layer graph before its weights
// are loaded.
struct ArchSpec {
  std::string id;  // "small_resnet", "small_vgg", "dae"
  Shape3 input{32, 32, 3};
  int num_classes = 0;  // classifiers only
  int width = 16;       // base channel count
  std::vector<int> stage_blocks{2, 1, 1};  // small_resnet only
  std::uint64_t init_seed = 0;

  nlohmann::json to_json() const;
  static ArchSpec from_json(const nlohmann::json& j);
};

class Network {
 public:
  Network() = default;
  Network(ArchSpec spec, std::vector<std::unique_ptr<Layer>> layers, int feature_layer);
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  const ArchSpec& spec() const { return spec_; }
  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }

  Tensor forward(const Tensor& x, Mode mode) { return forward_range(x, 0, layers_.size(), mode); }
  // Runs layers [begin, end).
  Tensor forward_range(const Tensor& x, std::size_t begin, std::size_t end, Mode mode);
  Tensor backward(const Tensor& dy) { return backward_range(dy, 0, layers_.size()); }
  // Back-propagates through layers [begin, end) in reverse order.
  Tensor backward_range(const Tensor& dy, std::size_t begin, std::size_t end);

  std::vector<Param*> params();
  std::vector<Tensor*> buffers();
  // Parameter values followed by buffers, in serialization order.
  std::vector<const Tensor*> state() const;
  void zero_grad();
  void set_param_grads(bool on);

  // Index of the layer whose output is the last convolutional feature map.
  // For classifiers a ChannelMask sits directly after it.
  int feature_layer() const { return feature_layer_; }
  ChannelMask* prune_mask();

 private:
  ArchSpec spec_;
  std::vector<std::unique_ptr<Layer>> layers_;
  int feature_layer_ = -1;
};

Network build_network(const ArchSpec& spec);

// Converts storage-form images to an NCHW batch in [0,1].
Tensor images_to_tensor(std::span<const Image> images);
Tensor image_to_tensor(const Image& image);
FloatImage tensor_to_float_image(const Tensor& t, int index);

// Serialized container: magic, format version, JSON header (architecture and
// caller metadata), raw parameter/buffer blobs, trailing checksum.
inline constexpr std::uint32_t kModelFormatVersion = 1;
void save_network(const Network& net, const nlohmann::json& meta, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path, nlohmann::json* meta = nullptr);

// Stable content hash of parameters and buffers.
std::string network_digest(const Network& net);

}  // namespace sst
