#include "sst/network.hpp"

#include <cstring>
#include <fstream>

#include "sst/errors.hpp"
#include "sst/util.hpp"

namespace sst {

nlohmann::json ArchSpec::to_json() const {
  return {{"id", id},
          {"input", {input.height, input.width, input.channels}},
          {"num_classes", num_classes},
          {"width", width},
          {"stage_blocks", stage_blocks},
          {"init_seed", init_seed}};
}

ArchSpec ArchSpec::from_json(const nlohmann::json& j) {
  ArchSpec s;
  s.id = j.at("id").get<std::string>();
  const auto in = j.at("input");
  s.input = Shape3{in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()};
  s.num_classes = j.at("num_classes").get<int>();
  s.width = j.at("width").get<int>();
  s.stage_blocks = j.at("stage_blocks").get<std::vector<int>>();
  s.init_seed = j.at("init_seed").get<std::uint64_t>();
  return s;
}

Network::Network(ArchSpec spec, std::vector<std::unique_ptr<Layer>> layers, int feature_layer)
    : spec_(std::move(spec)), layers_(std::move(layers)), feature_layer_(feature_layer) {}

Network::Network(const Network& other) : spec_(other.spec_), feature_layer_(other.feature_layer_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

Tensor Network::forward_range(const Tensor& x, std::size_t begin, std::size_t end, Mode mode) {
  Tensor h = x;
  for (std::size_t i = begin; i < end; ++i) h = layers_[i]->forward(h, mode);
  return h;
}

Tensor Network::backward_range(const Tensor& dy, std::size_t begin, std::size_t end) {
  Tensor g = dy;
  for (std::size_t i = end; i-- > begin;) g = layers_[i]->backward(g);
  return g;
}

std::vector<Param*> Network::params() {
  std::vector<Param*> out;
  for (auto& l : layers_)
    for (auto* p : l->params()) out.push_back(p);
  return out;
}

std::vector<Tensor*> Network::buffers() {
  std::vector<Tensor*> out;
  for (auto& l : layers_)
    for (auto* b : l->buffers()) out.push_back(b);
  return out;
}

std::vector<const Tensor*> Network::state() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers_)
    for (auto* p : l->params()) out.push_back(&p->value);
  for (const auto& l : layers_)
    for (auto* b : l->buffers()) out.push_back(b);
  return out;
}

void Network::zero_grad() {
  for (auto* p : params()) p->grad.fill(0.0f);
}

void Network::set_param_grads(bool on) {
  for (auto& l : layers_) l->set_param_grads(on);
}

ChannelMask* Network::prune_mask() {
  if (feature_layer_ < 0 || static_cast<std::size_t>(feature_layer_ + 1) >= layers_.size()) return nullptr;
  return dynamic_cast<ChannelMask*>(layers_[feature_layer_ + 1].get());
}

namespace {

Network build_small_resnet(const ArchSpec& s, std::mt19937_64& rng) {
  std::vector<std::unique_ptr<Layer>> L;
  const int w = s.width;
  L.push_back(std::make_unique<Conv2d>(s.input.channels, w, ConvGeometry{3, 1, 1}, false, rng));
  L.push_back(std::make_unique<BatchNorm2d>(w));
  L.push_back(std::make_unique<ReLU>());
  int in = w;
  for (std::size_t stage = 0; stage < s.stage_blocks.size(); ++stage) {
    const int out = w << stage;
    for (int b = 0; b < s.stage_blocks[stage]; ++b) {
      const int stride = (stage > 0 && b == 0) ? 2 : 1;
      L.push_back(std::make_unique<ResidualBlock>(in, out, stride, rng));
      in = out;
    }
  }
  const int feature = static_cast<int>(L.size()) - 1;
  L.push_back(std::make_unique<ChannelMask>(in));
  L.push_back(std::make_unique<GlobalAvgPool>());
  L.push_back(std::make_unique<Linear>(in, s.num_classes, rng));
  return Network(s, std::move(L), feature);
}

Network build_small_vgg(const ArchSpec& s, std::mt19937_64& rng) {
  std::vector<std::unique_ptr<Layer>> L;
  int in = s.input.channels;
  int h = s.input.height, wd = s.input.width;
  int feature = -1;
  for (int stage = 0; stage < 3; ++stage) {
    const int out = s.width << stage;
    for (int k = 0; k < 2; ++k) {
      L.push_back(std::make_unique<Conv2d>(in, out, ConvGeometry{3, 1, 1}, false, rng));
      L.push_back(std::make_unique<BatchNorm2d>(out));
      L.push_back(std::make_unique<ReLU>());
      in = out;
    }
    if (stage == 2) {
      feature = static_cast<int>(L.size()) - 1;
      L.push_back(std::make_unique<ChannelMask>(in));
    }
    L.push_back(std::make_unique<MaxPool2>());
    h /= 2;
    wd /= 2;
  }
  L.push_back(std::make_unique<Linear>(in * h * wd, s.num_classes, rng));
  return Network(s, std::move(L), feature);
}

// Encoder: one stride-2 4x4 convolution per stage, optionally followed by
// 3x3 refinement convolutions (stage_blocks[i] - 1 of them); the decoder
// mirrors it with transposed convolutions. Sigmoid output, no skip
// connections.
Network build_dae(const ArchSpec& s, std::mt19937_64& rng) {
  std::vector<std::unique_ptr<Layer>> L;
  const ConvGeometry down{4, 2, 1}, same{3, 1, 1};
  const std::size_t stages = s.stage_blocks.size();
  std::vector<int> widths;
  for (std::size_t i = 0; i < stages; ++i) widths.push_back(s.width << i);
  int in = s.input.channels;
  for (std::size_t i = 0; i < stages; ++i) {
    L.push_back(std::make_unique<Conv2d>(in, widths[i], down, true, rng));
    L.push_back(std::make_unique<ReLU>());
    for (int k = 1; k < s.stage_blocks[i]; ++k) {
      L.push_back(std::make_unique<Conv2d>(widths[i], widths[i], same, true, rng));
      L.push_back(std::make_unique<ReLU>());
    }
    in = widths[i];
  }
  const int feature = static_cast<int>(L.size()) - 1;
  for (std::size_t i = stages; i-- > 1;) {
    L.push_back(std::make_unique<ConvTranspose2d>(in, widths[i - 1], down, true, rng));
    L.push_back(std::make_unique<ReLU>());
    in = widths[i - 1];
    for (int k = 1; k < s.stage_blocks[i - 1]; ++k) {
      L.push_back(std::make_unique<Conv2d>(in, in, same, true, rng));
      L.push_back(std::make_unique<ReLU>());
    }
  }
  L.push_back(std::make_unique<ConvTranspose2d>(in, s.input.channels, down, true, rng));
  L.push_back(std::make_unique<Sigmoid>());
  return Network(s, std::move(L), feature);
}

}  // namespace

Network build_network(const ArchSpec& spec) {
  std::mt19937_64 rng(spec.init_seed);
  if (spec.id == "small_resnet") {
    if (spec.num_classes < 2) throw ParameterError("classifier needs at least two classes");
    return build_small_resnet(spec, rng);
  }
  if (spec.id == "small_vgg") {
    if (spec.num_classes < 2) throw ParameterError("classifier needs at least two classes");
    if (spec.input.height % 8 || spec.input.width % 8) throw ShapeError("small_vgg input must be divisible by 8");
    return build_small_vgg(spec, rng);
  }
  if (spec.id == "dae") {
    const int div = 1 << spec.stage_blocks.size();
    if (spec.stage_blocks.empty() || spec.input.height % div || spec.input.width % div)
      throw ShapeError("dae input " + spec.input.str() + " must be divisible by " + std::to_string(div));
    for (int b : spec.stage_blocks)
      if (b < 1) throw ParameterError("dae stages need at least one convolution");
    return build_dae(spec, rng);
  }
  throw ParameterError("unknown architecture '" + spec.id + "'");
}

Tensor images_to_tensor(std::span<const Image> images) {
  if (images.empty()) return {};
  const Shape3 s = images.front().shape();
  Tensor t(static_cast<int>(images.size()), s.channels, s.height, s.width);
  const std::size_t p = static_cast<std::size_t>(s.height) * s.width;
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (!(images[n].shape() == s)) throw ShapeError("batch contains mixed image shapes");
    const auto px = images[n].pixels();
    float* dst = t.sample(static_cast<int>(n));
    for (std::size_t i = 0; i < p; ++i)
      for (int c = 0; c < s.channels; ++c) dst[p * c + i] = static_cast<float>(px[i * s.channels + c]) / 255.0f;
  }
  return t;
}

Tensor image_to_tensor(const Image& image) { return images_to_tensor(std::span<const Image>(&image, 1)); }

FloatImage tensor_to_float_image(const Tensor& t, int index) {
  FloatImage img(t.h(), t.w(), t.c());
  const std::size_t p = t.plane();
  const float* src = t.sample(index);
  auto dst = img.values();
  for (std::size_t i = 0; i < p; ++i)
    for (int c = 0; c < t.c(); ++c) dst[i * t.c() + c] = src[p * c + i];
  return img;
}

namespace {

constexpr char kMagic[8] = {'S', 'S', 'T', 'M', 'O', 'D', 'E', 'L'};

std::vector<Tensor*> mutable_state(Network& net) {
  std::vector<Tensor*> out;
  for (auto* p : net.params()) out.push_back(&p->value);
  for (auto* b : net.buffers()) out.push_back(b);
  return out;
}

}  // namespace

void save_network(const Network& net, const nlohmann::json& meta, const std::filesystem::path& path) {
  const std::string header = nlohmann::json{{"arch", net.spec().to_json()}, {"meta", meta}}.dump();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IOError("cannot write " + path.string());
    Fnv1a sum;
    auto put = [&](const void* p, std::size_t n) {
      out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
      sum.update(p, n);
    };
    put(kMagic, sizeof kMagic);
    const std::uint32_t version = kModelFormatVersion;
    put(&version, sizeof version);
    const std::uint64_t hlen = header.size();
    put(&hlen, sizeof hlen);
    put(header.data(), header.size());
    for (const Tensor* t : net.state()) {
      const std::uint64_t count = t->size();
      put(&count, sizeof count);
      put(t->data(), count * sizeof(float));
    }
    const std::uint64_t checksum = sum.value();
    out.write(reinterpret_cast<const char*>(&checksum), sizeof checksum);
    if (!out) throw IOError("short write " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Network load_network(const std::filesystem::path& path, nlohmann::json* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open model " + path.string());
  const std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::size_t off = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (off + n > bytes.size()) throw IOError("truncated model file " + path.string());
    std::memcpy(dst, bytes.data() + off, n);
    off += n;
  };
  char magic[8];
  take(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof magic) != 0) throw VersionError("not a model container: " + path.string());
  std::uint32_t version = 0;
  take(&version, sizeof version);
  if (version != kModelFormatVersion)
    throw VersionError("model format version " + std::to_string(version) + " unsupported (expected " +
                       std::to_string(kModelFormatVersion) + ")");
  if (bytes.size() < sizeof(std::uint64_t)) throw IOError("truncated model file " + path.string());
  Fnv1a sum;
  sum.update(bytes.data(), bytes.size() - sizeof(std::uint64_t));
  std::uint64_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - sizeof stored, sizeof stored);
  if (stored != sum.value()) throw IOError("model checksum mismatch (corrupted file) " + path.string());

  std::uint64_t hlen = 0;
  take(&hlen, sizeof hlen);
  if (hlen > bytes.size()) throw IOError("corrupted model header " + path.string());
  std::string header(hlen, '\0');
  take(header.data(), hlen);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IOError("corrupted model header: " + std::string(e.what()));
  }
  Network net = build_network(ArchSpec::from_json(h.at("arch")));
  for (Tensor* t : mutable_state(net)) {
    std::uint64_t count = 0;
    take(&count, sizeof count);
    if (count != t->size()) throw VersionError("parameter layout mismatch in " + path.string());
    take(t->data(), count * sizeof(float));
  }
  if (meta) *meta = h.value("meta", nlohmann::json::object());
  return net;
}

std::string network_digest(const Network& net) {
  Fnv1a h;
  h.update(net.spec().to_json().dump());
  for (const Tensor* t : net.state()) h.update(t->data(), t->size() * sizeof(float));
  return h.hex();
}

}  // namespace sst
