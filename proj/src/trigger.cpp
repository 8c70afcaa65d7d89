#include "sst/trigger.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <random>

#include "sst/errors.hpp"
#include "sst/optim.hpp"

namespace sst {

namespace {

constexpr int kInferenceBatch = 64;

std::vector<double> json_doubles(const nlohmann::json& j, const char* key) {
  return j.contains(key) ? j.at(key).get<std::vector<double>>() : std::vector<double>{};
}

Image convert_channels(const Image& x, int channels) {
  if (x.channels() == channels) return x;
  Image out(x.height(), x.width(), channels);
  if (channels == 1) {
    const auto g = to_gray(x);
    for (std::size_t i = 0; i < g.size(); ++i) out.pixels()[i] = static_cast<std::uint8_t>(std::lround(g[i] * 255.0));
  } else {
    for (int r = 0; r < x.height(); ++r)
      for (int c = 0; c < x.width(); ++c)
        for (int k = 0; k < 3; ++k) out.at(r, c, k) = x.at(r, c, 0);
  }
  return out;
}

}  // namespace

nlohmann::json DaeTrainConfig::to_json() const {
  return {{"batch_size", batch_size}, {"epochs", epochs},       {"learning_rate", learning_rate},
          {"val_fraction", val_fraction}, {"width", width},    {"stage_convs", stage_convs}, {"seed", seed},
          {"min_samples", min_samples}};
}

nlohmann::json GeneratorProvenance::to_json() const {
  return {{"dataset_id", dataset_id},
          {"spec", spec.to_json()},
          {"config", config.to_json()},
          {"epochs_run", epochs_run},
          {"final_train_loss", final_train_loss},
          {"final_val_loss", final_val_loss},
          {"untrained_val_loss", untrained_val_loss},
          {"untrained_val_p10", untrained_val_p10},
          {"train_curve", train_curve},
          {"val_curve", val_curve}};
}

GeneratorProvenance GeneratorProvenance::from_json(const nlohmann::json& j) {
  GeneratorProvenance p;
  p.dataset_id = j.value("dataset_id", "");
  p.spec = InjectionSpec::from_json(j.at("spec"));
  const auto& c = j.at("config");
  p.config.batch_size = c.value("batch_size", p.config.batch_size);
  p.config.epochs = c.value("epochs", p.config.epochs);
  p.config.learning_rate = c.value("learning_rate", p.config.learning_rate);
  p.config.val_fraction = c.value("val_fraction", p.config.val_fraction);
  p.config.width = c.value("width", p.config.width);
  if (c.contains("stage_convs")) p.config.stage_convs = c.at("stage_convs").get<std::vector<int>>();
  p.config.seed = c.value("seed", p.config.seed);
  p.config.min_samples = c.value("min_samples", p.config.min_samples);
  p.epochs_run = j.value("epochs_run", 0);
  p.final_train_loss = j.value("final_train_loss", 0.0);
  p.final_val_loss = j.value("final_val_loss", 0.0);
  p.untrained_val_loss = j.value("untrained_val_loss", 0.0);
  p.untrained_val_p10 = j.value("untrained_val_p10", 0.0);
  p.train_curve = json_doubles(j, "train_curve");
  p.val_curve = json_doubles(j, "val_curve");
  return p;
}

std::vector<double> reconstruction_losses(Network& net, std::span<const Image> inputs, std::span<const Image> targets) {
  std::vector<double> out;
  out.reserve(inputs.size());
  for (std::size_t b = 0; b < inputs.size(); b += kInferenceBatch) {
    const std::size_t m = std::min<std::size_t>(kInferenceBatch, inputs.size() - b);
    const Tensor y = net.forward(images_to_tensor(inputs.subspan(b, m)), Mode::kEval);
    const Tensor t = images_to_tensor(targets.subspan(b, m));
    const std::size_t per = y.sample_size();
    for (std::size_t s = 0; s < m; ++s) {
      double acc = 0.0;
      const float* yp = y.sample(static_cast<int>(s));
      const float* tp = t.sample(static_cast<int>(s));
      for (std::size_t i = 0; i < per; ++i) acc += static_cast<double>(yp[i] - tp[i]) * (yp[i] - tp[i]);
      out.push_back(acc / per);
    }
  }
  return out;
}

TriggerGenerator train_dae(std::span<const Image> benign, const InjectionSpec& spec, const NoiseTemplate* tmpl,
                           const DaeTrainConfig& cfg, const std::string& dataset_id, const DaeProgress& progress) {
  spec.validate();
  if (benign.size() < cfg.min_samples)
    throw DataError("denoiser needs at least " + std::to_string(cfg.min_samples) + " benign images, got " +
                    std::to_string(benign.size()));
  if (cfg.batch_size < 1 || cfg.epochs < 0 || !(cfg.learning_rate > 0))
    throw ParameterError("invalid denoiser training configuration");
  if (!(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0)) throw ParameterError("val_fraction must lie in (0,1)");
  if (spec.mode == InjectionMode::kMix && !tmpl) throw MissingTemplateError("mix injection needs a noise template");

  const Shape3 shape = benign.front().shape();
  for (const auto& x : benign)
    if (!(x.shape() == shape)) throw ShapeError("benign set mixes image shapes");

  // Fixed split: a seeded permutation, the tail becomes validation.
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(benign.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.val_fraction * benign.size())));
  const std::size_t n_train = benign.size() - n_val;

  std::vector<Image> clean(benign.size()), injected(benign.size());
  for (std::size_t i = 0; i < order.size(); ++i) clean[i] = benign[order[i]];
#pragma omp parallel for schedule(dynamic, 8)
  for (std::size_t i = 0; i < clean.size(); ++i) injected[i] = inject(clean[i], spec, tmpl);

  const std::span<const Image> clean_train(clean.data(), n_train), inj_train(injected.data(), n_train);
  const std::span<const Image> clean_val(clean.data() + n_train, n_val), inj_val(injected.data() + n_train, n_val);

  ArchSpec arch;
  arch.id = "dae";
  arch.input = shape;
  arch.width = cfg.width;
  arch.stage_blocks = cfg.stage_convs;
  arch.init_seed = cfg.seed;
  Network net = build_network(arch);

  GeneratorProvenance prov;
  prov.dataset_id = dataset_id;
  prov.spec = spec;
  prov.config = cfg;
  {
    auto base = reconstruction_losses(net, inj_val, clean_val);
    prov.untrained_val_loss = std::accumulate(base.begin(), base.end(), 0.0) / base.size();
    std::sort(base.begin(), base.end());
    prov.untrained_val_p10 = base[static_cast<std::size_t>(0.1 * (base.size() - 1))];
  }
  prov.final_val_loss = prov.untrained_val_loss;

  Adam opt(net.params(), static_cast<float>(cfg.learning_rate));
  std::vector<std::size_t> idx(n_train);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<Image> bx, by;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(idx.begin(), idx.end(), rng);
    double sum = 0.0;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < n_train; b += cfg.batch_size) {
      const std::size_t m = std::min<std::size_t>(cfg.batch_size, n_train - b);
      bx.clear();
      by.clear();
      for (std::size_t k = 0; k < m; ++k) {
        bx.push_back(inj_train[idx[b + k]]);
        by.push_back(clean_train[idx[b + k]]);
      }
      net.zero_grad();
      const Tensor y = net.forward(images_to_tensor(bx), Mode::kTrain);
      Tensor dy;
      const double loss = mse_loss(y, images_to_tensor(by), dy);
      if (!std::isfinite(loss))
        throw DivergenceError("denoiser loss became non-finite at epoch " + std::to_string(epoch));
      net.backward(dy);
      opt.step();
      sum += loss * m;
      seen += m;
    }
    const auto val = reconstruction_losses(net, inj_val, clean_val);
    const double val_loss = std::accumulate(val.begin(), val.end(), 0.0) / val.size();
    if (!std::isfinite(val_loss)) throw DivergenceError("denoiser validation loss became non-finite");
    prov.train_curve.push_back(sum / seen);
    prov.val_curve.push_back(val_loss);
    prov.final_train_loss = sum / seen;
    prov.final_val_loss = val_loss;
    prov.epochs_run = epoch + 1;
    if (progress) progress(epoch, sum / seen, val_loss);
  }
  return TriggerGenerator(std::move(net), std::move(prov));
}

std::vector<Image> reconstruct_batch(const TriggerGenerator& gen, std::span<const Image> xs, ShapeAdapter adapter) {
  const Shape3 native = gen.input_shape();
  if (adapter != ShapeAdapter::kBilinear)
    for (const auto& x : xs)
      if (!(x.shape() == native)) throw ShapeError("generator expects " + native.str() + ", got " + x.shape().str());
  // One forward pass per image. GEMM blocking depends on the batch width, so
  // batching would let an image's last bits depend on its batch mates and
  // break bit-exact replay of single manifest records.
  std::vector<Image> out(xs.size());
#pragma omp parallel
  {
    Network net = gen.network();  // private copy: layers cache activations
#pragma omp for schedule(dynamic, 4)
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const Image& x = xs[i];
      const Image in = x.shape() == native
                           ? x
                           : resize_bilinear(convert_channels(x, native.channels), native.height, native.width);
      const Tensor y = net.forward(images_to_tensor(std::span<const Image>(&in, 1)), Mode::kEval);
      Image r = tensor_to_float_image(y, 0).to_storage();
      if (!(r.shape() == x.shape())) r = convert_channels(resize_bilinear(r, x.shape().height, x.shape().width), x.shape().channels);
      out[i] = std::move(r);
    }
  }
  return out;
}

Image reconstruct(const TriggerGenerator& gen, const Image& x, ShapeAdapter adapter) {
  return reconstruct_batch(gen, std::span<const Image>(&x, 1), adapter).front();
}

std::vector<Image> generate_trigger_images(const TriggerGenerator& gen, const InjectionSpec& spec,
                                           const NoiseTemplate* tmpl, std::span<const Image> xs,
                                           ShapeAdapter adapter) {
  std::vector<Image> injected(xs.size());
  std::vector<std::exception_ptr> errors(xs.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::size_t i = 0; i < xs.size(); ++i) {
    try {
      injected[i] = inject(xs[i], spec, tmpl);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return reconstruct_batch(gen, injected, adapter);
}

Image generate_trigger_image(const TriggerGenerator& gen, const InjectionSpec& spec, const NoiseTemplate* tmpl,
                             const Image& x, ShapeAdapter adapter) {
  return generate_trigger_images(gen, spec, tmpl, std::span<const Image>(&x, 1), adapter).front();
}

void save_generator(const TriggerGenerator& gen, const std::filesystem::path& path) {
  save_network(gen.network(), {{"kind", "trigger_generator"}, {"provenance", gen.provenance().to_json()}}, path);
}

TriggerGenerator load_generator(const std::filesystem::path& path) {
  nlohmann::json meta;
  Network net = load_network(path, &meta);
  if (meta.value("kind", "") != "trigger_generator" || net.spec().id != "dae")
    throw VersionError(path.string() + " does not hold a trigger generator");
  return TriggerGenerator(std::move(net), GeneratorProvenance::from_json(meta.at("provenance")));
}

}  // namespace sst
