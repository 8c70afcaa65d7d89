#include "sst/victim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sst/errors.hpp"
#include "sst/optim.hpp"
#include "sst/util.hpp"

namespace sst {

namespace {

constexpr int kEvalBatch = 128;

void check_labels(const LabeledImages& d, int k) {
  for (int y : d.labels)
    if (y < 0 || y >= k) throw DataError("label " + std::to_string(y) + " outside [0," + std::to_string(k) + ")");
}

// Copies sample `src` of `all` into slot `dst` of `batch`, optionally mirrored.
void gather(const Tensor& all, int src, Tensor& batch, int dst, bool flip) {
  const int c = all.c(), h = all.h(), w = all.w();
  const float* in = all.sample(src);
  float* out = batch.sample(dst);
  if (!flip) {
    std::copy_n(in, all.sample_size(), out);
    return;
  }
  for (int ch = 0; ch < c; ++ch)
    for (int r = 0; r < h; ++r) {
      const float* row = in + (static_cast<std::size_t>(ch) * h + r) * w;
      float* orow = out + (static_cast<std::size_t>(ch) * h + r) * w;
      for (int x = 0; x < w; ++x) orow[x] = row[w - 1 - x];
    }
}

// One pass over `data`; returns (mean loss, accuracy).
std::pair<double, double> run_epoch(Network& net, Sgd& opt, const Tensor& all, std::span<const int> labels,
                                    int batch_size, bool hflip, std::mt19937_64& rng) {
  const int n = all.n();
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::bernoulli_distribution coin(0.5);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::vector<int> by;
  for (int b = 0; b < n; b += batch_size) {
    const int m = std::min(batch_size, n - b);
    Tensor bx(m, all.c(), all.h(), all.w());
    by.assign(m, 0);
    for (int k = 0; k < m; ++k) {
      gather(all, order[b + k], bx, k, hflip && coin(rng));
      by[k] = labels[order[b + k]];
    }
    net.zero_grad();
    const Tensor logits = net.forward(bx, Mode::kTrain);
    Tensor dlogits;
    const double loss = softmax_cross_entropy(logits, by, dlogits);
    if (!std::isfinite(loss)) throw DivergenceError("classifier loss became non-finite");
    net.backward(dlogits);
    opt.step();
    loss_sum += loss * m;
    for (int k = 0; k < m; ++k)
      if (argmax(std::span<const float>(logits.sample(k), logits.c())) == by[k]) ++correct;
  }
  return {loss_sum / n, static_cast<double>(correct) / n};
}

Tensor stack(const LabeledImages& d) { return images_to_tensor(d.images); }

}  // namespace

nlohmann::json VictimHyper::to_json() const {
  return {{"arch", arch},         {"width", width},
          {"stage_blocks", stage_blocks}, {"epochs", epochs},
          {"batch_size", batch_size}, {"learning_rate", learning_rate},
          {"momentum", momentum}, {"weight_decay", weight_decay},
          {"milestones", milestones}, {"gamma", gamma},
          {"hflip", hflip},       {"seed", seed}};
}

VictimHyper VictimHyper::from_json(const nlohmann::json& j) {
  VictimHyper h;
  h.arch = j.value("arch", h.arch);
  h.width = j.value("width", h.width);
  if (j.contains("stage_blocks")) h.stage_blocks = j["stage_blocks"].get<std::vector<int>>();
  h.epochs = j.value("epochs", h.epochs);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.momentum = j.value("momentum", h.momentum);
  h.weight_decay = j.value("weight_decay", h.weight_decay);
  if (j.contains("milestones")) h.milestones = j["milestones"].get<std::vector<double>>();
  h.gamma = j.value("gamma", h.gamma);
  h.hflip = j.value("hflip", h.hflip);
  h.seed = j.value("seed", h.seed);
  return h;
}

double VictimHyper::lr_at(int epoch) const {
  double lr = learning_rate;
  for (double m : milestones)
    if (epoch >= static_cast<int>(std::lround(m * epochs))) lr *= gamma;
  return lr;
}

VictimModel train_victim(const LabeledImages& train, const VictimHyper& hyper,
                         const std::vector<std::string>& class_names, const LabeledImages* monitor,
                         const VictimProgress& progress) {
  if (train.size() == 0) throw DataError("empty training set");
  if (hyper.epochs < 0 || hyper.batch_size < 1 || !(hyper.learning_rate > 0))
    throw ParameterError("invalid classifier hyperparameters");
  const int k = train.num_classes;
  check_labels(train, k);

  VictimModel model;
  ArchSpec arch;
  arch.id = hyper.arch;
  arch.input = train.images.front().shape();
  arch.num_classes = k;
  arch.width = hyper.width;
  arch.stage_blocks = hyper.stage_blocks;
  arch.init_seed = hyper.seed;
  model.net = build_network(arch);
  model.hyper = hyper;
  model.class_names = class_names;

  const Tensor all = stack(train);
  Sgd opt(model.net.params(), static_cast<float>(hyper.learning_rate), static_cast<float>(hyper.momentum),
          static_cast<float>(hyper.weight_decay));
  std::mt19937_64 rng(mix64(hyper.seed ^ 0x5eedULL));
  for (int e = 0; e < hyper.epochs; ++e) {
    EpochLog entry;
    entry.epoch = e;
    entry.lr = hyper.lr_at(e);
    opt.set_lr(static_cast<float>(entry.lr));
    std::tie(entry.loss, entry.train_acc) = run_epoch(model.net, opt, all, train.labels, hyper.batch_size, hyper.hflip, rng);
    if (monitor) entry.test_acc = compute_cda(model, *monitor);
    model.log.push_back(entry);
    if (progress) progress(entry);
  }
  return model;
}

void finetune(VictimModel& model, const LabeledImages& data, int epochs, double lr, std::uint64_t seed) {
  check_labels(data, model.num_classes());
  if (epochs <= 0 || data.size() == 0) return;
  const Tensor all = stack(data);
  Sgd opt(model.net.params(), static_cast<float>(lr), static_cast<float>(model.hyper.momentum),
          static_cast<float>(model.hyper.weight_decay));
  std::mt19937_64 rng(mix64(seed ^ 0xf17eULL));
  for (int e = 0; e < epochs; ++e)
    run_epoch(model.net, opt, all, data.labels, model.hyper.batch_size, model.hyper.hflip, rng);
}

std::vector<std::vector<float>> predict_probs(const VictimModel& model, std::span<const Image> xs) {
  Network net = model.net;
  std::vector<std::vector<float>> out;
  out.reserve(xs.size());
  for (std::size_t b = 0; b < xs.size(); b += kEvalBatch) {
    const std::size_t m = std::min<std::size_t>(kEvalBatch, xs.size() - b);
    for (std::size_t i = b; i < b + m; ++i)
      if (!(xs[i].shape() == model.input_shape()))
        throw ShapeError("classifier expects " + model.input_shape().str() + ", got " + xs[i].shape().str());
    const Tensor p = softmax(net.forward(images_to_tensor(xs.subspan(b, m)), Mode::kEval));
    for (std::size_t s = 0; s < m; ++s) {
      const float* row = p.sample(static_cast<int>(s));
      out.emplace_back(row, row + p.c());
    }
  }
  return out;
}

std::vector<int> predict_labels(const VictimModel& model, std::span<const Image> xs) {
  std::vector<int> labels;
  for (const auto& p : predict_probs(model, xs)) labels.push_back(argmax(p));
  return labels;
}

Prediction predict(const VictimModel& model, const Image& x) {
  auto p = predict_probs(model, std::span<const Image>(&x, 1)).front();
  return {argmax(p), std::move(p)};
}

double compute_cda(const VictimModel& model, const LabeledImages& test) {
  if (test.size() == 0) return 0.0;
  const auto pred = predict_labels(model, test.images);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) ok += pred[i] == test.labels[i];
  return static_cast<double>(ok) / pred.size();
}

AsrResult asr_of(const VictimModel& model, std::span<const Image> triggered, int target_label) {
  if (triggered.empty()) return {0.0, 0};
  const auto pred = predict_labels(model, triggered);
  const auto hits = std::count(pred.begin(), pred.end(), target_label);
  return {static_cast<double>(hits) / pred.size(), pred.size()};
}

std::vector<Image> non_target_images(const LabeledImages& test, int target_label) {
  std::vector<Image> out;
  for (std::size_t i = 0; i < test.size(); ++i)
    if (test.labels[i] != target_label) out.push_back(test.images[i]);
  return out;
}

AsrResult compute_asr(const VictimModel& model, const LabeledImages& test, const TriggerGenerator& gen,
                      const InjectionSpec& spec, const NoiseTemplate* tmpl, int target_label, ShapeAdapter adapter) {
  const auto xs = non_target_images(test, target_label);
  return asr_of(model, generate_trigger_images(gen, spec, tmpl, xs, adapter), target_label);
}

std::vector<int> trigger_residual(const Image& x, const Image& x_p) {
  if (!(x.shape() == x_p.shape())) throw ShapeError("residual operands differ in shape");
  std::vector<int> d(x.pixels().size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<int>(x_p.pixels()[i]) - x.pixels()[i];
  return d;
}

Image apply_residual(const Image& x, const std::vector<int>& delta) {
  if (delta.size() != x.pixels().size()) throw ShapeError("residual size does not match image");
  Image out = x;
  for (std::size_t i = 0; i < delta.size(); ++i)
    out.pixels()[i] = static_cast<std::uint8_t>(std::clamp(static_cast<int>(x.pixels()[i]) + delta[i], 0, 255));
  return out;
}

ExclusivityResult exclusivity_test(const VictimModel& model, const LabeledImages& test, const TriggerGenerator& gen,
                                   const InjectionSpec& spec, const NoiseTemplate* tmpl, int target_label,
                                   std::uint64_t pairing_seed, ShapeAdapter adapter) {
  const auto xs = non_target_images(test, target_label);
  ExclusivityResult r;
  if (xs.size() < 2) return r;
  const auto xp = generate_trigger_images(gen, spec, tmpl, xs, adapter);
  // Pair each image with a different one: a seeded shuffle followed by a
  // one-step rotation guarantees no fixed points.
  std::vector<std::size_t> perm(xs.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(pairing_seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::size_t> partner(xs.size());
  for (std::size_t i = 0; i < perm.size(); ++i) partner[perm[i]] = perm[(i + 1) % perm.size()];

  std::vector<Image> same(xs.size()), cross(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto delta = trigger_residual(xs[i], xp[i]);
    same[i] = apply_residual(xs[i], delta);
    cross[i] = apply_residual(xs[partner[i]], delta);
  }
  r.same_asr = asr_of(model, same, target_label).asr;
  r.cross_asr = asr_of(model, cross, target_label).asr;
  r.null_asr = asr_of(model, xs, target_label).asr;
  r.pairs = xs.size();
  return r;
}

void save_victim(const VictimModel& model, const std::filesystem::path& path) {
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : model.log)
    log.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"loss", e.loss}, {"train_acc", e.train_acc}, {"test_acc", e.test_acc}});
  save_network(model.net,
               {{"kind", "victim"}, {"hyper", model.hyper.to_json()}, {"class_names", model.class_names}, {"log", log}},
               path);
}

VictimModel load_victim(const std::filesystem::path& path) {
  nlohmann::json meta;
  VictimModel m;
  m.net = load_network(path, &meta);
  if (meta.value("kind", "") != "victim") throw VersionError(path.string() + " does not hold a classifier");
  m.hyper = VictimHyper::from_json(meta.at("hyper"));
  m.class_names = meta.value("class_names", std::vector<std::string>{});
  for (const auto& e : meta.value("log", nlohmann::json::array()))
    m.log.push_back({e.at("epoch").get<int>(), e.at("lr").get<double>(), e.at("loss").get<double>(),
                     e.at("train_acc").get<double>(), e.at("test_acc").get<double>()});
  return m;
}

}  // namespace sst
