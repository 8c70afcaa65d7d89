#include "sst/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "sst/errors.hpp"
#include "sst/optim.hpp"
#include "sst/util.hpp"

namespace sst {

// --- Fine-pruning -------------------------------------------------------------

nlohmann::json FinePruningReport::to_json() const {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : points)
    pts.push_back({{"ratio", p.ratio}, {"pruned", p.pruned}, {"cda", p.cda}, {"asr", p.asr}, {"channels", p.channels}});
  return {{"defense", "fine_pruning"}, {"channels", channels}, {"mean_activation", mean_activation}, {"points", pts}};
}

std::vector<double> channel_activations(const VictimModel& model, std::span<const Image> clean) {
  Network net = model.net;
  const std::size_t layer = static_cast<std::size_t>(net.feature_layer());
  std::vector<double> sum;
  std::size_t count = 0;
  for (std::size_t b = 0; b < clean.size(); b += 128) {
    const std::size_t m = std::min<std::size_t>(128, clean.size() - b);
    const Tensor a = net.forward_range(images_to_tensor(clean.subspan(b, m)), 0, layer + 1, Mode::kEval);
    if (sum.empty()) sum.assign(a.c(), 0.0);
    for (int n = 0; n < a.n(); ++n)
      for (int c = 0; c < a.c(); ++c) {
        const float* p = a.sample(n) + a.plane() * c;
        sum[c] += std::accumulate(p, p + a.plane(), 0.0) / static_cast<double>(a.plane());
      }
    count += m;
  }
  for (auto& s : sum) s /= static_cast<double>(std::max<std::size_t>(count, 1));
  return sum;
}

std::vector<int> prune_order(const std::vector<double>& activation) {
  std::vector<int> order(activation.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return activation[a] < activation[b]; });
  return order;
}

FinePruningReport fine_pruning(const VictimModel& model, const LabeledImages& clean, const LabeledImages& test,
                               std::span<const Image> triggered, int target_label, const FinePruningConfig& cfg) {
  for (double r : cfg.ratios)
    if (!(r >= 0.0 && r <= 0.95)) throw ConfigError("fine_pruning ratio " + std::to_string(r) + " outside [0, 0.95]");
  FinePruningReport rep;
  rep.mean_activation = channel_activations(model, clean.images);
  rep.channels = static_cast<int>(rep.mean_activation.size());
  const auto order = prune_order(rep.mean_activation);
  for (double r : cfg.ratios) {
    PrunePoint pt;
    pt.ratio = r;
    pt.pruned = static_cast<int>(std::floor(r * rep.channels + 1e-9));
    pt.channels.assign(order.begin(), order.begin() + pt.pruned);
    VictimModel copy = model;
    if (pt.pruned > 0) {
      ChannelMask* mask = copy.net.prune_mask();
      if (!mask) throw ShapeError("model has no prunable feature layer");
      for (int c : pt.channels) mask->set_active(c, false);
      finetune(copy, clean, cfg.finetune_epochs, cfg.lr_scale * model.hyper.learning_rate,
               derive_seed(cfg.seed, "finetune-" + std::to_string(pt.pruned)));
    }
    pt.cda = compute_cda(copy, test);
    pt.asr = asr_of(copy, triggered, target_label).asr;
    rep.points.push_back(std::move(pt));
  }
  return rep;
}

// --- Neural Cleanse -----------------------------------------------------------

nlohmann::json NeuralCleanseReport::to_json() const {
  nlohmann::json t = nlohmann::json::array();
  for (const auto& r : triggers)
    t.push_back({{"label", r.label}, {"l1", r.l1}, {"success", r.success}, {"reached", r.reached},
                 {"diverged", r.diverged}, {"error", r.error}});
  return {{"defense", "neural_cleanse"}, {"triggers", t}, {"anomaly_index", anomaly_index},
          {"threshold", threshold}, {"flagged", flagged}};
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::vector<double> anomaly_indices(const std::vector<double>& norms) {
  const double med = median(norms);
  std::vector<double> dev;
  for (double l : norms) dev.push_back(std::abs(l - med));
  const double mad = median(dev);
  std::vector<double> out(norms.size(), 0.0);
  if (!(mad > 0.0)) return out;
  for (std::size_t i = 0; i < norms.size(); ++i) out[i] = dev[i] / (1.4826 * mad);
  return out;
}

ReversedTrigger reverse_trigger(const VictimModel& model, std::span<const Image> samples, int label,
                                const NeuralCleanseConfig& cfg) {
  ReversedTrigger res;
  res.label = label;
  if (samples.empty()) throw DataError("neural cleanse needs samples");
  const Shape3 s = model.input_shape();
  const int C = s.channels, H = s.height, W = s.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;

  Network net = model.net;
  net.set_param_grads(false);
  const Tensor all = images_to_tensor(samples);

  std::mt19937_64 rng(derive_seed(cfg.seed, "nc-" + std::to_string(label)));
  std::uniform_real_distribution<float> init(-1.0f, 1.0f);
  Param mask_logit{Tensor(1, 1, H, W), Tensor(1, 1, H, W), false};
  Param pattern_logit{Tensor(1, C, H, W), Tensor(1, C, H, W), false};
  for (auto& v : mask_logit.value.vec()) v = init(rng);
  for (auto& v : pattern_logit.value.vec()) v = init(rng);
  Adam opt({&mask_logit, &pattern_logit}, static_cast<float>(cfg.learning_rate), 0.5f, 0.9f);

  double lambda = 0.0;
  int up = 0, down = 0;
  constexpr int kPatience = 3;
  double best = std::numeric_limits<double>::infinity();
  std::vector<float> m(plane), p(static_cast<std::size_t>(C) * plane);
  std::vector<int> order(all.n());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> labels;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t hits = 0;
    double l1 = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      m[i] = static_cast<float>(sigmoid(mask_logit.value[i]));
      l1 += m[i];
    }
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<float>(sigmoid(pattern_logit.value[i]));
    for (int b = 0; b < all.n(); b += cfg.batch_size) {
      const int n = std::min(cfg.batch_size, all.n() - b);
      Tensor x(n, C, H, W);
      for (int k = 0; k < n; ++k) {
        const float* src = all.sample(order[b + k]);
        float* dst = x.sample(k);
        for (int c = 0; c < C; ++c)
          for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t j = c * plane + i;
            dst[j] = (1.0f - m[i]) * src[j] + m[i] * p[j];
          }
      }
      const Tensor logits = net.forward(x, Mode::kEval);
      labels.assign(n, label);
      Tensor dlogits;
      const double ce = softmax_cross_entropy(logits, labels, dlogits);
      if (!std::isfinite(ce)) {
        res.diverged = true;
        res.error = "non-finite loss at epoch " + std::to_string(epoch);
        res.l1 = l1;
        res.mask = m;
        return res;
      }
      for (int k = 0; k < n; ++k)
        if (argmax(std::span<const float>(logits.sample(k), logits.c())) == label) ++hits;
      const Tensor dx = net.backward(dlogits);

      mask_logit.grad.fill(0.0f);
      pattern_logit.grad.fill(0.0f);
      for (int k = 0; k < n; ++k) {
        const float* src = all.sample(order[b + k]);
        const float* g = dx.sample(k);
        for (int c = 0; c < C; ++c)
          for (std::size_t i = 0; i < plane; ++i) {
            const std::size_t j = c * plane + i;
            mask_logit.grad[i] += g[j] * (p[j] - src[j]);
            pattern_logit.grad[j] += g[j] * m[i];
          }
      }
      for (std::size_t i = 0; i < plane; ++i)
        mask_logit.grad[i] = (mask_logit.grad[i] + static_cast<float>(lambda)) * m[i] * (1.0f - m[i]);
      for (std::size_t j = 0; j < p.size(); ++j) pattern_logit.grad[j] *= p[j] * (1.0f - p[j]);
      opt.step();
      for (std::size_t i = 0; i < plane; ++i) m[i] = static_cast<float>(sigmoid(mask_logit.value[i]));
      for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<float>(sigmoid(pattern_logit.value[i]));
    }
    const double success = static_cast<double>(hits) / all.n();
    // l1 was measured on the mask used during this epoch.
    if (success >= cfg.success_threshold && l1 < best) {
      best = l1;
      res.l1 = l1;
      res.success = success;
      res.reached = true;
      res.mask.assign(m.begin(), m.end());
    }
    if (lambda == 0.0) {
      if (success >= cfg.success_threshold) lambda = cfg.init_lambda;
      continue;
    }
    if (success >= cfg.success_threshold) {
      ++up;
      down = 0;
    } else {
      ++down;
      up = 0;
    }
    if (up >= kPatience) {
      lambda *= 2.0;
      up = 0;
    } else if (down >= kPatience) {
      lambda /= 2.0;
      down = 0;
    }
  }
  if (!res.reached) {
    double l1 = 0.0;
    for (std::size_t i = 0; i < plane; ++i) l1 += sigmoid(mask_logit.value[i]);
    res.l1 = l1;
    res.mask = m;
  }
  return res;
}

NeuralCleanseReport neural_cleanse(const VictimModel& model, std::span<const Image> samples,
                                   const NeuralCleanseConfig& cfg) {
  NeuralCleanseReport rep;
  rep.threshold = cfg.anomaly_threshold;
  std::vector<double> norms;
  for (int k = 0; k < model.num_classes(); ++k) {
    ReversedTrigger t;
    try {
      t = reverse_trigger(model, samples, k, cfg);
    } catch (const DivergenceError& e) {
      t.label = k;
      t.diverged = true;
      t.error = e.what();
    }
    norms.push_back(t.l1);
    rep.triggers.push_back(std::move(t));
  }
  rep.anomaly_index = anomaly_indices(norms);
  for (std::size_t k = 0; k < rep.anomaly_index.size(); ++k)
    if (rep.anomaly_index[k] > cfg.anomaly_threshold) rep.flagged.push_back(static_cast<int>(k));
  return rep;
}

// --- STRIP ----------------------------------------------------------------------

Image blend_half(const Image& a, const Image& b) {
  if (!(a.shape() == b.shape())) throw ShapeError("blend operands differ in shape");
  Image out = a;
  for (std::size_t i = 0; i < out.pixels().size(); ++i)
    out.pixels()[i] = static_cast<std::uint8_t>((a.pixels()[i] + b.pixels()[i] + 1) / 2);
  return out;
}

double entropy_bits(std::span<const float> probs) {
  double h = 0.0;
  for (float p : probs)
    if (p > 0.0f) h -= static_cast<double>(p) * std::log2(static_cast<double>(p));
  return std::max(0.0, h);
}

double strip_entropy(const VictimModel& model, const Image& x, std::span<const Image> overlays, int n,
                     std::uint64_t seed) {
  if (n < 1 || static_cast<std::size_t>(n) > overlays.size())
    throw ConfigError("strip.n must lie in [1, " + std::to_string(overlays.size()) + "]");
  std::vector<std::size_t> idx(overlays.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<Image> blends;
  blends.reserve(n);
  for (int k = 0; k < n; ++k) blends.push_back(blend_half(x, overlays[idx[k]]));
  double sum = 0.0;
  for (const auto& p : predict_probs(model, blends)) sum += entropy_bits(p);
  return sum / n;
}

double auc_lower_is_positive(const std::vector<double>& positive, const std::vector<double>& negative) {
  if (positive.empty() || negative.empty()) return 0.5;
  // Mann-Whitney U with midranks.
  std::vector<std::pair<double, int>> all;
  for (double v : positive) all.emplace_back(v, 1);
  for (double v : negative) all.emplace_back(v, 0);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum_pos = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t j = i;
    while (j < all.size() && all[j].first == all[i].first) ++j;
    const double mid = 0.5 * (i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (all[k].second) rank_sum_pos += mid;
    i = j;
  }
  const double np = positive.size(), nn = negative.size();
  const double u_pos = rank_sum_pos - np * (np + 1) / 2;  // pairs where positive > negative
  return 1.0 - u_pos / (np * nn);
}

nlohmann::json StripReport::to_json() const {
  return {{"defense", "strip"},
          {"clean_entropy", clean_entropy},
          {"trigger_entropy", trigger_entropy},
          {"threshold", threshold},
          {"threshold_rule", "1st percentile of clean entropy"},
          {"false_rejection", false_rejection},
          {"detection", detection},
          {"auc", auc},
          {"z", z},
          {"p_value", p_value},
          {"distinguishable_at_95", distinguishable}};
}

namespace {

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * (v.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - lo) * (v[hi] - v[lo]);
}

}  // namespace

StripReport strip_sweep(const VictimModel& model, std::span<const Image> clean, std::span<const Image> triggered,
                        std::span<const Image> overlays, int n, std::uint64_t seed) {
  if (clean.empty() || triggered.empty()) throw ConfigError("strip needs clean and trigger inputs");
  StripReport r;
  for (std::size_t i = 0; i < clean.size(); ++i)
    r.clean_entropy.push_back(strip_entropy(model, clean[i], overlays, n, mix64(seed + 2 * i)));
  for (std::size_t i = 0; i < triggered.size(); ++i)
    r.trigger_entropy.push_back(strip_entropy(model, triggered[i], overlays, n, mix64(seed + 2 * i + 1)));
  r.threshold = percentile(r.clean_entropy, 0.01);
  auto below = [&](const std::vector<double>& v) {
    return static_cast<double>(std::count_if(v.begin(), v.end(), [&](double e) { return e <= r.threshold; })) /
           v.size();
  };
  r.false_rejection = below(r.clean_entropy);
  r.detection = below(r.trigger_entropy);
  r.auc = auc_lower_is_positive(r.trigger_entropy, r.clean_entropy);
  const double n1 = r.trigger_entropy.size(), n2 = r.clean_entropy.size();
  const double pooled = (r.detection * n1 + r.false_rejection * n2) / (n1 + n2);
  const double se = std::sqrt(pooled * (1 - pooled) * (1 / n1 + 1 / n2));
  if (se > 0) {
    r.z = (r.detection - r.false_rejection) / se;
    r.p_value = std::erfc(std::abs(r.z) / std::sqrt(2.0));
  }
  r.distinguishable = r.p_value < 0.05;
  return r;
}

// --- Grad-CAM -----------------------------------------------------------------

GradCamParts gradcam_parts(const VictimModel& model, const Image& x, int target_class, int layer) {
  if (!(x.shape() == model.input_shape()))
    throw ShapeError("classifier expects " + model.input_shape().str() + ", got " + x.shape().str());
  Network net = model.net;
  net.set_param_grads(false);
  const int L = layer < 0 ? net.feature_layer() : layer;
  if (L < 0 || static_cast<std::size_t>(L) + 1 >= net.size()) throw ShapeError("invalid Grad-CAM layer");
  GradCamParts g;
  g.activation = net.forward_range(image_to_tensor(x), 0, L + 1, Mode::kEval);
  if (g.activation.h() * g.activation.w() <= 1) throw ShapeError("Grad-CAM layer has no spatial extent");
  const Tensor logits = net.forward_range(g.activation, L + 1, net.size(), Mode::kEval);
  g.target_class = target_class < 0 ? argmax(logits.span()) : target_class;
  if (g.target_class >= logits.c()) throw ShapeError("Grad-CAM class out of range");
  Tensor d(1, logits.c(), 1, 1);
  d[g.target_class] = 1.0f;
  g.gradient = net.backward_range(d, L + 1, net.size());
  const std::size_t plane = g.activation.plane();
  for (int c = 0; c < g.activation.c(); ++c) {
    const float* gp = g.gradient.sample(0) + plane * c;
    g.weights.push_back(std::accumulate(gp, gp + plane, 0.0) / static_cast<double>(plane));
  }
  return g;
}

std::vector<double> gradcam(const VictimModel& model, const Image& x, int target_class, int layer) {
  const GradCamParts g = gradcam_parts(model, x, target_class, layer);
  const int h = g.activation.h(), w = g.activation.w();
  const std::size_t plane = g.activation.plane();
  FloatImage cam(h, w, 1);
  for (int c = 0; c < g.activation.c(); ++c) {
    const float* a = g.activation.sample(0) + plane * c;
    for (std::size_t i = 0; i < plane; ++i) cam.values()[i] += static_cast<float>(g.weights[c] * a[i]);
  }
  for (auto& v : cam.values()) v = std::max(v, 0.0f);
  const FloatImage up = resize_bilinear(cam, x.height(), x.width());
  std::vector<double> out(up.values().begin(), up.values().end());
  const double mx = *std::max_element(out.begin(), out.end());
  if (mx > 0)
    for (auto& v : out) v /= mx;
  else
    std::fill(out.begin(), out.end(), 0.0);
  return out;
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("cosine operands differ in length");
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  if (aa == 0.0 || bb == 0.0) return (aa == 0.0 && bb == 0.0) ? 1.0 : 0.0;
  return std::clamp(ab / std::sqrt(aa * bb), 0.0, 1.0);
}

double sentinet_overlap(const VictimModel& model, const Image& clean_x, const Image& poisoned_x, int layer) {
  return cosine_similarity(gradcam(model, clean_x, -1, layer), gradcam(model, poisoned_x, -1, layer));
}

// --- Patch fixture ---------------------------------------------------------------

PoisonedDataset patch_trigger_fixture(const DatasetManifest& train, const Shape3& shape, int patch_size,
                                      const PoisonConfig& cfg, const std::filesystem::path& out_dir) {
  PoisonManifest header;
  header.generator_id = "patch";
  header.spec = {{"mode", "patch"}, {"patch_size", patch_size}};
  header.spec_id = "patch-" + std::to_string(patch_size);
  auto transform = [&](std::span<const Image> xs) {
    std::vector<Image> out;
    for (const auto& x : xs) out.push_back(stamp_patch(x, patch_size));
    return out;
  };
  return build_poisoned_dataset(train, shape, cfg, transform, header, out_dir);
}

}  // namespace sst
