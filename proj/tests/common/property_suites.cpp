#include "property_suites.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "fixtures.hpp"
#include "sst/defenses.hpp"
#include "sst/errors.hpp"
#include "sst/image_io.hpp"
#include "sst/injection.hpp"
#include "sst/layers.hpp"
#include "sst/metrics.hpp"
#include "sst/poisoning.hpp"
#include "sst/trigger.hpp"

namespace sst::testing {

namespace {

namespace fs = std::filesystem;

// Collects the first few failures; the rest are only counted.
struct Failures {
  int count = 0;
  std::ostringstream first;
  void add(const std::string& what) {
    if (count++ < 5) first << what << "; ";
  }
  PropertyResult result(const std::string& ok_detail) const {
    if (count == 0) return {true, ok_detail};
    return {false, std::to_string(count) + " violation(s): " + first.str()};
  }
};

// --- Detector oracles -----------------------------------------------------------

struct Grid {
  int h = 0, w = 0;
  std::vector<double> v;
  double at(int r, int c) const { return v[static_cast<std::size_t>(r) * w + c]; }
};

Grid oracle_gray(const Image& x) {
  Grid g{x.height(), x.width(), {}};
  for (int r = 0; r < g.h; ++r)
    for (int c = 0; c < g.w; ++c) {
      double lum = 0.0;
      if (x.channels() == 1) {
        lum = x.at(r, c, 0);
      } else {
        const double wts[3] = {0.299, 0.587, 0.114};
        for (int ch = 0; ch < 3; ++ch) lum += wts[ch] * x.at(r, c, ch);
      }
      g.v.push_back(lum / 255.0);
    }
  return g;
}

// Explicitly padded copy, then a plain 3x3 correlation.
Grid correlate3(const Grid& g, const double k[3][3]) {
  const int ph = g.h + 2, pw = g.w + 2;
  std::vector<double> pad(static_cast<std::size_t>(ph) * pw);
  for (int r = 0; r < ph; ++r)
    for (int c = 0; c < pw; ++c) {
      const int sr = std::min(std::max(r - 1, 0), g.h - 1), sc = std::min(std::max(c - 1, 0), g.w - 1);
      pad[static_cast<std::size_t>(r) * pw + c] = g.at(sr, sc);
    }
  Grid out{g.h, g.w, std::vector<double>(g.v.size(), 0.0)};
  for (int r = 0; r < g.h; ++r)
    for (int c = 0; c < g.w; ++c) {
      double s = 0.0;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) s += k[i][j] * pad[static_cast<std::size_t>(r + i) * pw + (c + j)];
      out.v[static_cast<std::size_t>(r) * g.w + c] = s;
    }
  return out;
}

const double kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
const double kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
const double kBox[3][3] = {{1, 1, 1}, {1, 1, 1}, {1, 1, 1}};

// Smaller root of the 2x2 characteristic polynomial, in extended precision.
std::vector<double> oracle_min_eigen(const Grid& gx, const Grid& gy) {
  Grid xx{gx.h, gx.w, {}}, xy{gx.h, gx.w, {}}, yy{gx.h, gx.w, {}};
  for (std::size_t i = 0; i < gx.v.size(); ++i) {
    xx.v.push_back(gx.v[i] * gx.v[i]);
    xy.v.push_back(gx.v[i] * gy.v[i]);
    yy.v.push_back(gy.v[i] * gy.v[i]);
  }
  const Grid a = correlate3(xx, kBox), b = correlate3(xy, kBox), c = correlate3(yy, kBox);
  std::vector<double> out;
  for (std::size_t i = 0; i < a.v.size(); ++i) {
    const long double t = static_cast<long double>(a.v[i]) + c.v[i];
    const long double d = static_cast<long double>(a.v[i]) * c.v[i] - static_cast<long double>(b.v[i]) * b.v[i];
    const long double disc = std::max(0.0L, t * t - 4.0L * d);
    out.push_back(static_cast<double>((t - std::sqrt(disc)) / 2.0L));
  }
  return out;
}

// Greedy strongest-first selection with 8-neighbour maximality, written
// from scratch over an index list.
std::vector<std::pair<int, int>> oracle_select(const std::vector<double>& resp, int h, int w, const CornerParams& p) {
  double peak = -1.0;
  for (double v : resp) peak = std::max(peak, v);
  if (peak <= 1e-12) return {};
  std::vector<int> cand;
  for (int i = 0; i < h * w; ++i) {
    const int r = i / w, c = i % w;
    if (!(resp[i] > p.quality_level * peak)) continue;
    bool dominated = false;
    for (int rr = std::max(r - 1, 0); rr <= std::min(r + 1, h - 1); ++rr)
      for (int cc = std::max(c - 1, 0); cc <= std::min(c + 1, w - 1); ++cc)
        if (resp[rr * w + cc] > resp[i]) dominated = true;
    if (!dominated) cand.push_back(i);
  }
  std::sort(cand.begin(), cand.end(), [&](int a, int b) { return resp[a] != resp[b] ? resp[a] > resp[b] : a < b; });
  std::vector<std::pair<int, int>> out;
  for (int i : cand) {
    if (static_cast<int>(out.size()) == p.max_corners) break;
    const int r = i / w, c = i % w;
    bool far = true;
    for (const auto& [orow, ocol] : out)
      if (std::hypot(r - orow, c - ocol) < p.min_distance - 1e-12) far = false;
    if (far) out.emplace_back(r, c);
  }
  return out;
}

double oracle_mse(const Image& a, const Image& b) {
  double s = 0.0;
  std::size_t n = 0;
  for (int r = 0; r < a.height(); ++r)
    for (int c = 0; c < a.width(); ++c)
      for (int ch = 0; ch < a.channels(); ++ch, ++n) {
        const double d = double(a.at(r, c, ch)) - double(b.at(r, c, ch));
        s += d * d;
      }
  return s / n;
}

// Direct 2-D Gaussian window, two-pass moments at every valid position.
double oracle_ssim(const Image& a, const Image& b) {
  const int win = 11, half = 5;
  const double sigma = 1.5, c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
  std::vector<double> wt(win * win);
  double total = 0.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double di = i - half, dj = j - half;
      wt[i * win + j] = std::exp(-(di * di + dj * dj) / (2 * sigma * sigma));
      total += wt[i * win + j];
    }
  for (auto& v : wt) v /= total;
  double acc = 0.0;
  for (int ch = 0; ch < a.channels(); ++ch) {
    double sum = 0.0;
    int positions = 0;
    for (int r = 0; r + win <= a.height(); ++r)
      for (int c = 0; c + win <= a.width(); ++c, ++positions) {
        double mx = 0, my = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            mx += wt[i * win + j] * a.at(r + i, c + j, ch);
            my += wt[i * win + j] * b.at(r + i, c + j, ch);
          }
        double vx = 0, vy = 0, cov = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const double dx = a.at(r + i, c + j, ch) - mx, dy = b.at(r + i, c + j, ch) - my;
            vx += wt[i * win + j] * dx * dx;
            vy += wt[i * win + j] * dy * dy;
            cov += wt[i * win + j] * dx * dy;
          }
        sum += (2 * mx * my + c1) * (2 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
    acc += sum / positions;
  }
  return acc / a.channels();
}

bool close(double a, double b, double tol) {
  if (std::isinf(a) || std::isinf(b)) return a == b;
  return std::abs(a - b) <= tol;
}

}  // namespace

PropertyResult detector_and_metric_oracles(int trials, std::uint64_t seed) {
  constexpr double kTol = 1e-6;
  std::mt19937_64 rng(seed);
  Failures f;
  const double qualities[] = {0.01, 0.05, 0.3};
  const double distances[] = {0.0, 1.0, 2.5, 4.0, 10.0};
  const int caps[] = {3, 100};
  const double thresholds[] = {0.05, 0.25, 0.5};
  std::size_t corners_seen = 0, edges_seen = 0;
  for (int t = 0; t < trials; ++t) {
    const int channels = (t % 5 == 4) ? 1 : 3;
    const Image x = random_image(rng, 16, 16, channels, t % 2 == 1);
    const std::string tag = "trial " + std::to_string(t) + ": ";

    const Grid gray = oracle_gray(x);
    const auto lib_gray = to_gray(x);
    for (std::size_t i = 0; i < lib_gray.size(); ++i)
      if (!close(lib_gray[i], gray.v[i], kTol)) f.add(tag + "gray");

    const Grid gx = correlate3(gray, kSobelX), gy = correlate3(gray, kSobelY);
    const Gradients d = sobel(x);
    for (std::size_t i = 0; i < gx.v.size(); ++i)
      if (!close(d.gx[i], gx.v[i], kTol) || !close(d.gy[i], gy.v[i], kTol)) {
        f.add(tag + "sobel at " + std::to_string(i));
        break;
      }

    const auto resp = min_eigen_response(x);
    const auto oracle_resp = oracle_min_eigen(gx, gy);
    for (std::size_t i = 0; i < resp.size(); ++i)
      if (!close(resp[i], oracle_resp[i], kTol)) {
        f.add(tag + "min eigenvalue at " + std::to_string(i));
        break;
      }

    CornerParams cp;
    cp.quality_level = qualities[rng() % 3];
    cp.min_distance = distances[rng() % 5];
    cp.max_corners = caps[rng() % 2];
    const auto got = detect_corners(x, cp);
    const auto want = oracle_select(resp, x.height(), x.width(), cp);
    corners_seen += want.size();
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i)
      same = got[i].row == want[i].first && got[i].col == want[i].second;
    if (!same) f.add(tag + "corner list differs");

    const auto mag = edge_magnitude(x);
    EdgeParams ep;
    ep.threshold = thresholds[rng() % 3];
    const auto mask = detect_edges(x, ep);
    for (std::size_t i = 0; i < mag.size(); ++i) {
      const double m = std::min(1.0, std::sqrt(gx.v[i] * gx.v[i] + gy.v[i] * gy.v[i]) / (4.0 * std::sqrt(2.0)));
      if (!close(mag[i], m, kTol)) {
        f.add(tag + "edge magnitude at " + std::to_string(i));
        break;
      }
      if (std::abs(m - ep.threshold) < 1e-9) continue;  // undecidable at this precision
      if ((mask[i] != 0) != (m >= ep.threshold)) {
        f.add(tag + "edge mask at " + std::to_string(i));
        break;
      }
      edges_seen += mask[i];
    }

    // Metric oracles: unrelated, perturbed and identical pairs.
    Image y = x;
    if (t % 3 == 0) {
      y = random_image(rng, 16, 16, channels, false);
    } else if (t % 3 == 1) {
      std::uniform_int_distribution<int> jitter(-20, 20);
      for (auto& p : y.pixels()) p = static_cast<std::uint8_t>(std::clamp(int(p) + jitter(rng), 0, 255));
    }
    const double m_ref = oracle_mse(x, y);
    const double psnr_ref = m_ref == 0.0 ? kPsnrInfinite : 10.0 * std::log10(65025.0 / m_ref);
    if (!close(mse(x, y), m_ref, kTol)) f.add(tag + "mse");
    if (!close(psnr(x, y), psnr_ref, kTol)) f.add(tag + "psnr");
    if (!close(ssim(x, y), oracle_ssim(x, y), kTol)) f.add(tag + "ssim");
  }
  return f.result(std::to_string(trials) + " images, " + std::to_string(corners_seen) + " corners, " +
                  std::to_string(edges_seen) + " edge pixels, tol 1e-6");
}

// --- Poisoning ---------------------------------------------------------------

PropertyResult poisoning_invariants(int trials, std::uint64_t seed) {
  constexpr int kMaxClasses = 6, kPerClassPool = 10;
  const fs::path root = scratch_dir("p2");
  std::mt19937_64 rng(seed);
  // One pool of tiny files per class; each trial draws a random subset.
  std::vector<std::vector<fs::path>> pool(kMaxClasses);
  for (int k = 0; k < kMaxClasses; ++k) {
    fs::create_directories(root / "pool" / ("k" + std::to_string(k)));
    for (int i = 0; i < kPerClassPool; ++i) {
      const fs::path p = root / "pool" / ("k" + std::to_string(k)) / (std::to_string(i) + ".png");
      save_png(random_image(rng, 4, 4, 3), p);
      pool[k].push_back(p);
    }
  }
  const PoisonTransform invert = [](std::span<const Image> xs) {
    std::vector<Image> out(xs.begin(), xs.end());
    for (auto& x : out)
      for (auto& p : x.pixels()) p = static_cast<std::uint8_t>(255 - p);
    return out;
  };

  Failures f;
  int rejected = 0;
  std::size_t total_records = 0;
  for (int t = 0; t < trials; ++t) {
    const std::string tag = "trial " + std::to_string(t) + ": ";
    const int classes = 2 + static_cast<int>(rng() % (kMaxClasses - 1));
    DatasetManifest train;
    for (int k = 0; k < classes; ++k) train.class_names.push_back("k" + std::to_string(k));
    for (int k = 0; k < classes; ++k) {
      const int n = 1 + static_cast<int>(rng() % kPerClassPool);
      for (int i = 0; i < n; ++i)
        train.samples.push_back({train.class_names[k] + "/" + std::to_string(i) + ".png", pool[k][i], k});
    }
    PoisonConfig cfg;
    cfg.rho = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    if (t % 10 == 0) cfg.rho = 0.0;
    cfg.target_label = static_cast<int>(rng() % classes);
    cfg.selection_seed = rng();
    const std::size_t n_total = train.samples.size();
    const auto want = static_cast<std::size_t>(std::llround(cfg.rho * n_total));
    const auto eligible = static_cast<std::size_t>(std::count_if(
        train.samples.begin(), train.samples.end(), [&](const Sample& s) { return s.label != cfg.target_label; }));

    const fs::path out = root / "out";
    PoisonedDataset ds;
    try {
      PoisonManifest header;
      header.spec = {{"fixture", "invert"}};
      ds = build_poisoned_dataset(train, {4, 4, 3}, cfg, invert, header, out);
    } catch (const ConfigError&) {
      if (want <= eligible) f.add(tag + "rejected a satisfiable request");
      ++rejected;
      continue;
    }
    if (want > eligible) {
      f.add(tag + "accepted an unsatisfiable request");
      continue;
    }
    const auto& recs = ds.manifest.records;
    total_records += recs.size();
    if (recs.size() != want) f.add(tag + "poison count " + std::to_string(recs.size()) + " != " + std::to_string(want));
    if (ds.mixed.samples.size() != n_total) f.add(tag + "mixed set size changed");

    std::multiset<std::string> covered;
    std::size_t poisoned_in_mixed = 0;
    for (const auto& s : ds.mixed.samples) {
      if (s.id.find("/p_") != std::string::npos) {
        ++poisoned_in_mixed;
        if (s.label != cfg.target_label) f.add(tag + "poisoned sample not relabelled");
      } else {
        covered.insert(s.id);
      }
    }
    for (const auto& r : recs) {
      covered.insert(r.source_id);
      if (r.source_label == cfg.target_label) f.add(tag + "source drawn from the target class");
      if (r.target_label != cfg.target_label) f.add(tag + "record target label");
      const Image src = load_image(r.source), got = load_image(r.poisoned);
      if (!(got == invert(std::span<const Image>(&src, 1)).front())) f.add(tag + "poisoned content is not T(x)");
    }
    if (poisoned_in_mixed != recs.size()) f.add(tag + "poisoned entries in the mixed set");
    // Clean remainder and sources must partition the original ids exactly.
    std::multiset<std::string> original;
    for (const auto& s : train.samples) original.insert(s.id);
    if (covered != original) f.add(tag + "clean remainder and sources do not partition the training set");
    for (const auto& s : ds.mixed.samples)
      if (s.id.find("/p_") == std::string::npos) {
        const auto it = std::find_if(train.samples.begin(), train.samples.end(),
                                     [&](const Sample& o) { return o.id == s.id; });
        if (it == train.samples.end() || it->label != s.label) f.add(tag + "clean label changed");
      }
  }
  fs::remove_all(root);
  return f.result(std::to_string(trials) + " manifests, " + std::to_string(total_records) + " records, " +
                  std::to_string(rejected) + " unsatisfiable requests rejected");
}

// --- Grad-CAM gradients -------------------------------------------------------

PropertyResult gradcam_gradient_check(int trials, std::uint64_t seed, double tolerance) {
  std::mt19937_64 rng(seed);
  Failures f;
  double worst = 0.0;
  const Shape3 shape{16, 16, 3};
  for (int t = 0; t < trials; ++t) {
    VictimModel model = random_resnet(shape, 4, 4, seed * 100 + t);
    const Image x = random_image(rng, shape.height, shape.width, shape.channels, t % 2 == 1);
    const std::string tag = "trial " + std::to_string(t);

    // Target (feature) layer: pooled weights vs shifting a whole channel plane.
    {
      const int layer = model.net.feature_layer();
      const GradCamParts g = gradcam_parts(model, x, static_cast<int>(t % 4), layer);
      Network net = model.net;
      auto score = [&](const Tensor& a) {
        return static_cast<double>(net.forward_range(a, layer + 1, net.size(), Mode::kEval)[g.target_class]);
      };
      const std::size_t plane = g.activation.plane();
      double wmax = 0.0, err = 0.0;
      for (double w : g.weights) wmax = std::max(wmax, std::abs(w));
      for (int c = 0; c < g.activation.c(); ++c) {
        const double eps = 1e-2;
        Tensor up = g.activation, down = g.activation;
        for (std::size_t i = 0; i < plane; ++i) {
          up.sample(0)[plane * c + i] += static_cast<float>(eps);
          down.sample(0)[plane * c + i] -= static_cast<float>(eps);
        }
        const double fd = (score(up) - score(down)) / (2 * eps) / static_cast<double>(plane);
        err = std::max(err, std::abs(fd - g.weights[c]));
      }
      const double rel = wmax > 0 ? err / wmax : err;
      worst = std::max(worst, rel);
      if (rel > tolerance) f.add(tag + " feature layer: relative error " + std::to_string(rel));
    }

    // Smooth fixture: conv -> sigmoid (target) -> conv -> sigmoid -> mask ->
    // pool -> linear, so the class score is non-linear in the activations
    // and finite differences are well defined everywhere.
    {
      std::mt19937_64 init(seed * 100 + t);
      std::vector<std::unique_ptr<Layer>> L;
      L.push_back(std::make_unique<Conv2d>(3, 4, ConvGeometry{3, 1, 1}, true, init));
      L.push_back(std::make_unique<Sigmoid>());
      L.push_back(std::make_unique<Conv2d>(4, 4, ConvGeometry{3, 1, 1}, true, init));
      L.push_back(std::make_unique<Sigmoid>());
      L.push_back(std::make_unique<ChannelMask>(4));
      L.push_back(std::make_unique<GlobalAvgPool>());
      L.push_back(std::make_unique<Linear>(4, 3, init));
      ArchSpec spec;
      spec.id = "fixture";
      spec.input = shape;
      spec.num_classes = 3;
      VictimModel smooth{Network(spec, std::move(L), 1), {}, {"a", "b", "c"}, {}};
      for (auto* p : smooth.net.params())
        for (auto& v : p->value.vec()) v *= 4.0f;  // push units off the sigmoid's linear range
      const GradCamParts g = gradcam_parts(smooth, x, static_cast<int>(t % 3), 1);
      Network net = smooth.net;
      auto score = [&](const Tensor& a) {
        return static_cast<double>(net.forward_range(a, 2, net.size(), Mode::kEval)[g.target_class]);
      };
      const std::size_t plane = g.activation.plane();
      double wmax = 0.0, err = 0.0;
      for (double w : g.weights) wmax = std::max(wmax, std::abs(w));
      for (int c = 0; c < g.activation.c(); ++c) {
        const double eps = 1e-2;
        Tensor up = g.activation, down = g.activation;
        for (std::size_t i = 0; i < plane; ++i) {
          up.sample(0)[plane * c + i] += static_cast<float>(eps);
          down.sample(0)[plane * c + i] -= static_cast<float>(eps);
        }
        const double fd = (score(up) - score(down)) / (2 * eps) / static_cast<double>(plane);
        err = std::max(err, std::abs(fd - g.weights[c]));
      }
      const double rel = wmax > 0 ? err / wmax : err;
      worst = std::max(worst, rel);
      if (rel > tolerance) f.add(tag + " smooth fixture: relative error " + std::to_string(rel));
    }
  }
  std::ostringstream d;
  d << trials << " resnet + " << trials << " smooth fixtures, worst relative error " << worst;
  return f.result(d.str());
}

// --- Defense invariants ---------------------------------------------------------

PropertyResult defense_invariants(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Failures f;

  // Entropy stays within [0, log2 K] for arbitrary distributions.
  for (int t = 0; t < 2000; ++t) {
    const int k = 2 + static_cast<int>(rng() % 15);
    std::vector<float> p(k);
    std::exponential_distribution<float> e(1.0f);
    for (auto& v : p) v = (t % 7 == 0 && &v != &p[0]) ? 0.0f : e(rng);
    const float s = std::accumulate(p.begin(), p.end(), 0.0f);
    for (auto& v : p) v /= s;
    const double h = entropy_bits(p);
    if (!(h >= 0.0 && h <= std::log2(double(k)) + 1e-6)) f.add("entropy " + std::to_string(h) + " out of bounds");
  }
  {
    const Shape3 shape{16, 16, 3};
    const VictimModel model = random_resnet(shape, 5, 4, seed);
    std::vector<Image> overlays;
    for (int i = 0; i < 12; ++i) overlays.push_back(random_image(rng, 16, 16, 3, true));
    for (int i = 0; i < 6; ++i) {
      const double h = strip_entropy(model, random_image(rng, 16, 16, 3), overlays, 10, rng());
      if (!(h >= 0.0 && h <= std::log2(5.0) + 1e-6)) f.add("strip entropy out of bounds");
    }
  }

  // Anomaly index: invariant to shifting and positive scaling of the norms.
  for (int t = 0; t < 1000; ++t) {
    const int n = 3 + static_cast<int>(rng() % 20);
    std::vector<double> norms(n);
    std::uniform_real_distribution<double> u(0.0, 100.0);
    for (auto& v : norms) v = (t % 5 == 0) ? std::round(u(rng) / 20.0) : u(rng);
    const double shift = std::uniform_real_distribution<double>(-50.0, 50.0)(rng);
    const double scale = std::exp(std::uniform_real_distribution<double>(-3.0, 3.0)(rng));
    std::vector<double> moved(norms);
    for (auto& v : moved) v = shift + scale * v;
    const auto a = anomaly_indices(norms), b = anomaly_indices(moved);
    for (int i = 0; i < n; ++i)
      if (std::abs(a[i] - b[i]) > 1e-7 * std::max(1.0, std::abs(a[i]))) {
        f.add("anomaly index not location/scale invariant");
        break;
      }
  }

  // Pruned sets are nested in the ratio and take the least active channels.
  for (int t = 0; t < 500; ++t) {
    const int channels = 1 + static_cast<int>(rng() % 64);
    std::vector<double> act(channels);
    for (auto& v : act) v = static_cast<double>(rng() % 6);  // plenty of ties
    const auto order = prune_order(act);
    std::vector<double> ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.75, 0.95};
    std::vector<int> prev;
    for (double r : ratios) {
      const int pruned = static_cast<int>(std::floor(r * channels + 1e-9));
      std::vector<int> set(order.begin(), order.begin() + pruned);
      if (!std::equal(prev.begin(), prev.end(), set.begin())) f.add("pruning sets not nested");
      for (int c : set)
        for (int o = 0; o < channels; ++o)
          if (std::find(set.begin(), set.end(), o) == set.end() &&
              (act[o] < act[c] || (act[o] == act[c] && o < c)))
            f.add("pruned a channel ahead of a less active (or lower-index tie) channel");
      prev = set;
    }
  }
  {
    const Shape3 shape{16, 16, 3};
    const VictimModel model = random_resnet(shape, 3, 8, seed + 1);
    LabeledImages clean;
    clean.num_classes = 3;
    for (int i = 0; i < 12; ++i) {
      clean.images.push_back(random_image(rng, 16, 16, 3, true));
      clean.labels.push_back(i % 3);
    }
    std::vector<Image> triggered(clean.images.begin() + 6, clean.images.end());
    FinePruningConfig cfg;
    cfg.ratios = {0.0, 0.25, 0.5, 0.75};
    cfg.finetune_epochs = 1;
    const auto rep = fine_pruning(model, clean, clean, triggered, 0, cfg);
    for (std::size_t i = 1; i < rep.points.size(); ++i) {
      const auto& a = rep.points[i - 1].channels;
      const auto& b = rep.points[i].channels;
      if (a.size() > b.size() || !std::equal(a.begin(), a.end(), b.begin())) f.add("fine-pruning sets not nested");
    }
  }

  // Manifest replay: 10 records regenerate bit-exactly; tampering is caught.
  {
    const fs::path root = scratch_dir("p4");
    SyntheticSpec synth;
    synth.shape = {16, 16, 3};
    synth.num_classes = 3;
    synth.per_class = 10;
    synth.seed = seed;
    const auto train = write_synthetic_dataset(root / "train", synth);
    const auto images = load_images(train, synth.shape);
    InjectionSpec spec;
    spec.mode = InjectionMode::kMix;
    spec.noise_seed = seed;
    const auto tmpl = make_noise_template(synth.shape, spec.noise_seed);
    const auto gen = untrained_generator(images.images, spec, &tmpl, seed);
    save_generator(gen, root / "gen.bin");
    PoisonConfig cfg;
    cfg.rho = 10.0 / 30.0;
    cfg.selection_seed = seed;
    const auto ds = build_poisoned_dataset(train, synth.shape, gen, root / "gen.bin", spec, cfg, root / "poison");
    try {
      const auto rep = verify_manifest(root / "poison" / "poison.json", 10, seed);
      if (rep.rederived != 10) f.add("verify_manifest regenerated " + std::to_string(rep.rederived) + " of 10");
    } catch (const VerificationError& e) {
      f.add(std::string("clean manifest failed verification: ") + e.what());
    }
    Image img = load_image(ds.manifest.records.front().poisoned);
    img.pixels()[0] ^= 1;
    save_png(img, ds.manifest.records.front().poisoned);
    bool caught = false;
    try {
      verify_manifest(root / "poison" / "poison.json", ds.manifest.records.size(), seed);
    } catch (const VerificationError&) {
      caught = true;
    }
    if (!caught) f.add("a one-bit change to a poisoned image went unnoticed");
    fs::remove_all(root);
  }
  return f.result("entropy bounds, anomaly invariance, nested pruning, 10-record manifest replay");
}

}  // namespace sst::testing
