#include "sst/injection.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "sst/errors.hpp"
#include "sst/util.hpp"

namespace sst {

std::string to_string(InjectionMode m) {
  switch (m) {
    case InjectionMode::kMix:
      return "mix";
    case InjectionMode::kCorner:
      return "corner";
    case InjectionMode::kEdge:
      return "edge";
  }
  return "?";
}

InjectionMode parse_injection_mode(const std::string& s) {
  if (s == "mix") return InjectionMode::kMix;
  if (s == "corner") return InjectionMode::kCorner;
  if (s == "edge") return InjectionMode::kEdge;
  throw ParameterError("unknown injection mode '" + s + "' (expected mix|corner|edge)");
}

void InjectionSpec::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in [0,1]");
  if (corner.max_corners < 0) throw ParameterError("max_corners must be non-negative");
  if (!(corner.quality_level > 0.0 && corner.quality_level < 1.0))
    throw ParameterError("quality_level must lie in (0,1)");
  if (!(corner.min_distance >= 0.0)) throw ParameterError("min_distance must be non-negative");
  if (corner.fill_size < 1) throw ParameterError("fill_size must be at least 1");
  if (!(edge.threshold > 0.0 && edge.threshold <= 1.0)) throw ParameterError("edge threshold must lie in (0,1]");
}

nlohmann::json InjectionSpec::to_json() const {
  return {{"mode", to_string(mode)},
          {"alpha", alpha},
          {"fill", {fill.r, fill.g, fill.b}},
          {"max_corners", corner.max_corners},
          {"quality_level", corner.quality_level},
          {"min_distance", corner.min_distance},
          {"fill_size", corner.fill_size},
          {"edge_threshold", edge.threshold},
          {"noise_seed", noise_seed}};
}

InjectionSpec InjectionSpec::from_json(const nlohmann::json& j) {
  InjectionSpec s;
  s.mode = parse_injection_mode(j.at("mode").get<std::string>());
  s.alpha = j.value("alpha", s.alpha);
  if (j.contains("fill")) {
    const auto f = j.at("fill").get<std::vector<int>>();
    if (f.size() != 3) throw ParameterError("fill colour needs three components");
    for (int v : f)
      if (v < 0 || v > 255) throw ParameterError("fill colour components must be 0..255");
    s.fill = {static_cast<std::uint8_t>(f[0]), static_cast<std::uint8_t>(f[1]), static_cast<std::uint8_t>(f[2])};
  }
  s.corner.max_corners = j.value("max_corners", s.corner.max_corners);
  s.corner.quality_level = j.value("quality_level", s.corner.quality_level);
  s.corner.min_distance = j.value("min_distance", s.corner.min_distance);
  s.corner.fill_size = j.value("fill_size", s.corner.fill_size);
  s.edge.threshold = j.value("edge_threshold", s.edge.threshold);
  s.noise_seed = j.value("noise_seed", s.noise_seed);
  s.validate();
  return s;
}

std::string InjectionSpec::id() const {
  nlohmann::json j{{"mode", to_string(mode)}};
  switch (mode) {
    case InjectionMode::kMix:
      j["alpha"] = alpha;
      j["noise_seed"] = noise_seed;
      break;
    case InjectionMode::kCorner:
      j["fill"] = {fill.r, fill.g, fill.b};
      j["corner"] = {corner.max_corners, corner.quality_level, corner.min_distance, corner.fill_size};
      break;
    case InjectionMode::kEdge:
      j["fill"] = {fill.r, fill.g, fill.b};
      j["edge_threshold"] = edge.threshold;
      break;
  }
  return to_string(mode) + "-" + hash_string(j.dump()).substr(0, 12);
}

NoiseTemplate make_noise_template(const Shape3& shape, std::uint64_t seed) {
  Image img(shape.height, shape.width, shape.channels);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> d(0, 255);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(d(rng));
  return {std::move(img), seed};
}

Image inject_mix(const Image& x, const NoiseTemplate& t, double alpha) {
  if (!(x.shape() == t.pixels.shape()))
    throw ShapeError("noise template " + t.pixels.shape().str() + " does not match image " + x.shape().str());
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in [0,1]");
  Image out = x;
  auto dst = out.pixels();
  const auto src = x.pixels();
  const auto noise = t.pixels.pixels();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const double v = (1.0 - alpha) * src[i] + alpha * noise[i];
    dst[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return out;
}

// --- Detectors ---------------------------------------------------------------

Gradients sobel(const Image& x) {
  const int h = x.height(), w = x.width();
  const auto g = to_gray(x);
  auto at = [&](int r, int c) { return g[static_cast<std::size_t>(std::clamp(r, 0, h - 1)) * w + std::clamp(c, 0, w - 1)]; };
  Gradients out{h, w, std::vector<double>(g.size()), std::vector<double>(g.size())};
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double tl = at(r - 1, c - 1), t = at(r - 1, c), tr = at(r - 1, c + 1);
      const double l = at(r, c - 1), rt = at(r, c + 1);
      const double bl = at(r + 1, c - 1), b = at(r + 1, c), br = at(r + 1, c + 1);
      const std::size_t i = static_cast<std::size_t>(r) * w + c;
      out.gx[i] = (tr + 2 * rt + br) - (tl + 2 * l + bl);
      out.gy[i] = (bl + 2 * b + br) - (tl + 2 * t + tr);
    }
  return out;
}

std::vector<double> min_eigen_response(const Image& x) {
  const Gradients d = sobel(x);
  const int h = d.height, w = d.width;
  const std::size_t n = d.gx.size();
  std::vector<double> xx(n), xy(n), yy(n);
  for (std::size_t i = 0; i < n; ++i) {
    xx[i] = d.gx[i] * d.gx[i];
    xy[i] = d.gx[i] * d.gy[i];
    yy[i] = d.gy[i] * d.gy[i];
  }
  std::vector<double> resp(n);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double a = 0, b = 0, cc = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const std::size_t j = static_cast<std::size_t>(std::clamp(r + dy, 0, h - 1)) * w + std::clamp(c + dx, 0, w - 1);
          a += xx[j];
          b += xy[j];
          cc += yy[j];
        }
      const double half = 0.5 * (a - cc);
      resp[static_cast<std::size_t>(r) * w + c] = 0.5 * (a + cc) - std::sqrt(half * half + b * b);
    }
  return resp;
}

std::vector<Corner> detect_corners(const Image& x, const CornerParams& p) {
  const int h = x.height(), w = x.width();
  const auto resp = min_eigen_response(x);
  const double peak = *std::max_element(resp.begin(), resp.end());
  // Flat images give only rounding-level responses.
  if (!(peak > 1e-12)) return {};
  const double thresh = p.quality_level * peak;
  std::vector<Corner> cand;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const double v = resp[static_cast<std::size_t>(r) * w + c];
      if (v <= thresh) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int rr = r + dy, cc = c + dx;
          if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
          if (resp[static_cast<std::size_t>(rr) * w + cc] > v) {
            is_max = false;
            break;
          }
        }
      if (is_max) cand.push_back({r, c, v});
    }
  std::stable_sort(cand.begin(), cand.end(), [](const Corner& a, const Corner& b) { return a.response > b.response; });
  std::vector<Corner> out;
  const double md2 = p.min_distance * p.min_distance;
  for (const auto& k : cand) {
    if (static_cast<int>(out.size()) >= p.max_corners) break;
    bool ok = true;
    for (const auto& o : out) {
      const double dr = k.row - o.row, dc = k.col - o.col;
      if (dr * dr + dc * dc < md2) {
        ok = false;
        break;
      }
    }
    if (ok) out.push_back(k);
  }
  return out;
}

std::vector<double> edge_magnitude(const Image& x) {
  const Gradients d = sobel(x);
  // Each derivative is bounded by 4 on the [0,1] scale.
  const double norm = 4.0 * std::sqrt(2.0);
  std::vector<double> m(d.gx.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::min(1.0, std::hypot(d.gx[i], d.gy[i]) / norm);
  return m;
}

std::vector<std::uint8_t> detect_edges(const Image& x, const EdgeParams& p) {
  if (!(p.threshold > 0.0 && p.threshold <= 1.0)) throw ParameterError("edge threshold must lie in (0,1]");
  const auto m = edge_magnitude(x);
  std::vector<std::uint8_t> mask(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) mask[i] = m[i] >= p.threshold ? 1 : 0;
  return mask;
}

// --- Injection ---------------------------------------------------------------

namespace {

std::size_t paint(Image& img, int r, int c, const Rgb8& fill) {
  const std::uint8_t rgb[3] = {fill.r, fill.g, fill.b};
  if (img.channels() == 1) {
    img.at(r, c, 0) = static_cast<std::uint8_t>(std::lround(0.299 * fill.r + 0.587 * fill.g + 0.114 * fill.b));
  } else {
    for (int k = 0; k < 3; ++k) img.at(r, c, k) = rgb[k];
  }
  return 1;
}

}  // namespace

InjectionResult inject_corner(const Image& x, const InjectionSpec& spec) {
  InjectionResult res{x, false, 0};
  const auto corners = detect_corners(x, spec.corner);
  if (corners.empty()) {
    res.no_features = true;
    return res;
  }
  const int lo = (spec.corner.fill_size - 1) / 2, hi = spec.corner.fill_size / 2;
  std::vector<std::uint8_t> done(static_cast<std::size_t>(x.height()) * x.width(), 0);
  for (const auto& k : corners)
    for (int r = k.row - lo; r <= k.row + hi; ++r)
      for (int c = k.col - lo; c <= k.col + hi; ++c) {
        if (r < 0 || r >= x.height() || c < 0 || c >= x.width()) continue;
        auto& d = done[static_cast<std::size_t>(r) * x.width() + c];
        if (!d) res.painted += paint(res.image, r, c, spec.fill);
        d = 1;
      }
  return res;
}

InjectionResult inject_edge(const Image& x, const InjectionSpec& spec) {
  InjectionResult res{x, false, 0};
  const auto mask = detect_edges(x, spec.edge);
  for (int r = 0; r < x.height(); ++r)
    for (int c = 0; c < x.width(); ++c)
      if (mask[static_cast<std::size_t>(r) * x.width() + c]) res.painted += paint(res.image, r, c, spec.fill);
  res.no_features = res.painted == 0;
  return res;
}

InjectionResult inject_detailed(const Image& x, const InjectionSpec& spec, const NoiseTemplate* t) {
  switch (spec.mode) {
    case InjectionMode::kMix: {
      if (!t) throw MissingTemplateError("mix injection needs a noise template");
      return {inject_mix(x, *t, spec.alpha), false, 0};
    }
    case InjectionMode::kCorner:
      return inject_corner(x, spec);
    case InjectionMode::kEdge:
      return inject_edge(x, spec);
  }
  throw ParameterError("unhandled injection mode");
}

Image inject(const Image& x, const InjectionSpec& spec, const NoiseTemplate* t) {
  return inject_detailed(x, spec, t).image;
}

}  // namespace sst
