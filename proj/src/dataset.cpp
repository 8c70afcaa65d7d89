#include "sst/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <fstream>

#include "sst/errors.hpp"
#include "sst/image_io.hpp"
#include "sst/util.hpp"

namespace sst {

namespace fs = std::filesystem;

nlohmann::json DatasetManifest::to_json() const {
  nlohmann::json s = nlohmann::json::array();
  for (const auto& x : samples) s.push_back({{"id", x.id}, {"path", x.path.string()}, {"label", x.label}});
  return {{"class_names", class_names}, {"samples", s}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  for (const auto& s : j.at("samples"))
    m.samples.push_back({s.at("id").get<std::string>(), s.at("path").get<std::string>(), s.at("label").get<int>()});
  return m;
}

std::string DatasetManifest::digest() const { return hash_string(to_json().dump()); }

DatasetManifest scan_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root.string());
  DatasetManifest m;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) m.class_names.push_back(e.path().filename().string());
  std::sort(m.class_names.begin(), m.class_names.end());
  if (m.class_names.empty()) throw DataError("no class directories under " + root.string());
  for (std::size_t label = 0; label < m.class_names.size(); ++label) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(root / m.class_names[label])) {
      if (!e.is_regular_file()) continue;
      auto ext = e.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files)
      m.samples.push_back({m.class_names[label] + "/" + f.filename().string(), f, static_cast<int>(label)});
  }
  return m;
}

void save_dataset_manifest(const DatasetManifest& m, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IOError("cannot write " + path.string());
  out << m.to_json().dump(1) << '\n';
}

DatasetManifest load_dataset_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot read " + path.string());
  try {
    return DatasetManifest::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed dataset manifest " + path.string() + ": " + e.what());
  }
}

LabeledImages load_images(const DatasetManifest& m, const Shape3& shape, ResizePolicy policy) {
  LabeledImages out;
  out.num_classes = m.num_classes();
  out.images.resize(m.samples.size());
  out.labels.resize(m.samples.size());
  std::vector<std::string> errors(m.samples.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    try {
      out.images[i] = load_image(m.samples[i].path, shape, policy);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
    out.labels[i] = m.samples[i].label;
  }
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty()) throw DataError("failed to load " + m.samples[i].id + ": " + errors[i]);
  return out;
}

// --- Procedural rendering -----------------------------------------------------

namespace {

struct Rgb {
  double r, g, b;
};

class Canvas {
 public:
  Canvas(int h, int w) : h_(h), w_(w), px_(static_cast<std::size_t>(h) * w) {}
  int h() const { return h_; }
  int w() const { return w_; }
  Rgb& at(int r, int c) { return px_[static_cast<std::size_t>(r) * w_ + c]; }

  // Normalized coordinates in [-1, 1] at the pixel center.
  double u(int c) const { return (c + 0.5) / w_ * 2.0 - 1.0; }
  double v(int r) const { return (r + 0.5) / h_ * 2.0 - 1.0; }

  Image downsample(int factor, int channels) const {
    const int oh = h_ / factor, ow = w_ / factor;
    Image img(oh, ow, channels);
    for (int r = 0; r < oh; ++r)
      for (int c = 0; c < ow; ++c) {
        Rgb acc{0, 0, 0};
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) {
            const Rgb& p = px_[static_cast<std::size_t>(r * factor + dy) * w_ + c * factor + dx];
            acc.r += p.r;
            acc.g += p.g;
            acc.b += p.b;
          }
        const double inv = 1.0 / (factor * factor);
        const double rgb[3] = {acc.r * inv, acc.g * inv, acc.b * inv};
        auto q = [](double x) { return static_cast<std::uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0)); };
        if (channels == 1) {
          img.at(r, c, 0) = q(0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]);
        } else {
          for (int k = 0; k < 3; ++k) img.at(r, c, k) = q(rgb[k]);
        }
      }
    return img;
  }

 private:
  int h_, w_;
  std::vector<Rgb> px_;
};

using Rng = std::mt19937_64;

double uni(Rng& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

Rgb random_color(Rng& rng) { return {uni(rng, 0, 1), uni(rng, 0, 1), uni(rng, 0, 1)}; }

double luma(const Rgb& c) { return 0.299 * c.r + 0.587 * c.g + 0.114 * c.b; }

// Color whose luminance differs from `ref` by at least `gap`.
Rgb contrasting_color(Rng& rng, const Rgb& ref, double gap) {
  for (int tries = 0; tries < 64; ++tries) {
    Rgb c = random_color(rng);
    if (std::abs(luma(c) - luma(ref)) >= gap) return c;
  }
  const double l = luma(ref) > 0.5 ? 0.1 : 0.9;
  return {l, l, l};
}

// Smooth field: bilinear interpolation of a coarse random grid.
class ValueNoise {
 public:
  ValueNoise(Rng& rng, int cells) : n_(cells + 1), g_(static_cast<std::size_t>(n_) * n_) {
    for (auto& x : g_) x = uni(rng, -1, 1);
  }
  double at(double u, double v) const {  // u, v in [-1, 1]
    const double x = (u + 1) * 0.5 * (n_ - 1), y = (v + 1) * 0.5 * (n_ - 1);
    const int x0 = std::clamp(static_cast<int>(x), 0, n_ - 2), y0 = std::clamp(static_cast<int>(y), 0, n_ - 2);
    const double fx = x - x0, fy = y - y0;
    auto g = [&](int a, int b) { return g_[static_cast<std::size_t>(b) * n_ + a]; };
    return (1 - fy) * ((1 - fx) * g(x0, y0) + fx * g(x0 + 1, y0)) + fy * ((1 - fx) * g(x0, y0 + 1) + fx * g(x0 + 1, y0 + 1));
  }

 private:
  int n_;
  std::vector<double> g_;
};

void paint_background(Canvas& cv, Rng& rng, Rgb& mean_out) {
  const Rgb a = random_color(rng), b = random_color(rng);
  const double ang = uni(rng, 0, 2 * M_PI);
  const double dx = std::cos(ang), dy = std::sin(ang);
  ValueNoise noise(rng, 4);
  const double amp = uni(rng, 0.05, 0.18);
  mean_out = {(a.r + b.r) / 2, (a.g + b.g) / 2, (a.b + b.b) / 2};
  for (int r = 0; r < cv.h(); ++r)
    for (int c = 0; c < cv.w(); ++c) {
      const double t = std::clamp(0.5 + 0.5 * (cv.u(c) * dx + cv.v(r) * dy), 0.0, 1.0);
      const double n = amp * noise.at(cv.u(c), cv.v(r));
      cv.at(r, c) = {a.r + t * (b.r - a.r) + n, a.g + t * (b.g - a.g) + n, a.b + t * (b.b - a.b) + n};
    }
}

bool in_polygon(double x, double y, const std::vector<std::pair<double, double>>& poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto [xi, yi] = poly[i];
    const auto [xj, yj] = poly[j];
    if (((yi > y) != (yj > y)) && (x < (xj - xi) * (y - yi) / (yj - yi) + xi)) inside = !inside;
  }
  return inside;
}

// Membership test in the object's local frame, roughly the unit disk.
bool shape_contains(int cls, double x, double y) {
  const double r = std::hypot(x, y);
  switch (cls) {
    case 0:  // disk
      return r <= 1.0;
    case 1:  // square
      return std::abs(x) <= 0.8 && std::abs(y) <= 0.8;
    case 2: {  // triangle
      static const std::vector<std::pair<double, double>> tri{{0, -1}, {0.95, 0.75}, {-0.95, 0.75}};
      return in_polygon(x, y, tri);
    }
    case 3:  // plus
      return (std::abs(x) <= 0.3 && std::abs(y) <= 1.0) || (std::abs(y) <= 0.3 && std::abs(x) <= 1.0);
    case 4:  // ring
      return r <= 1.0 && r >= 0.6;
    case 5:  // grating: three bars inside a square
      return std::abs(x) <= 0.85 && std::abs(y) <= 0.85 && std::fmod(y + 0.85, 0.68) < 0.34;
    case 6: {  // five-pointed star
      static const std::vector<std::pair<double, double>> star = [] {
        std::vector<std::pair<double, double>> p;
        for (int k = 0; k < 10; ++k) {
          const double a = -M_PI / 2 + k * M_PI / 5;
          const double rad = (k % 2 == 0) ? 1.0 : 0.42;
          p.emplace_back(rad * std::cos(a), rad * std::sin(a));
        }
        return p;
      }();
      return in_polygon(x, y, star);
    }
    case 7:  // crescent
      return r <= 1.0 && std::hypot(x - 0.45, y) > 0.8;
    case 8:  // square frame
      return std::max(std::abs(x), std::abs(y)) <= 0.85 && std::max(std::abs(x), std::abs(y)) >= 0.55;
    case 9:  // pair of disks
      return std::hypot(x - 0.5, y) <= 0.45 || std::hypot(x + 0.5, y) <= 0.45;
    default:
      return false;
  }
}

void paint_object(Canvas& cv, Rng& rng, int cls, double size, double cx, double cy, const Rgb& bg) {
  const double rot = uni(rng, 0, 2 * M_PI);
  const double cr = std::cos(rot), sr = std::sin(rot);
  const Rgb col = contrasting_color(rng, bg, 0.25);
  const double shade_ang = uni(rng, 0, 2 * M_PI);
  for (int r = 0; r < cv.h(); ++r)
    for (int c = 0; c < cv.w(); ++c) {
      const double px = (cv.u(c) - cx) / size, py = (cv.v(r) - cy) / size;
      const double lx = cr * px + sr * py, ly = -sr * px + cr * py;
      if (!shape_contains(cls, lx, ly)) continue;
      const double shade = 0.85 + 0.15 * (lx * std::cos(shade_ang) + ly * std::sin(shade_ang));
      cv.at(r, c) = {col.r * shade, col.g * shade, col.b * shade};
    }
}

Image render_shapes(const SyntheticSpec& spec, int label, Rng& rng) {
  constexpr int kSuper = 2;
  Canvas cv(spec.shape.height * kSuper, spec.shape.width * kSuper);
  Rgb bg;
  paint_background(cv, rng, bg);
  // Optional small distractor from a random class, drawn first so the main
  // object stays on top.
  if (uni(rng, 0, 1) < 0.5) {
    const int other = std::uniform_int_distribution<int>(0, 9)(rng);
    paint_object(cv, rng, other, uni(rng, 0.12, 0.2), uni(rng, -0.75, 0.75), uni(rng, -0.75, 0.75), bg);
  }
  paint_object(cv, rng, label % 10, uni(rng, 0.42, 0.7), uni(rng, -0.25, 0.25), uni(rng, -0.25, 0.25), bg);
  Image img = cv.downsample(kSuper, spec.shape.channels);
  // Sensor noise.
  std::normal_distribution<double> noise(0.0, 3.0);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(std::clamp(std::lround(p + noise(rng)), 0L, 255L));
  return img;
}

// Identity-dependent facial layout with per-sample jitter.
Image render_face(const SyntheticSpec& spec, int label, Rng& rng) {
  Rng id_rng(mix64(spec.seed * 7919 + static_cast<std::uint64_t>(label)));
  const Rgb skin{uni(id_rng, 0.55, 0.95), uni(id_rng, 0.4, 0.75), uni(id_rng, 0.3, 0.6)};
  const Rgb hair{uni(id_rng, 0.0, 0.5), uni(id_rng, 0.0, 0.35), uni(id_rng, 0.0, 0.25)};
  const double eye_gap = uni(id_rng, 0.25, 0.42), eye_y = uni(id_rng, -0.25, -0.05);
  const double head_w = uni(id_rng, 0.55, 0.75), head_h = uni(id_rng, 0.75, 0.92);
  const double mouth_w = uni(id_rng, 0.15, 0.35), hair_line = uni(id_rng, -0.65, -0.35);

  constexpr int kSuper = 2;
  Canvas cv(spec.shape.height * kSuper, spec.shape.width * kSuper);
  Rgb bg;
  paint_background(cv, rng, bg);
  const double jx = uni(rng, -0.06, 0.06), jy = uni(rng, -0.06, 0.06), js = uni(rng, 0.92, 1.08);
  const double light = uni(rng, 0.8, 1.1);
  for (int r = 0; r < cv.h(); ++r)
    for (int c = 0; c < cv.w(); ++c) {
      const double x = (cv.u(c) - jx) / js, y = (cv.v(r) - jy) / js;
      const double e = (x / head_w) * (x / head_w) + (y / head_h) * (y / head_h);
      if (e > 1.0) continue;
      Rgb p{skin.r * light, skin.g * light, skin.b * light};
      if (y < hair_line + 0.1 * std::cos(x * 3.0)) p = hair;
      const bool eye = std::hypot(x - eye_gap, y - eye_y) < 0.08 || std::hypot(x + eye_gap, y - eye_y) < 0.08;
      if (eye) p = {0.08, 0.06, 0.05};
      if (std::abs(y - 0.45) < 0.04 && std::abs(x) < mouth_w) p = {0.55, 0.12, 0.15};
      if (std::abs(x) < 0.05 && y > eye_y + 0.08 && y < 0.28) p = {p.r * 0.85, p.g * 0.85, p.b * 0.85};
      cv.at(r, c) = p;
    }
  Image img = cv.downsample(kSuper, spec.shape.channels);
  std::normal_distribution<double> noise(0.0, 2.0);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(std::clamp(std::lround(p + noise(rng)), 0L, 255L));
  return img;
}

}  // namespace

SyntheticKind parse_synthetic_kind(const std::string& name) {
  if (name == "shapes") return SyntheticKind::kShapes;
  if (name == "faces") return SyntheticKind::kFaces;
  throw ParameterError("unknown synthetic corpus '" + name + "' (expected shapes|faces)");
}

std::vector<std::string> synthetic_class_names(const SyntheticSpec& spec) {
  static const char* kShapeNames[10] = {"disk", "square", "triangle", "plus", "ring",
                                        "grating", "star", "crescent", "frame", "pair"};
  std::vector<std::string> names;
  for (int k = 0; k < spec.num_classes; ++k) {
    char buf[64];
    if (spec.kind == SyntheticKind::kShapes)
      std::snprintf(buf, sizeof buf, "%02d_%s", k, kShapeNames[k % 10]);
    else
      std::snprintf(buf, sizeof buf, "%02d_person", k);
    names.emplace_back(buf);
  }
  return names;
}

Image render_synthetic(const SyntheticSpec& spec, int label, int index) {
  if (spec.kind == SyntheticKind::kShapes && spec.num_classes > 10)
    throw ParameterError("the shapes corpus has at most 10 classes");
  Rng rng(mix64(spec.seed ^ mix64(static_cast<std::uint64_t>(label) << 32 | static_cast<std::uint32_t>(index))));
  return spec.kind == SyntheticKind::kShapes ? render_shapes(spec, label, rng) : render_face(spec, label, rng);
}

DatasetManifest write_synthetic_dataset(const fs::path& root, const SyntheticSpec& spec) {
  const auto names = synthetic_class_names(spec);
  for (const auto& n : names) fs::create_directories(root / n);
  const int total = spec.num_classes * spec.per_class;
#pragma omp parallel for schedule(dynamic, 16)
  for (int i = 0; i < total; ++i) {
    const int label = i / spec.per_class, index = i % spec.per_class;
    char file[32];
    std::snprintf(file, sizeof file, "%05d.png", index);
    save_png(render_synthetic(spec, label, index), root / names[label] / file);
  }
  return scan_dataset(root);
}

}  // namespace sst
