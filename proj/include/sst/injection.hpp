#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sst/image.hpp"

namespace sst {

enum class InjectionMode { kMix, kCorner, kEdge };

std::string to_string(InjectionMode m);
InjectionMode parse_injection_mode(const std::string& s);

struct Rgb8 {
  std::uint8_t r = 139, g = 0, b = 0;
  bool operator==(const Rgb8&) const = default;
};

struct CornerParams {
  int max_corners = 100;
  double quality_level = 0.01;
  double min_distance = 10.0;
  int fill_size = 3;  // side of the square painted around each corner
};

struct EdgeParams {
  double threshold = 0.25;  // on gradient magnitude normalized to [0,1]
};

struct InjectionSpec {
  InjectionMode mode = InjectionMode::kMix;
  double alpha = 0.2;
  Rgb8 fill;
  CornerParams corner;
  EdgeParams edge;
  std::uint64_t noise_seed = 0;

  // Throws ParameterError on out-of-range fields.
  void validate() const;
  nlohmann::json to_json() const;
  static InjectionSpec from_json(const nlohmann::json& j);
  // Hash of the mode-relevant fields.
  std::string id() const;
};

struct NoiseTemplate {
  Image pixels;
  std::uint64_t seed = 0;
};

// I.i.d. uniform 8-bit noise, a pure function of (shape, seed).
NoiseTemplate make_noise_template(const Shape3& shape, std::uint64_t seed);

Image inject_mix(const Image& x, const NoiseTemplate& t, double alpha);

// --- Detectors ---------------------------------------------------------------

struct Corner {
  int row = 0, col = 0;
  double response = 0.0;
  bool operator==(const Corner& o) const { return row == o.row && col == o.col; }
};

// Sobel derivatives of the luminance image with replicate padding.
struct Gradients {
  int height = 0, width = 0;
  std::vector<double> gx, gy;
};
Gradients sobel(const Image& x);

// Minimum eigenvalue of the 3x3-summed structure tensor, row-major H*W.
std::vector<double> min_eigen_response(const Image& x);

// Shi-Tomasi good features, strongest first.
std::vector<Corner> detect_corners(const Image& x, const CornerParams& p);

// sqrt(gx^2 + gy^2) divided by its largest attainable value, so in [0,1].
std::vector<double> edge_magnitude(const Image& x);

// Row-major H*W mask, 1 where the normalized magnitude >= threshold.
std::vector<std::uint8_t> detect_edges(const Image& x, const EdgeParams& p);

// --- Injection ---------------------------------------------------------------

struct InjectionResult {
  Image image;
  bool no_features = false;  // corner/edge mode found nothing to paint
  std::size_t painted = 0;   // pixels overwritten by the fill colour
};

InjectionResult inject_corner(const Image& x, const InjectionSpec& spec);
InjectionResult inject_edge(const Image& x, const InjectionSpec& spec);

// Dispatches on spec.mode. The template is required for mix mode
// (MissingTemplateError otherwise) and ignored by the other modes.
InjectionResult inject_detailed(const Image& x, const InjectionSpec& spec, const NoiseTemplate* t);
Image inject(const Image& x, const InjectionSpec& spec, const NoiseTemplate* t);

}  // namespace sst
