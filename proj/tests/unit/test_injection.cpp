#include <algorithm>
#include <numeric>

#include <gtest/gtest.h>

#include "../common/fixtures.hpp"
#include "sst/errors.hpp"
#include "sst/image_io.hpp"
#include "sst/injection.hpp"

namespace sst {
namespace {

using testing::solid_image;

TEST(Mix, BlendArithmetic) {
  const Image x = solid_image(4, 4, 100, 100, 100);
  NoiseTemplate t{solid_image(4, 4, 200, 200, 200), 0};
  const Image y = inject_mix(x, t, 0.2);
  for (auto p : y.pixels()) EXPECT_EQ(p, 120);
}

TEST(Mix, AlphaBounds) {
  const Image x = solid_image(4, 4, 1, 2, 3);
  NoiseTemplate t{solid_image(4, 4, 9, 9, 9), 0};
  EXPECT_EQ(inject_mix(x, t, 0.0), x);
  EXPECT_EQ(inject_mix(x, t, 1.0), t.pixels);
  EXPECT_THROW(inject_mix(x, t, 1.5), ParameterError);
}

TEST(Mix, TemplateShapeMustMatch) {
  NoiseTemplate t = make_noise_template({8, 8, 3}, 1);
  EXPECT_THROW(inject_mix(Image(4, 4, 3), t, 0.2), ShapeError);
}

TEST(Mix, MissingTemplate) {
  InjectionSpec spec;
  EXPECT_THROW(inject(Image(4, 4, 3), spec, nullptr), MissingTemplateError);
}

TEST(NoiseTemplate, DeterministicAndRoughlyUniform) {
  const auto a = make_noise_template({32, 32, 3}, 42), b = make_noise_template({32, 32, 3}, 42);
  const auto c = make_noise_template({32, 32, 3}, 43);
  EXPECT_EQ(a.pixels, b.pixels);
  EXPECT_NE(a.pixels, c.pixels);
  const auto px = a.pixels.pixels();
  const double mean = std::accumulate(px.begin(), px.end(), 0.0) / px.size();
  EXPECT_GE(mean, 120.0);
  EXPECT_LE(mean, 135.0);
}

Image checkerboard(int size, int cell) {
  Image img(size, size, 3);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      const std::uint8_t v = ((r / cell + c / cell) % 2) ? 255 : 0;
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = v;
    }
  return img;
}

TEST(Corners, CheckerboardJunctions) {
  CornerParams p;
  p.min_distance = 4;
  const auto corners = detect_corners(checkerboard(32, 8), p);
  ASSERT_FALSE(corners.empty());
  // Every detection sits next to an interior cell junction (multiples of 8).
  for (const auto& k : corners) {
    const int dr = std::min(k.row % 8, 8 - k.row % 8), dc = std::min(k.col % 8, 8 - k.col % 8);
    EXPECT_LE(dr, 1) << k.row << "," << k.col;
    EXPECT_LE(dc, 1) << k.row << "," << k.col;
  }
  // All nine interior junctions are found.
  EXPECT_GE(corners.size(), 9u);
  for (std::size_t i = 1; i < corners.size(); ++i) EXPECT_GE(corners[i - 1].response, corners[i].response);
}

TEST(Corners, SinglePixel) {
  Image img(16, 16, 3);
  for (int ch = 0; ch < 3; ++ch) img.at(8, 8, ch) = 255;
  const auto corners = detect_corners(img, CornerParams{});
  ASSERT_FALSE(corners.empty());
  EXPECT_LE(std::abs(corners[0].row - 8), 1);
  EXPECT_LE(std::abs(corners[0].col - 8), 1);
}

TEST(Corners, FlatImageHasNone) {
  EXPECT_TRUE(detect_corners(solid_image(16, 16, 80, 80, 80), CornerParams{}).empty());
  InjectionSpec spec;
  spec.mode = InjectionMode::kCorner;
  const auto r = inject_detailed(solid_image(16, 16, 80, 80, 80), spec, nullptr);
  EXPECT_TRUE(r.no_features);
  EXPECT_EQ(r.image, solid_image(16, 16, 80, 80, 80));
}

TEST(Corners, MaxCornersAndSpacing) {
  CornerParams p;
  p.max_corners = 3;
  p.min_distance = 5;
  const auto corners = detect_corners(checkerboard(32, 4), p);
  EXPECT_EQ(corners.size(), 3u);
  for (std::size_t i = 0; i < corners.size(); ++i)
    for (std::size_t j = i + 1; j < corners.size(); ++j) {
      const double dr = corners[i].row - corners[j].row, dc = corners[i].col - corners[j].col;
      EXPECT_GE(dr * dr + dc * dc, 25.0);
    }
}

TEST(Corners, InjectionPaintsFill) {
  InjectionSpec spec;
  spec.mode = InjectionMode::kCorner;
  const Image x = checkerboard(32, 8);
  const auto r = inject_detailed(x, spec, nullptr);
  EXPECT_FALSE(r.no_features);
  EXPECT_GT(r.painted, 0u);
  const auto k = detect_corners(x, spec.corner).front();
  EXPECT_EQ(r.image.at(k.row, k.col, 0), 139);
  EXPECT_EQ(r.image.at(k.row, k.col, 1), 0);
  EXPECT_EQ(r.image.at(k.row, k.col, 2), 0);
}

TEST(Edges, VerticalStep) {
  Image img(16, 16, 3);
  for (int r = 0; r < 16; ++r)
    for (int c = 8; c < 16; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = 255;
  const auto mask = detect_edges(img, EdgeParams{});
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) EXPECT_EQ(mask[r * 16 + c], (c == 7 || c == 8) ? 1 : 0) << r << "," << c;
  // A full-contrast step gives 4 / (4 sqrt 2) on the normalized scale.
  EXPECT_NEAR(edge_magnitude(img)[7], 1.0 / std::sqrt(2.0), 1e-12);
}

TEST(Edges, FlatImageHasNone) {
  InjectionSpec spec;
  spec.mode = InjectionMode::kEdge;
  const auto r = inject_detailed(solid_image(16, 16, 3, 4, 5), spec, nullptr);
  EXPECT_TRUE(r.no_features);
  EXPECT_EQ(r.painted, 0u);
}

TEST(Edges, NaturalPhotoCoverage) {
  const Image img = load_image(SST_TEST_DATA "/astronaut_128.png");
  const auto mask = detect_edges(img, EdgeParams{});
  const double frac = std::accumulate(mask.begin(), mask.end(), 0.0) / mask.size();
  EXPECT_GT(frac, 0.005);
  EXPECT_LT(frac, 0.5);
}

TEST(Edges, ThresholdValidated) {
  EXPECT_THROW(detect_edges(Image(8, 8, 3), EdgeParams{0.0}), ParameterError);
  EXPECT_THROW(detect_edges(Image(8, 8, 3), EdgeParams{1.5}), ParameterError);
}

TEST(Spec, JsonRoundTripAndId) {
  InjectionSpec s;
  s.mode = InjectionMode::kEdge;
  s.edge.threshold = 0.3;
  s.fill = {1, 2, 3};
  const auto back = InjectionSpec::from_json(s.to_json());
  EXPECT_EQ(back.mode, s.mode);
  EXPECT_EQ(back.fill, s.fill);
  EXPECT_EQ(back.id(), s.id());
  InjectionSpec other = s;
  other.edge.threshold = 0.4;
  EXPECT_NE(other.id(), s.id());
}

TEST(Spec, ModeParsing) {
  EXPECT_EQ(parse_injection_mode("corner"), InjectionMode::kCorner);
  EXPECT_THROW(parse_injection_mode("blur"), ParameterError);
}

}  // namespace
}  // namespace sst
