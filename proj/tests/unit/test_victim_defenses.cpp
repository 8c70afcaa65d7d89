#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "../common/fixtures.hpp"
#include "../common/property_suites.hpp"
#include "sst/defenses.hpp"
#include "sst/errors.hpp"
#include "sst/layers.hpp"
#include "sst/victim.hpp"

namespace sst {
namespace {

using testing::solid_image;
const Shape3 kShape{8, 8, 3};

std::vector<Image> some_images(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) out.push_back(testing::random_image(rng, 8, 8, 3, i % 2 == 0));
  return out;
}

TEST(Asr, ConstantTargetModelScoresOne) {
  const auto m = testing::constant_model(kShape, 4, 2);
  const auto xs = some_images(20, 1);
  const auto r = asr_of(m, xs, 2);
  EXPECT_EQ(r.asr, 1.0);
  EXPECT_EQ(r.count, 20u);
}

TEST(Asr, AvoidingModelScoresZero) {
  const auto m = testing::avoiding_model(kShape, 4, 2);
  EXPECT_EQ(asr_of(m, some_images(20, 2), 2).asr, 0.0);
}

TEST(Asr, NonTargetFilterExcludesTargetClass) {
  LabeledImages test;
  test.num_classes = 3;
  test.images = some_images(9, 3);
  test.labels = {0, 1, 2, 0, 1, 2, 0, 1, 2};
  EXPECT_EQ(non_target_images(test, 0).size(), 6u);
}

TEST(Cda, PrototypeModelIsPerfect) {
  const std::vector<std::vector<float>> protos{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 1}};
  const auto m = testing::prototype_model(kShape, protos);
  LabeledImages test;
  test.num_classes = 4;
  for (int k = 0; k < 4; ++k)
    for (int rep = 0; rep < 3; ++rep) {
      const auto& p = protos[k];
      // Slightly off-prototype colours still land on the right class.
      const auto v = [&](float c) { return static_cast<std::uint8_t>(c > 0 ? 230 - 5 * rep : 20 + 5 * rep); };
      test.images.push_back(solid_image(8, 8, v(p[0]), v(p[1]), v(p[2])));
      test.labels.push_back(k);
    }
  EXPECT_EQ(compute_cda(m, test), 1.0);
}

TEST(Cda, ConstantModelScoresClassShare) {
  const auto m = testing::constant_model(kShape, 4, 1);
  LabeledImages test;
  test.num_classes = 4;
  test.images = some_images(8, 4);
  test.labels = {0, 1, 2, 3, 1, 1, 0, 2};
  EXPECT_DOUBLE_EQ(compute_cda(m, test), 3.0 / 8.0);
}

TEST(Predict, AllZeroLogitsPickLabelZero) {
  const auto m = testing::mean_colour_model(kShape, 5, std::vector<float>(15, 0.0f), std::vector<float>(5, 0.0f));
  const auto p = predict(m, solid_image(8, 8, 50, 60, 70));
  EXPECT_EQ(p.label, 0);
  for (float v : p.probs) EXPECT_NEAR(v, 0.2f, 1e-6f);
}

TEST(Residual, ApplyRecoversTriggeredImage) {
  const auto xs = some_images(2, 5);
  const auto d = trigger_residual(xs[0], xs[1]);
  EXPECT_EQ(apply_residual(xs[0], d), xs[1]);
  EXPECT_EQ(apply_residual(xs[0], std::vector<int>(d.size(), 0)), xs[0]);
}

TEST(Victim, LrSchedule) {
  VictimHyper h;
  EXPECT_DOUBLE_EQ(h.lr_at(0), 0.001);
  EXPECT_NEAR(h.lr_at(15), 1e-4, 1e-12);
  EXPECT_NEAR(h.lr_at(35), 1e-5, 1e-12);
}

TEST(Victim, TrainingIsSeededAndSaveLoadRoundTrips) {
  LabeledImages data;
  data.num_classes = 2;
  for (int i = 0; i < 16; ++i) {
    data.images.push_back(i % 2 ? solid_image(16, 16, 220, 30, 30) : solid_image(16, 16, 30, 30, 220));
    data.labels.push_back(i % 2);
  }
  VictimHyper h;
  h.width = 4;
  h.stage_blocks = {1, 1};
  h.epochs = 3;
  h.batch_size = 8;
  h.learning_rate = 0.05;
  h.seed = 11;
  const auto a = train_victim(data, h, {"blue", "red"});
  const auto b = train_victim(data, h, {"blue", "red"});
  EXPECT_EQ(a.id(), b.id());
  EXPECT_EQ(a.log.size(), 3u);
  const auto dir = testing::scratch_dir("victim");
  save_victim(a, dir / "v.bin");
  const auto back = load_victim(dir / "v.bin");
  EXPECT_EQ(back.id(), a.id());
  EXPECT_EQ(back.class_names, a.class_names);
  EXPECT_EQ(predict_probs(back, data.images), predict_probs(a, data.images));
  std::filesystem::remove_all(dir);
}

// --- Neural Cleanse ---------------------------------------------------------------

TEST(AnomalyIndex, HandComputedExample) {
  // median 9, deviations {1,0,1,2,7}, MAD 1.
  const auto a = anomaly_indices({8, 9, 10, 11, 2});
  EXPECT_NEAR(a[4], 7.0 / 1.4826, 1e-12);
  EXPECT_NEAR(a[4], 4.72, 0.005);
  EXPECT_NEAR(a[1], 0.0, 1e-12);
}

TEST(AnomalyIndex, ZeroMadGivesZeros) {
  for (double v : anomaly_indices({3, 3, 3, 3, 9})) EXPECT_EQ(v, 0.0);
}

// --- STRIP -----------------------------------------------------------------------

TEST(Strip, UniformEntropy) {
  const std::vector<float> p(10, 0.1f);
  EXPECT_NEAR(entropy_bits(p), std::log2(10.0), 1e-6);
  const std::vector<float> one_hot{0, 1, 0};
  EXPECT_EQ(entropy_bits(one_hot), 0.0);
}

TEST(Strip, BlendRoundsHalfUp) {
  const Image a = solid_image(2, 2, 0, 1, 254), b = solid_image(2, 2, 1, 2, 255);
  const Image c = blend_half(a, b);
  EXPECT_EQ(c.at(0, 0, 0), 1);
  EXPECT_EQ(c.at(0, 0, 1), 2);
  EXPECT_EQ(c.at(0, 0, 2), 255);
}

TEST(Strip, IdenticalPopulationsAreIndistinguishable) {
  const auto model = testing::random_resnet({16, 16, 3}, 4, 4, 3);
  std::mt19937_64 rng(8);
  std::vector<Image> clean, overlays;
  for (int i = 0; i < 40; ++i) clean.push_back(testing::random_image(rng, 16, 16, 3, true));
  for (int i = 0; i < 20; ++i) overlays.push_back(testing::random_image(rng, 16, 16, 3, true));
  const auto r = strip_sweep(model, clean, clean, overlays, 10, 1);
  EXPECT_FALSE(r.distinguishable);
  EXPECT_NEAR(r.auc, 0.5, 0.15);
  EXPECT_LE(r.false_rejection, 0.05);
}

TEST(Strip, AucOfSeparatedScores) {
  EXPECT_DOUBLE_EQ(auc_lower_is_positive({0.1, 0.2}, {0.5, 0.6, 0.7}), 1.0);
  EXPECT_DOUBLE_EQ(auc_lower_is_positive({0.9}, {0.5, 0.6}), 0.0);
  EXPECT_DOUBLE_EQ(auc_lower_is_positive({0.5}, {0.5}), 0.5);
}

// --- Grad-CAM --------------------------------------------------------------------

// 1x1 conv colour detectors (red, green) -> ReLU -> mask -> pool -> identity.
VictimModel colour_detector() {
  std::mt19937_64 rng(0);
  std::vector<std::unique_ptr<Layer>> L;
  auto conv = std::make_unique<Conv2d>(3, 2, ConvGeometry{1, 1, 0}, true, rng);
  conv->weight().value.vec() = {1, -1, -1, -1, 1, -1};
  L.push_back(std::move(conv));
  L.push_back(std::make_unique<ReLU>());
  L.push_back(std::make_unique<ChannelMask>(2));
  L.push_back(std::make_unique<GlobalAvgPool>());
  L.push_back(std::make_unique<Linear>(2, 2, rng));
  ArchSpec spec;
  spec.id = "fixture";
  spec.input = kShape;
  spec.num_classes = 2;
  VictimModel m{Network(spec, std::move(L), 1), {}, {"red", "green"}, {}};
  auto params = m.net.params();
  params[1]->value.fill(0.0f);  // conv bias
  params[2]->value.vec() = {1, 0, 0, 1};
  params[3]->value.fill(0.0f);
  return m;
}

TEST(GradCam, HighlightsTheTriggerQuadrant) {
  const auto m = colour_detector();
  Image x = solid_image(8, 8, 90, 90, 90);
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      x.at(r, c, 0) = 255;
      x.at(r, c, 1) = x.at(r, c, 2) = 0;
    }
  EXPECT_EQ(predict(m, x).label, 0);
  const auto cam = gradcam(m, x);
  double total = 0, quadrant = 0;
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      total += cam[r * 8 + c];
      if (r < 4 && c < 4) quadrant += cam[r * 8 + c];
    }
  ASSERT_GT(total, 0.0);
  EXPECT_GE(quadrant / total, 0.6);
  EXPECT_DOUBLE_EQ(*std::max_element(cam.begin(), cam.end()), 1.0);
}

TEST(GradCam, CosineCases) {
  EXPECT_DOUBLE_EQ(cosine_similarity({0, 0}, {0, 0}), 1.0);
  EXPECT_DOUBLE_EQ(cosine_similarity({0, 0}, {1, 0}), 0.0);
  EXPECT_NEAR(cosine_similarity({1, 2}, {2, 4}), 1.0, 1e-12);
  EXPECT_NEAR(cosine_similarity({1, 0}, {0, 1}), 0.0, 1e-12);
  EXPECT_THROW(cosine_similarity({1}, {1, 2}), ShapeError);
}

TEST(GradCam, GradientsMatchFiniteDifferences) {
  const auto r = testing::gradcam_gradient_check(8, 3, 1e-3);
  EXPECT_TRUE(r.pass) << r.detail;
}

// --- Fine-pruning -----------------------------------------------------------------

TEST(FinePruning, OrderPutsDeadChannelFirst) {
  EXPECT_EQ(prune_order({0.5, 0.0, 0.2, 0.2}), (std::vector<int>{1, 2, 3, 0}));
}

TEST(FinePruning, RatioZeroLeavesModelUntouched) {
  const auto model = testing::random_resnet({16, 16, 3}, 3, 4, 21);
  LabeledImages clean;
  clean.num_classes = 3;
  std::mt19937_64 rng(2);
  for (int i = 0; i < 9; ++i) {
    clean.images.push_back(testing::random_image(rng, 16, 16, 3, true));
    clean.labels.push_back(i % 3);
  }
  const std::string before = model.id();
  FinePruningConfig cfg;
  cfg.ratios = {0.0};
  const auto rep = fine_pruning(model, clean, clean, clean.images, 0, cfg);
  ASSERT_EQ(rep.points.size(), 1u);
  EXPECT_EQ(rep.points[0].pruned, 0);
  EXPECT_TRUE(rep.points[0].channels.empty());
  EXPECT_DOUBLE_EQ(rep.points[0].cda, compute_cda(model, clean));
  EXPECT_EQ(model.id(), before);
  cfg.ratios = {0.99};
  EXPECT_THROW(fine_pruning(model, clean, clean, clean.images, 0, cfg), ConfigError);
}

TEST(FinePruning, PrunesExactFloorOfRatio) {
  const auto model = testing::random_resnet({16, 16, 3}, 3, 5, 22);  // 10 feature channels
  LabeledImages clean;
  clean.num_classes = 3;
  std::mt19937_64 rng(3);
  for (int i = 0; i < 6; ++i) {
    clean.images.push_back(testing::random_image(rng, 16, 16, 3));
    clean.labels.push_back(i % 3);
  }
  FinePruningConfig cfg;
  cfg.ratios = {0.3, 0.55};
  cfg.finetune_epochs = 0;
  const auto rep = fine_pruning(model, clean, clean, clean.images, 0, cfg);
  EXPECT_EQ(rep.channels, 10);
  EXPECT_EQ(rep.points[0].pruned, 3);
  EXPECT_EQ(rep.points[1].pruned, 5);
}

TEST(DefenseProperties, Invariants) {
  const auto r = testing::defense_invariants(4);
  EXPECT_TRUE(r.pass) << r.detail;
}

}  // namespace
}  // namespace sst
