#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "../common/fixtures.hpp"
#include "../common/property_suites.hpp"
#include "sst/errors.hpp"
#include "sst/image_io.hpp"
#include "sst/poisoning.hpp"

namespace sst {
namespace {

namespace fs = std::filesystem;

DatasetManifest fake_manifest(int classes, int per_class) {
  DatasetManifest m;
  for (int k = 0; k < classes; ++k) m.class_names.push_back("c" + std::to_string(k));
  for (int k = 0; k < classes; ++k)
    for (int i = 0; i < per_class; ++i)
      m.samples.push_back({m.class_names[k] + "/" + std::to_string(i) + ".png", "unused", k});
  return m;
}

TEST(Selection, TenPercentOfFiftyThousand) {
  const auto m = fake_manifest(10, 5000);
  PoisonConfig cfg;
  cfg.rho = 0.1;
  const auto ids = select_poison_sources(m, cfg);
  EXPECT_EQ(ids.size(), 5000u);
  EXPECT_EQ(std::set<std::string>(ids.begin(), ids.end()).size(), ids.size());
  for (const auto& id : ids) EXPECT_NE(id.rfind("c0/", 0), 0u) << id;
}

TEST(Selection, ZeroRhoIsEmpty) {
  PoisonConfig cfg;
  cfg.rho = 0.0;
  EXPECT_TRUE(select_poison_sources(fake_manifest(3, 10), cfg).empty());
}

TEST(Selection, SeededAndOrdered) {
  const auto m = fake_manifest(4, 50);
  PoisonConfig cfg;
  cfg.rho = 0.2;
  cfg.selection_seed = 9;
  const auto a = select_poison_sources(m, cfg), b = select_poison_sources(m, cfg);
  EXPECT_EQ(a, b);
  cfg.selection_seed = 10;
  EXPECT_NE(a, select_poison_sources(m, cfg));
}

TEST(Selection, RejectsBadInputs) {
  const auto m = fake_manifest(3, 10);
  PoisonConfig cfg;
  cfg.rho = 1.5;
  EXPECT_THROW(select_poison_sources(m, cfg), ConfigError);
  cfg.rho = 0.1;
  cfg.target_label = 3;
  EXPECT_THROW(select_poison_sources(m, cfg), ConfigError);
  cfg.target_label = 0;
  cfg.rho = 0.9;  // 27 wanted, only 20 outside the target class
  EXPECT_THROW(select_poison_sources(m, cfg), ConfigError);
}

TEST(PoisonProperties, RandomManifests) {
  const auto r = testing::poisoning_invariants(500, 2);
  EXPECT_TRUE(r.pass) << r.detail;
}

class ManifestVerification : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = testing::scratch_dir("verify");
    SyntheticSpec synth;
    synth.shape = {16, 16, 3};
    synth.num_classes = 3;
    synth.per_class = 10;
    train_ = write_synthetic_dataset(root_ / "train", synth);
    const auto images = load_images(train_, synth.shape);
    spec_.mode = InjectionMode::kCorner;
    gen_ = testing::untrained_generator(images.images, spec_, nullptr, 7);
    save_generator(gen_, root_ / "gen.bin");
    PoisonConfig cfg;
    cfg.rho = 0.4;
    ds_ = build_poisoned_dataset(train_, synth.shape, gen_, root_ / "gen.bin", spec_, cfg, root_ / "poison");
    manifest_ = root_ / "poison" / "poison.json";
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path root_, manifest_;
  DatasetManifest train_;
  InjectionSpec spec_;
  TriggerGenerator gen_;
  PoisonedDataset ds_;
};

TEST_F(ManifestVerification, RoundTripAndReplay) {
  const auto loaded = load_poison_manifest(manifest_);
  EXPECT_EQ(loaded.records.size(), 12u);
  EXPECT_EQ(loaded.generator_id, gen_.id());
  EXPECT_EQ(loaded.to_json(), ds_.manifest.to_json());
  const auto rep = verify_manifest(manifest_, 10);
  EXPECT_EQ(rep.records, 12u);
  EXPECT_EQ(rep.rederived, 10u);
}

TEST_F(ManifestVerification, DetectsTamperedImage) {
  const auto& rec = ds_.manifest.records[3];
  Image img = load_image(rec.poisoned);
  img.pixels()[5] = static_cast<std::uint8_t>(img.pixels()[5] + 1);
  save_png(img, rec.poisoned);
  try {
    verify_manifest(manifest_, ds_.manifest.records.size());
    FAIL() << "tampering not detected";
  } catch (const VerificationError& e) {
    ASSERT_FALSE(e.violations().empty());
    EXPECT_NE(e.violations().front().find(rec.source_id), std::string::npos) << e.violations().front();
  }
}

TEST_F(ManifestVerification, DetectsDeletedImage) {
  fs::remove(ds_.manifest.records[0].poisoned);
  EXPECT_THROW(verify_manifest(manifest_, 0), VerificationError);
}

TEST_F(ManifestVerification, DetectsLabelEdit) {
  auto m = load_poison_manifest(manifest_);
  m.records[1].target_label = 2;
  EXPECT_THROW(verify_manifest(m, 0), VerificationError);
}

TEST(PatchStamp, BottomRightWhiteSquare) {
  const Image x = testing::solid_image(8, 8, 10, 10, 10);
  const Image y = stamp_patch(x, 3);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) EXPECT_EQ(y.at(r, c, 0), (r >= 5 && c >= 5) ? 255 : 10);
}

}  // namespace
}  // namespace sst
