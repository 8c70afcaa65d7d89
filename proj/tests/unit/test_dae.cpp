#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "../common/fixtures.hpp"
#include "sst/errors.hpp"
#include "sst/trigger.hpp"

namespace sst {
namespace {

namespace fs = std::filesystem;

std::vector<Image> benign(int n) {
  SyntheticSpec s;
  s.shape = {16, 16, 3};
  std::vector<Image> out;
  for (int i = 0; i < n; ++i) out.push_back(render_synthetic(s, i % 10, i));
  return out;
}

DaeTrainConfig tiny(int epochs) {
  DaeTrainConfig c;
  c.epochs = epochs;
  c.width = 4;
  c.stage_convs = {1, 1};
  c.batch_size = 8;
  c.learning_rate = 3e-3;
  c.min_samples = 10;
  c.seed = 5;
  return c;
}

InjectionSpec corner_spec() {
  InjectionSpec s;
  s.mode = InjectionMode::kCorner;
  return s;
}

TEST(Dae, ZeroEpochsReturnsInitialisedNetwork) {
  const auto xs = benign(20);
  const auto g = train_dae(xs, corner_spec(), nullptr, tiny(0));
  EXPECT_EQ(g.provenance().epochs_run, 0);
  EXPECT_TRUE(g.provenance().train_curve.empty());
  EXPECT_EQ(g.input_shape(), (Shape3{16, 16, 3}));
  const Image y = reconstruct(g, xs[0]);
  EXPECT_EQ(y.shape(), xs[0].shape());
}

TEST(Dae, DeterministicInSeed) {
  const auto xs = benign(24);
  const auto a = train_dae(xs, corner_spec(), nullptr, tiny(2));
  const auto b = train_dae(xs, corner_spec(), nullptr, tiny(2));
  EXPECT_EQ(a.id(), b.id());
  auto other = tiny(2);
  other.seed = 6;
  EXPECT_NE(train_dae(xs, corner_spec(), nullptr, other).id(), a.id());
}

TEST(Dae, TrainingReducesValidationLoss) {
  const auto xs = benign(40);
  const auto g = train_dae(xs, corner_spec(), nullptr, tiny(15));
  EXPECT_LT(g.provenance().final_val_loss, g.provenance().untrained_val_loss);
  EXPECT_EQ(g.provenance().val_curve.size(), 15u);
}

TEST(Dae, RejectsSmallOrMixedInput) {
  EXPECT_THROW(train_dae(benign(5), corner_spec(), nullptr, tiny(1)), DataError);
  auto xs = benign(12);
  xs.push_back(Image(8, 8, 3));
  EXPECT_THROW(train_dae(xs, corner_spec(), nullptr, tiny(1)), ShapeError);
  InjectionSpec mix;
  EXPECT_THROW(train_dae(benign(12), mix, nullptr, tiny(1)), MissingTemplateError);
}

TEST(Dae, ShapeAdapter) {
  const auto g = train_dae(benign(12), corner_spec(), nullptr, tiny(0));
  const Image big(32, 32, 3, 100);
  EXPECT_THROW(reconstruct(g, big), ShapeError);
  EXPECT_EQ(reconstruct(g, big, ShapeAdapter::kBilinear).shape(), big.shape());
}

// Each image's trigger must not depend on which images share its batch, or
// single-record manifest replay could differ in the last bit.
TEST(Dae, TriggerIndependentOfBatchComposition) {
  const auto data = benign(40);
  const auto gen = train_dae(data, corner_spec(), nullptr, tiny(3), "t");
  const auto many = benign(300);
  const auto batched = generate_trigger_images(gen, corner_spec(), nullptr, many);
  for (std::size_t i = 0; i < many.size(); ++i)
    ASSERT_TRUE(generate_trigger_image(gen, corner_spec(), nullptr, many[i]) == batched[i]) << "image " << i;
}

TEST(Dae, SaveLoadRoundTrip) {
  const auto xs = benign(12);
  const auto g = train_dae(xs, corner_spec(), nullptr, tiny(1));
  const auto dir = testing::scratch_dir("dae");
  save_generator(g, dir / "g.bin");
  const auto back = load_generator(dir / "g.bin");
  EXPECT_EQ(back.id(), g.id());
  EXPECT_EQ(back.provenance().spec.id(), g.provenance().spec.id());
  EXPECT_EQ(reconstruct(back, xs[3]), reconstruct(g, xs[3]));
  fs::remove_all(dir);
}

TEST(Dae, CorruptedFileRejected) {
  const auto g = train_dae(benign(12), corner_spec(), nullptr, tiny(0));
  const auto dir = testing::scratch_dir("dae_bad");
  save_generator(g, dir / "g.bin");
  {
    std::fstream f(dir / "g.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(fs::file_size(dir / "g.bin") / 2));
    f.put('\x5a');
  }
  EXPECT_THROW(load_generator(dir / "g.bin"), Error);
  std::ofstream(dir / "junk.bin") << "not a model";
  EXPECT_THROW(load_generator(dir / "junk.bin"), Error);
  EXPECT_THROW(load_generator(dir / "absent.bin"), IOError);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace sst
