#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "../common/fixtures.hpp"
#include "sst/config.hpp"
#include "sst/errors.hpp"
#include "sst/pipeline.hpp"

namespace sst {
namespace {

namespace fs = std::filesystem;

// Tiny end-to-end experiment on rendered 16x16 data.
class TinyExperiment : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = testing::scratch_dir(::testing::UnitTest::GetInstance()->current_test_info()->name());
    SyntheticSpec s;
    s.shape = {16, 16, 3};
    s.num_classes = 3;
    s.per_class = 12;
    s.seed = 1;
    write_synthetic_dataset(root_ / "data" / "train", s);
    s.seed = 2;
    s.per_class = 6;
    write_synthetic_dataset(root_ / "data" / "test", s);
    s.seed = 3;
    s.per_class = 8;
    write_synthetic_dataset(root_ / "data" / "benign", s);
    write_synthetic_dataset(root_ / "data" / "holdout", s);
    write(R"(
[meta]
seed = 3
output = out
[data]
train = data/train
test = data/test
benign = data/benign
holdout = data/holdout
height = 16
width = 16
[injection]
mode = corner
[dae]
epochs = 1
width = 4
stage_convs = 1,1
min_samples = 10
[poison]
rho = 0.2
[victim]
width = 4
stage_blocks = 1,1
epochs = 1
learning_rate = 0.05
batch_size = 16
[evaluate]
stealth_samples = 10
[defense]
fine_pruning = false
neural_cleanse = false
strip = false
gradcam = false
)");
  }
  void TearDown() override { fs::remove_all(root_); }

  void write(const std::string& text, const std::string& name = "exp.cfg") {
    std::ofstream(root_ / name) << text;
  }
  ExperimentConfig load(const std::vector<std::string>& overrides = {}) {
    ConfigOverrides o;
    o.assignments = overrides;
    return load_config(root_ / "exp.cfg", o);
  }

  fs::path root_;
};

std::string config_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "<no error>";
}

TEST_F(TinyExperiment, ParsesAndResolvesPaths) {
  const auto cfg = load();
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_EQ(cfg.injection.mode, InjectionMode::kCorner);
  EXPECT_EQ(cfg.data.train, root_ / "data" / "train");
  EXPECT_EQ(cfg.output, root_ / "out");
  EXPECT_EQ(cfg.dae.stage_convs, (std::vector<int>{1, 1}));
  EXPECT_NE(cfg.dae.seed, cfg.victim.seed);  // per-stage derived seeds
}

TEST_F(TinyExperiment, ErrorsNameTheField) {
  EXPECT_NE(config_error([&] { load({"injection.bogus=1"}); }).find("injection.bogus"), std::string::npos);
  EXPECT_NE(config_error([&] { load({"nosuch.key=1"}); }).find("nosuch"), std::string::npos);
  EXPECT_NE(config_error([&] { load({"poison.rho=abc"}); }).find("poison.rho"), std::string::npos);
  EXPECT_NE(config_error([&] { load({"poison.rho=1.5"}); }).find("rho"), std::string::npos);
  EXPECT_NE(config_error([&] { load({"injection.mode=blur"}); }).find("injection.mode"), std::string::npos);
  EXPECT_NE(config_error([&] { load({"data.train=" + (root_ / "missing").string()}); }).find("data.train"),
            std::string::npos);
  EXPECT_NE(config_error([&] { load({"defense.prune_ratios=0,0.99"}); }).find("prune_ratios"), std::string::npos);
  EXPECT_NE(config_error([&] { load({"victim.arch=mlp"}); }).find("victim.arch"), std::string::npos);
  EXPECT_NE(config_error([&] { load({"no_equals_sign"}); }), "<no error>");
  EXPECT_THROW(load_config(root_ / "absent.cfg"), ConfigError);
}

TEST_F(TinyExperiment, OverridesApply) {
  const auto cfg = load({"poison.rho=0.05", "injection.mode=edge"});
  EXPECT_DOUBLE_EQ(cfg.poison.rho, 0.05);
  EXPECT_EQ(cfg.injection.mode, InjectionMode::kEdge);
}

TEST_F(TinyExperiment, RunAllIsIdempotentAndAudited) {
  Pipeline first(load());
  const auto a = first.run_all();
  ASSERT_FALSE(a.empty());
  for (const auto& o : a) EXPECT_FALSE(o.skipped) << o.stage;
  EXPECT_TRUE(fs::exists(first.report_path()));
  EXPECT_TRUE(audit_output(first.ledger()).ok());

  Pipeline second(load());
  for (const auto& o : second.run_all()) EXPECT_TRUE(o.skipped) << o.stage;
  EXPECT_EQ(second.ledger().entries().size(), first.ledger().entries().size());

  // A changed evaluation input reruns evaluate only.
  Pipeline third(load({"evaluate.stealth_samples=5"}));
  for (const auto& o : third.run_all()) EXPECT_EQ(o.skipped, o.stage != "evaluate") << o.stage;

  // A damaged artifact invalidates its stage; the untouched clean model stays.
  std::ofstream(third.victim_path(), std::ios::app) << "x";
  Pipeline fourth(load({"evaluate.stealth_samples=5"}));
  for (const auto& o : fourth.train_victim()) EXPECT_EQ(o.skipped, o.stage == "train-clean") << o.stage;

  std::ofstream(root_ / "out" / "stray.txt") << "unexplained";
  Pipeline fifth(load({"evaluate.stealth_samples=5"}));
  EXPECT_THROW(fifth.run_all(), StageError);
  const auto audit = audit_output(fifth.ledger());
  ASSERT_EQ(audit.orphans.size(), 1u);
  EXPECT_EQ(audit.orphans.front(), "stray.txt");
}

TEST_F(TinyExperiment, StageFailureNamesTheStage) {
  Pipeline p(load());
  try {
    p.poison();  // no generator yet
    FAIL() << "poison ran without a generator";
  } catch (const StageError& e) {
    EXPECT_NE(std::string(e.what()).find("poison"), std::string::npos) << e.what();
  }
}

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " SST_CLI_PATH " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

TEST_F(TinyExperiment, CliExitCodes) {
  const std::string cfg = (root_ / "exp.cfg").string();
  EXPECT_EQ(run_cli(""), 2);
  EXPECT_EQ(run_cli("train-dae"), 2);
  EXPECT_EQ(run_cli("train-dae --config " + (root_ / "absent.cfg").string()), 2);
  EXPECT_EQ(run_cli("train-dae --config " + cfg + " --stage-override injection.bogus=1"), 2);
  EXPECT_EQ(run_cli("train-dae --config " + cfg, "ACCEL=tpu"), 2);
  EXPECT_EQ(run_cli("poison --config " + cfg), 3);
  EXPECT_EQ(run_cli("train-dae --config " + cfg + " --seed 4", "ACCEL=cpu"), 0);
  EXPECT_EQ(run_cli("train-dae --config " + cfg + " --seed 4", "ACCEL=gpu"), 0);
  EXPECT_EQ(run_cli("poison --config " + cfg + " --seed 4"), 0);
  EXPECT_EQ(run_cli("verify --manifest " + (root_ / "out" / "poison" / "poison.json").string()), 0);
}

TEST(Ledger, RoundTripsEntries) {
  const auto dir = testing::scratch_dir("ledger");
  std::ofstream(dir / "a.txt") << "hello";
  {
    ExperimentLedger l(dir);
    LedgerEntry e;
    e.stage = "demo";
    e.input_hash = "abc";
    e.artifacts["a.txt"] = hash_artifact(dir / "a.txt");
    e.summary = {{"k", 1}};
    l.append(e);
  }
  ExperimentLedger back(dir);
  ASSERT_EQ(back.entries().size(), 1u);
  EXPECT_NE(back.find_valid("demo", "abc"), nullptr);
  EXPECT_EQ(back.find_valid("demo", "abd"), nullptr);
  std::ofstream(dir / "a.txt") << "changed";
  EXPECT_EQ(back.find_valid("demo", "abc"), nullptr);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace sst
