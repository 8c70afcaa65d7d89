// Command-line front end: one subcommand per pipeline stage plus helpers.
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sst/config.hpp"
#include "sst/errors.hpp"
#include "sst/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct CommonArgs {
  std::string config;
  std::string output;
  std::int64_t seed = -1;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config, "experiment config file")->required();
  cmd->add_option("--output", a.output, "output directory (overrides the config)");
  cmd->add_option("--seed", a.seed, "global seed (overrides the config)")->check(CLI::NonNegativeNumber);
  cmd->add_option("--stage-override", a.overrides, "section.key=value, repeatable");
}

sst::ExperimentConfig load(const CommonArgs& a) {
  sst::ConfigOverrides o;
  if (a.seed >= 0) o.seed = static_cast<std::uint64_t>(a.seed);
  if (!a.output.empty()) o.output = a.output;
  o.assignments = a.overrides;
  return sst::load_config(a.config, o);
}

// ACCEL selects the compute backend. Only the CPU backend is built; gpu
// requests fall back to it with a notice.
void check_accel() {
  const char* v = std::getenv("ACCEL");
  if (!v || std::string(v).empty() || std::string(v) == "cpu") return;
  if (std::string(v) == "gpu") {
    std::cerr << "note: ACCEL=gpu requested but this build has no GPU backend; running on CPU\n";
    return;
  }
  throw sst::ConfigError(std::string("ACCEL: expected cpu or gpu, got '") + v + "'");
}

void log_line(const std::string& s) { std::cerr << s << "\n"; }

void print_outcomes(const std::vector<sst::StageOutcome>& out) {
  for (const auto& o : out)
    std::cout << o.stage << ": " << (o.skipped ? "skipped (up to date)" : "ran") << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sample-specific backdoor attack pipeline"};
  app.require_subcommand(1);

  CommonArgs common;
  struct Cmd {
    const char* name;
    const char* help;
    std::vector<sst::StageOutcome> (sst::Pipeline::*run)();
  };
  const std::vector<Cmd> stage_cmds = {
      {"train-dae", "train the denoising autoencoder (trigger generator)", &sst::Pipeline::train_dae},
      {"poison", "build the poisoned training set and manifest", &sst::Pipeline::poison},
      {"train-victim", "train the victim (and clean baseline) classifier", &sst::Pipeline::train_victim},
      {"evaluate", "CDA, ASR, stealth and exclusivity report", &sst::Pipeline::evaluate},
      {"defend", "fine-pruning, Neural Cleanse, STRIP and Grad-CAM evaluations", &sst::Pipeline::defend},
      {"run-all", "all stages in order, resuming from the ledger", &sst::Pipeline::run_all},
  };
  std::vector<CLI::App*> stage_apps;
  for (const auto& c : stage_cmds) {
    auto* sub = app.add_subcommand(c.name, c.help);
    add_common(sub, common);
    stage_apps.push_back(sub);
  }

  std::vector<double> rhos;
  auto* sweep = app.add_subcommand("sweep-rho", "one pipeline run per poisoning ratio");
  add_common(sweep, common);
  sweep->add_option("--rhos", rhos, "poisoning ratios")->required()->delimiter(',');

  std::string foreign;
  auto* transfer = app.add_subcommand("transfer", "attack with a generator trained on another dataset");
  add_common(transfer, common);
  transfer->add_option("--generator", foreign, "pre-trained generator file")->required()->check(CLI::ExistingFile);

  sst::SyntheticSpec synth;
  std::string synth_kind = "shapes", synth_root;
  auto* mk = app.add_subcommand("make-dataset", "render a procedural image corpus to disk");
  mk->add_option("--kind", synth_kind, "shapes or faces");
  mk->add_option("--root", synth_root, "output root")->required();
  mk->add_option("--classes", synth.num_classes);
  mk->add_option("--per-class", synth.per_class);
  mk->add_option("--height", synth.shape.height);
  mk->add_option("--width", synth.shape.width);
  mk->add_option("--seed", synth.seed);

  std::string manifest;
  std::size_t verify_samples = 10;
  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "re-derive poisoned images from a manifest");
  verify->add_option("--manifest", manifest, "poison.json")->required()->check(CLI::ExistingFile);
  verify->add_option("--samples", verify_samples, "records to regenerate");
  verify->add_option("--seed", verify_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    check_accel();
    for (std::size_t i = 0; i < stage_cmds.size(); ++i) {
      if (!stage_apps[i]->parsed()) continue;
      sst::Pipeline p(load(common), log_line);
      print_outcomes((p.*stage_cmds[i].run)());
      return kExitOk;
    }
    if (sweep->parsed()) {
      const auto rows = sst::ratio_sweep(load(common), rhos, log_line);
      std::cout << rows.dump(2) << "\n";
    } else if (transfer->parsed()) {
      const auto rep = sst::transfer_test(load(common), foreign, log_line);
      std::cout << "CDA " << rep["cda"] << "  ASR " << rep["asr"] << "\n";
    } else if (mk->parsed()) {
      try {
        synth.kind = sst::parse_synthetic_kind(synth_kind);
      } catch (const sst::ParameterError& e) {
        throw sst::ConfigError(std::string("--kind: ") + e.what());
      }
      const auto m = sst::write_synthetic_dataset(synth_root, synth);
      std::cout << m.samples.size() << " images in " << m.num_classes() << " classes under " << synth_root << "\n";
    } else if (verify->parsed()) {
      const auto r = sst::verify_manifest(std::filesystem::path(manifest), verify_samples, verify_seed);
      std::cout << "ok: " << r.records << " records, " << r.rederived << " regenerated bit-exactly\n";
    }
    return kExitOk;
  } catch (const sst::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const sst::VerificationError& e) {
    std::cerr << "verification failed: " << e.what() << "\n";
    for (const auto& v : e.violations()) std::cerr << "  " << v << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "stage error: " << e.what() << "\n";
    return kExitStage;
  }
}
