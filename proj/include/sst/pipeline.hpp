#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sst/config.hpp"

namespace sst {

// --- Ledger -----------------------------------------------------------------------

struct LedgerEntry {
  int seq = 0;
  std::string stage;
  std::string input_hash;
  std::map<std::string, std::string> artifacts;  // path relative to the output dir -> content hash
  double wall_seconds = 0.0;
  std::string finished_at;  // UTC, ISO 8601
  nlohmann::json summary;

  nlohmann::json to_json() const;
  static LedgerEntry from_json(const nlohmann::json& j);
};

// Append-only record of completed stages, stored as `<output>/ledger.json`.
class ExperimentLedger {
 public:
  explicit ExperimentLedger(std::filesystem::path output_dir);

  const std::vector<LedgerEntry>& entries() const { return entries_; }
  std::filesystem::path path() const { return dir_ / "ledger.json"; }
  const std::filesystem::path& output_dir() const { return dir_; }

  // Latest entry for `stage` with this input hash whose artifacts are all
  // still present with their recorded hashes; nullptr otherwise.
  const LedgerEntry* find_valid(const std::string& stage, const std::string& input_hash) const;
  const LedgerEntry* latest(const std::string& stage) const;
  void append(LedgerEntry e);

 private:
  std::filesystem::path dir_;
  std::vector<LedgerEntry> entries_;
};

// Content hash of a file, or of a directory tree (relative names + contents).
std::string hash_artifact(const std::filesystem::path& p);

struct AuditResult {
  std::vector<std::string> orphans;  // files not covered by any ledger artifact
  std::vector<std::string> missing;  // artifacts of the latest entries that are gone
  bool ok() const { return orphans.empty() && missing.empty(); }
};

AuditResult audit_output(const ExperimentLedger& ledger);

// --- Stages -----------------------------------------------------------------------

struct StageOutcome {
  std::string stage;
  bool skipped = false;  // inputs matched a ledger entry; nothing recomputed
  double seconds = 0.0;
  nlohmann::json summary;
};

using Logger = std::function<void(const std::string&)>;

// Dataset root (`<root>/<class>/<files>`) or a saved dataset manifest.
DatasetManifest open_dataset(const std::filesystem::path& p);

// Runs the attack pipeline stages against one output directory. Every stage
// is skipped when the ledger holds a completed entry with identical inputs.
// Module failures surface as StageError carrying the stage name.
class Pipeline {
 public:
  explicit Pipeline(ExperimentConfig cfg, Logger log = {});

  std::vector<StageOutcome> train_dae();
  std::vector<StageOutcome> poison();
  std::vector<StageOutcome> train_victim();  // victim plus the optional clean baseline
  std::vector<StageOutcome> evaluate();
  std::vector<StageOutcome> defend();
  // All five in order, then the orphan audit (StageError on failure).
  std::vector<StageOutcome> run_all();

  const ExperimentConfig& config() const { return cfg_; }
  const ExperimentLedger& ledger() const { return ledger_; }
  const std::filesystem::path& output() const { return cfg_.output; }

  std::filesystem::path generator_path() const;
  std::filesystem::path poison_dir() const { return cfg_.output / "poison"; }
  std::filesystem::path victim_path() const { return cfg_.output / "train-victim" / "victim.bin"; }
  std::filesystem::path clean_model_path() const;
  std::filesystem::path report_path() const { return cfg_.output / "evaluate" / "report.json"; }
  std::filesystem::path defense_report_path() const { return cfg_.output / "defend" / "defense.json"; }

 private:
  StageOutcome run_stage(const std::string& name, const nlohmann::json& inputs,
                         const std::vector<std::filesystem::path>& artifacts,
                         const std::function<nlohmann::json()>& body);
  std::string artifact_hash(const std::string& stage, const std::filesystem::path& p) const;
  void say(const std::string& msg) const;

  ExperimentConfig cfg_;
  Logger log_;
  ExperimentLedger ledger_;
};

// Full pipeline (no defenses) with a pre-trained generator from another
// dataset; the bilinear adapter is engaged when shapes differ.
nlohmann::json transfer_test(ExperimentConfig cfg, const std::filesystem::path& foreign_generator, Logger log = {});

// One pipeline run per rho under `<output>/rho_<value>`, sharing the base
// run's generator and clean baseline. Returns rows {rho, cda, asr, ...} and
// writes `<output>/sweep.json` plus an SVG.
nlohmann::json ratio_sweep(const ExperimentConfig& cfg, const std::vector<double>& rhos, Logger log = {});

}  // namespace sst
