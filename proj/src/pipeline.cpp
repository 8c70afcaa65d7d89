#include "sst/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "sst/errors.hpp"
#include "sst/image_io.hpp"
#include "sst/metrics.hpp"
#include "sst/plot.hpp"
#include "sst/util.hpp"

namespace sst {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Bumped whenever stage semantics change so stale ledger entries stop matching.
constexpr int kPipelineVersion = 2;
constexpr int kLedgerSchema = 1;

template <typename... A>
std::string strf(const char* f, A... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IOError("cannot read " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

void write_json(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw IOError("cannot write " + tmp.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, p);
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  if (!out) throw IOError("cannot write " + p.string());
  out << s;
}

json shape_json(const Shape3& s) { return {s.height, s.width, s.channels}; }

std::vector<std::size_t> seeded_subset(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  if (k > 0 && k < n) idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

template <typename T>
std::vector<T> pick(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

json stealth_json(const CorpusStealth& s) {
  return {{"mse", s.mse},   {"psnr", s.psnr},   {"psnr_of_mean_mse", s.psnr_of_mean_mse},
          {"ssim", s.ssim}, {"count", s.count}, {"infinite_psnr", s.infinite_psnr}};
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

ResizePolicy policy_of(const DataConfig& d) {
  return d.resize ? ResizePolicy::kResizeCenterCrop : ResizePolicy::kReject;
}

}  // namespace

// --- Ledger ------------------------------------------------------------------------

json LedgerEntry::to_json() const {
  return {{"seq", seq},
          {"stage", stage},
          {"input_hash", input_hash},
          {"artifacts", artifacts},
          {"wall_seconds", wall_seconds},
          {"finished_at", finished_at},
          {"summary", summary}};
}

LedgerEntry LedgerEntry::from_json(const json& j) {
  LedgerEntry e;
  e.seq = j.at("seq").get<int>();
  e.stage = j.at("stage").get<std::string>();
  e.input_hash = j.at("input_hash").get<std::string>();
  e.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
  e.wall_seconds = j.value("wall_seconds", 0.0);
  e.finished_at = j.value("finished_at", "");
  e.summary = j.value("summary", json::object());
  return e;
}

ExperimentLedger::ExperimentLedger(fs::path output_dir) : dir_(std::move(output_dir)) {
  if (!fs::exists(path())) return;
  const json j = read_json(path());
  if (j.value("schema_version", 0) != kLedgerSchema) throw VersionError("unsupported ledger " + path().string());
  for (const auto& e : j.at("entries")) entries_.push_back(LedgerEntry::from_json(e));
}

const LedgerEntry* ExperimentLedger::latest(const std::string& stage) const {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
    if (it->stage == stage) return &*it;
  return nullptr;
}

const LedgerEntry* ExperimentLedger::find_valid(const std::string& stage, const std::string& input_hash) const {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->stage != stage || it->input_hash != input_hash) continue;
    bool intact = true;
    for (const auto& [rel, h] : it->artifacts) {
      const fs::path p = dir_ / rel;
      if (!fs::exists(p) || hash_artifact(p) != h) {
        intact = false;
        break;
      }
    }
    if (intact) return &*it;
  }
  return nullptr;
}

void ExperimentLedger::append(LedgerEntry e) {
  e.seq = static_cast<int>(entries_.size()) + 1;
  entries_.push_back(std::move(e));
  json arr = json::array();
  for (const auto& x : entries_) arr.push_back(x.to_json());
  write_json(path(), {{"schema_version", kLedgerSchema}, {"entries", arr}});
}

std::string hash_artifact(const fs::path& p) {
  if (!fs::is_directory(p)) return hash_file(p);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(p))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  Fnv1a h;
  for (const auto& f : files) {
    h.update(fs::relative(f, p).generic_string());
    h.update(hash_file(f));
  }
  return h.hex();
}

AuditResult audit_output(const ExperimentLedger& ledger) {
  AuditResult r;
  const fs::path root = ledger.output_dir();
  std::set<std::string> covered;
  std::set<std::string> latest_stages;
  for (const auto& e : ledger.entries()) {
    latest_stages.insert(e.stage);
    for (const auto& [rel, h] : e.artifacts) covered.insert(rel);
  }
  for (const auto& s : latest_stages)
    for (const auto& [rel, h] : ledger.latest(s)->artifacts)
      if (!fs::exists(root / rel)) r.missing.push_back(rel);
  if (!fs::exists(root)) return r;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), root).generic_string();
    if (rel == "ledger.json") continue;
    bool ok = false;
    // Covered if the file itself or any ancestor directory is an artifact.
    for (fs::path q = fs::path(rel); !q.empty(); q = q.parent_path()) {
      if (covered.count(q.generic_string())) {
        ok = true;
        break;
      }
      if (q == q.parent_path()) break;
    }
    if (!ok) r.orphans.push_back(rel);
  }
  std::sort(r.orphans.begin(), r.orphans.end());
  return r;
}

// --- Helpers ------------------------------------------------------------------------

DatasetManifest open_dataset(const fs::path& p) {
  if (fs::is_regular_file(p)) return load_dataset_manifest(p);
  return scan_dataset(p);
}

namespace {

void check_classes(const DatasetManifest& a, const DatasetManifest& b, const std::string& what) {
  if (a.class_names != b.class_names)
    throw DataError(what + " class folders differ from the training set's; labels would not line up");
}

// The injection settings used downstream: a pre-trained generator carries its own.
InjectionSpec effective_spec(const ExperimentConfig& cfg, const TriggerGenerator& gen) {
  return cfg.generator.empty() ? cfg.injection : gen.provenance().spec;
}

std::optional<NoiseTemplate> template_for(const InjectionSpec& spec, const Shape3& shape) {
  if (spec.mode != InjectionMode::kMix) return std::nullopt;
  return make_noise_template(shape, spec.noise_seed);
}

}  // namespace

// --- Pipeline -----------------------------------------------------------------------

Pipeline::Pipeline(ExperimentConfig cfg, Logger log)
    : cfg_(std::move(cfg)), log_(std::move(log)), ledger_(cfg_.output) {}

void Pipeline::say(const std::string& msg) const {
  if (log_) log_(msg);
}

fs::path Pipeline::generator_path() const {
  return cfg_.generator.empty() ? cfg_.output / "train-dae" / "generator.bin" : cfg_.generator;
}

fs::path Pipeline::clean_model_path() const {
  if (!cfg_.evaluate.clean_model.empty()) return cfg_.evaluate.clean_model;
  if (cfg_.clean_baseline) return cfg_.output / "train-victim" / "clean.bin";
  return {};
}

std::string Pipeline::artifact_hash(const std::string& stage, const fs::path& p) const {
  if (!fs::exists(p))
    throw StageError(stage + ": missing upstream artifact " + p.string() + "; run the earlier stage first");
  return hash_artifact(p);
}

StageOutcome Pipeline::run_stage(const std::string& name, const json& inputs, const std::vector<fs::path>& artifacts,
                                 const std::function<json()>& body) {
  const std::string input_hash =
      hash_string(json{{"pipeline_version", kPipelineVersion}, {"stage", name}, {"inputs", inputs}}.dump());
  if (const LedgerEntry* e = ledger_.find_valid(name, input_hash)) {
    say(name + ": inputs unchanged (ledger #" + std::to_string(e->seq) + "), skipping");
    return {name, true, 0.0, e->summary};
  }
  say(name + ": running");
  for (const auto& a : artifacts) fs::remove_all(a);
  const auto t0 = std::chrono::steady_clock::now();
  json summary;
  try {
    summary = body();
  } catch (...) {
    for (const auto& a : artifacts) fs::remove_all(a);
    try {
      throw;
    } catch (const ConfigError&) {
      throw;
    } catch (const StageError& e) {
      throw StageError(name + ": " + e.what());
    } catch (const std::exception& e) {
      throw StageError(name + ": " + e.what());
    }
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  LedgerEntry entry;
  entry.stage = name;
  entry.input_hash = input_hash;
  for (const auto& a : artifacts) {
    if (!fs::exists(a)) throw StageError(name + ": did not produce " + a.string());
    entry.artifacts[fs::relative(a, cfg_.output).generic_string()] = hash_artifact(a);
  }
  entry.wall_seconds = secs;
  entry.finished_at = utc_now();
  entry.summary = summary;
  ledger_.append(entry);
  say(strf("%s: done in %.1f s", name.c_str(), secs));
  return {name, false, secs, summary};
}

std::vector<StageOutcome> Pipeline::train_dae() {
  if (!cfg_.generator.empty()) {
    say("train-dae: using pre-trained generator " + cfg_.generator.string());
    return {{"train-dae", true, 0.0, {{"generator", cfg_.generator.string()}}}};
  }
  const fs::path dir = cfg_.output / "train-dae";
  const DatasetManifest benign = open_dataset(cfg_.data.benign);
  const json inputs = {{"benign", benign.digest()},
                       {"shape", shape_json(cfg_.data.shape)},
                       {"resize", cfg_.data.resize},
                       {"spec", cfg_.injection.to_json()},
                       {"dae", cfg_.dae.to_json()}};
  std::vector<fs::path> artifacts = {dir / "generator.bin", dir / "provenance.json", dir / "loss.svg"};
  if (cfg_.injection.mode == InjectionMode::kMix) artifacts.push_back(dir / "template.png");

  return {run_stage("train-dae", inputs, artifacts, [&]() -> json {
    fs::create_directories(dir);
    const LabeledImages data = load_images(benign, cfg_.data.shape, policy_of(cfg_.data));
    const auto tmpl = template_for(cfg_.injection, cfg_.data.shape);
    const int every = std::max(1, cfg_.dae.epochs / 10);
    auto progress = [&](int ep, double tr, double va) {
      if ((ep + 1) % every == 0 || ep == 0) say(strf("  dae epoch %d/%d train %.5f val %.5f", ep + 1, cfg_.dae.epochs, tr, va));
    };
    const TriggerGenerator gen =
        sst::train_dae(data.images, cfg_.injection, tmpl ? &*tmpl : nullptr, cfg_.dae, benign.digest(), progress);
    save_generator(gen, dir / "generator.bin");
    write_json(dir / "provenance.json", gen.provenance().to_json());
    if (tmpl) save_png(tmpl->pixels, dir / "template.png");
    const auto& pv = gen.provenance();
    std::vector<double> xs(pv.train_curve.size());
    std::iota(xs.begin(), xs.end(), 1.0);
    write_line_plot(dir / "loss.svg", {{"train", xs, pv.train_curve}, {"validation", xs, pv.val_curve}},
                    {"Denoising autoencoder loss", "epoch", "MSE ([0,1] scale)", 0.0, 0.0, {}});
    return {{"generator_id", gen.id()},
            {"final_train_loss", pv.final_train_loss},
            {"final_val_loss", pv.final_val_loss},
            {"untrained_val_loss", pv.untrained_val_loss}};
  })};
}

std::vector<StageOutcome> Pipeline::poison() {
  const fs::path gpath = generator_path();
  const std::string gen_hash = artifact_hash("poison", gpath);
  const DatasetManifest train = open_dataset(cfg_.data.train);
  const json inputs = {{"generator", gen_hash},
                       {"injection", cfg_.injection.to_json()},
                       {"foreign_generator", !cfg_.generator.empty()},
                       {"poison", cfg_.poison.to_json()},
                       {"train", train.digest()},
                       {"shape", shape_json(cfg_.data.shape)},
                       {"resize", cfg_.data.resize},
                       {"adapter", cfg_.adapter == ShapeAdapter::kBilinear ? "bilinear" : "reject"}};
  return {run_stage("poison", inputs, {poison_dir()}, [&]() -> json {
    const TriggerGenerator gen = load_generator(gpath);
    const InjectionSpec spec = effective_spec(cfg_, gen);
    const PoisonedDataset pd =
        build_poisoned_dataset(train, cfg_.data.shape, gen, gpath, spec, cfg_.poison, poison_dir(), cfg_.adapter);
    const auto vr = verify_manifest(pd.manifest, 10, derive_seed(cfg_.seed, "verify-manifest"));
    say(strf("  poisoned %zu of %zu samples; %zu records re-derived bit-exactly", pd.manifest.records.size(),
             train.samples.size(), vr.rederived));
    return {{"records", pd.manifest.records.size()},
            {"train_count", pd.manifest.train_count},
            {"generator_id", pd.manifest.generator_id},
            {"spec_id", pd.manifest.spec_id},
            {"verified_records", vr.rederived_ids}};
  })};
}

std::vector<StageOutcome> Pipeline::train_victim() {
  std::vector<StageOutcome> out;
  const DatasetManifest train = open_dataset(cfg_.data.train);
  const DatasetManifest test = open_dataset(cfg_.data.test);
  check_classes(train, test, "test");
  const fs::path dir = cfg_.output / "train-victim";

  auto train_one = [&](const std::string& stage, const DatasetManifest& data, const json& data_id,
                       const fs::path& model_path, const fs::path& log_path) {
    const json inputs = {{"data", data_id},
                         {"test", test.digest()},
                         {"shape", shape_json(cfg_.data.shape)},
                         {"resize", cfg_.data.resize},
                         {"hyper", cfg_.victim.to_json()}};
    return run_stage(stage, inputs, {model_path, log_path}, [&]() -> json {
      fs::create_directories(dir);
      const LabeledImages tr = load_images(data, cfg_.data.shape, policy_of(cfg_.data));
      const LabeledImages te = load_images(test, cfg_.data.shape, policy_of(cfg_.data));
      auto progress = [&](const EpochLog& l) {
        say(strf("  epoch %d/%d lr %.5f loss %.4f train %.4f test %.4f", l.epoch + 1, cfg_.victim.epochs, l.lr, l.loss,
                 l.train_acc, l.test_acc));
      };
      const VictimModel m = sst::train_victim(tr, cfg_.victim, data.class_names, &te, progress);
      save_victim(m, model_path);
      json log = json::array();
      for (const auto& l : m.log)
        log.push_back({{"epoch", l.epoch}, {"lr", l.lr}, {"loss", l.loss}, {"train_acc", l.train_acc},
                       {"test_acc", l.test_acc}});
      write_json(log_path, {{"hyper", cfg_.victim.to_json()}, {"epochs", log}});
      return {{"model_id", m.id()}, {"final_test_acc", m.log.empty() ? 0.0 : m.log.back().test_acc}};
    });
  };

  const fs::path mixed_path = poison_dir() / "dataset.json";
  const std::string poison_hash = artifact_hash("train-victim", poison_dir());
  out.push_back(train_one("train-victim", load_dataset_manifest(mixed_path), poison_hash, victim_path(),
                          dir / "victim_log.json"));
  if (cfg_.clean_baseline && cfg_.evaluate.clean_model.empty())
    out.push_back(train_one("train-clean", train, train.digest(), dir / "clean.bin", dir / "clean_log.json"));
  return out;
}

std::vector<StageOutcome> Pipeline::evaluate() {
  const fs::path dir = cfg_.output / "evaluate";
  const fs::path gpath = generator_path();
  const fs::path cpath = clean_model_path();
  const DatasetManifest train = open_dataset(cfg_.data.train);
  const DatasetManifest test = open_dataset(cfg_.data.test);
  check_classes(train, test, "test");
  const json inputs = {{"victim", artifact_hash("evaluate", victim_path())},
                       {"clean", cpath.empty() ? "" : artifact_hash("evaluate", cpath)},
                       {"generator", artifact_hash("evaluate", gpath)},
                       {"poison", artifact_hash("evaluate", poison_dir() / "poison.json")},
                       {"test", test.digest()},
                       {"shape", shape_json(cfg_.data.shape)},
                       {"resize", cfg_.data.resize},
                       {"injection", cfg_.injection.to_json()},
                       {"target_label", cfg_.poison.target_label},
                       {"adapter", cfg_.adapter == ShapeAdapter::kBilinear ? "bilinear" : "reject"},
                       {"evaluate", {{"exclusivity", cfg_.evaluate.exclusivity},
                                     {"stealth_samples", cfg_.evaluate.stealth_samples}}},
                       {"seed", cfg_.seed}};

  return {run_stage("evaluate", inputs, {dir / "report.json", dir / "summary.txt"}, [&]() -> json {
    fs::create_directories(dir);
    const int yt = cfg_.poison.target_label;
    const VictimModel model = load_victim(victim_path());
    const TriggerGenerator gen = load_generator(gpath);
    const InjectionSpec spec = effective_spec(cfg_, gen);
    const auto tmpl = template_for(spec, cfg_.data.shape);
    const NoiseTemplate* tp = tmpl ? &*tmpl : nullptr;
    const LabeledImages te = load_images(test, cfg_.data.shape, policy_of(cfg_.data));

    json rep;
    rep["schema_version"] = 1;
    rep["cda"] = compute_cda(model, te);
    const std::vector<Image> nt = non_target_images(te, yt);
    const std::vector<Image> triggered = generate_trigger_images(gen, spec, tp, nt, cfg_.adapter);
    const AsrResult asr = asr_of(model, triggered, yt);
    rep["asr"] = asr.asr;
    rep["asr_count"] = asr.count;
    rep["clean_asr_baseline"] = asr_of(model, nt, yt).asr;
    if (!cpath.empty()) {
      const VictimModel clean = load_victim(cpath);
      const double cda_clean = compute_cda(clean, te);
      rep["clean_model"] = {{"path", cpath.string()},
                            {"model_id", clean.id()},
                            {"cda", cda_clean},
                            {"asr_on_triggered", asr_of(clean, triggered, yt).asr}};
      rep["cda_clean"] = cda_clean;
      rep["cda_relative"] = cda_clean > 0 ? rep["cda"].get<double>() / cda_clean : 0.0;
    } else {
      rep["cda_clean"] = nullptr;
      rep["cda_relative"] = nullptr;
    }
    if (cfg_.evaluate.exclusivity) {
      const auto ex = exclusivity_test(model, te, gen, spec, tp, yt, derive_seed(cfg_.seed, "exclusivity"),
                                       cfg_.adapter);
      rep["exclusivity"] = {{"same_asr", ex.same_asr}, {"cross_asr", ex.cross_asr}, {"null_asr", ex.null_asr},
                            {"gap", ex.same_asr - ex.cross_asr},   {"pairs", ex.pairs}};
    }

    // Stealth over the poisoned training images actually written to disk.
    const PoisonManifest pm = load_poison_manifest(poison_dir() / "poison.json");
    const auto idx = seeded_subset(pm.records.size(), cfg_.evaluate.stealth_samples,
                                   derive_seed(cfg_.seed, "evaluate-stealth"));
    std::vector<Image> src(idx.size()), poisoned(idx.size()), injected(idx.size()), blend(idx.size());
    const NoiseTemplate blend_tmpl = make_noise_template(cfg_.data.shape, derive_seed(cfg_.seed, "blend-baseline"));
    std::vector<std::string> errors(idx.size());
#pragma omp parallel for schedule(dynamic, 8)
    for (std::size_t i = 0; i < idx.size(); ++i) {
      try {
        const auto& r = pm.records[idx[i]];
        src[i] = load_image(r.source, pm.image_shape);
        poisoned[i] = load_image(r.poisoned, pm.image_shape);
        injected[i] = inject(src[i], spec, tp);
        blend[i] = inject_mix(src[i], blend_tmpl, 0.2);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
    for (const auto& e : errors)
      if (!e.empty()) throw DataError("stealth corpus: " + e);
    const CorpusStealth s_p = corpus_stealth(src, poisoned), s_i = corpus_stealth(src, injected),
                        s_b = corpus_stealth(src, blend);
    rep["stealth"] = {{"poisoned", stealth_json(s_p)}, {"injected", stealth_json(s_i)}, {"blend_0.2", stealth_json(s_b)}};

    rep["seeds"] = {{"global", cfg_.seed},
                    {"dae", cfg_.dae.seed},
                    {"selection", cfg_.poison.selection_seed},
                    {"victim", cfg_.victim.seed},
                    {"noise_template", spec.noise_seed},
                    {"exclusivity", derive_seed(cfg_.seed, "exclusivity")},
                    {"stealth_subset", derive_seed(cfg_.seed, "evaluate-stealth")},
                    {"blend_baseline", derive_seed(cfg_.seed, "blend-baseline")}};
    rep["artifacts"] = {{"generator_id", gen.id()},
                        {"generator_path", gpath.string()},
                        {"victim_id", model.id()},
                        {"spec_id", spec.id()},
                        {"poison_manifest", hash_artifact(poison_dir() / "poison.json")}};
    rep["spec"] = spec.to_json();
    rep["config"] = cfg_.to_json();
    write_json(dir / "report.json", rep);

    std::ostringstream t;
    t << "metric                    value\n";
    t << strf("CDA                       %.4f\n", rep["cda"].get<double>());
    if (!rep["cda_clean"].is_null())
      t << strf("CDA clean baseline        %.4f\nCDA relative              %.4f\n", rep["cda_clean"].get<double>(),
                rep["cda_relative"].get<double>());
    t << strf("ASR (%zu inputs)         %.4f\n", asr.count, asr.asr);
    if (rep.contains("exclusivity"))
      t << strf("same-trigger ASR          %.4f\ncross-trigger ASR         %.4f\nnull-trigger ASR          %.4f\n",
                rep["exclusivity"]["same_asr"].get<double>(), rep["exclusivity"]["cross_asr"].get<double>(),
                rep["exclusivity"]["null_asr"].get<double>());
    t << "\nstealth (n=" << s_p.count << ")   MSE       PSNR(mean)  PSNR(mean MSE)  SSIM\n";
    for (const auto& [name, s] : {std::pair{"E(I(x))", s_p}, std::pair{"I(x)", s_i}, std::pair{"blend 20%", s_b}})
      t << strf("%-14s %9.2f  %10.2f  %14.2f  %.4f\n", name, s.mse, s.psnr, s.psnr_of_mean_mse, s.ssim);
    write_text(dir / "summary.txt", t.str());
    say(t.str());
    json sum = {{"cda", rep["cda"]}, {"asr", rep["asr"]}, {"cda_relative", rep["cda_relative"]}};
    if (rep.contains("exclusivity")) sum["cross_asr"] = rep["exclusivity"]["cross_asr"];
    return sum;
  })};
}

std::vector<StageOutcome> Pipeline::defend() {
  std::vector<StageOutcome> out;
  const auto& d = cfg_.defense;
  const fs::path dir = cfg_.output / "defend";
  const DatasetManifest train = open_dataset(cfg_.data.train);
  const DatasetManifest test = open_dataset(cfg_.data.test);
  const DatasetManifest holdout = open_dataset(cfg_.data.holdout);
  check_classes(train, test, "test");
  check_classes(train, holdout, "holdout");

  const fs::path fixture_dir = dir / "fixture";
  const fs::path fixture_model = dir / "fixture_victim.bin";
  if (d.patch_fixture) {
    const json pin = {{"train", train.digest()},
                      {"shape", shape_json(cfg_.data.shape)},
                      {"resize", cfg_.data.resize},
                      {"patch_size", d.patch_size},
                      {"poison", cfg_.poison.to_json()}};
    out.push_back(run_stage("defend-fixture-poison", pin, {fixture_dir}, [&]() -> json {
      const PoisonedDataset pd = patch_trigger_fixture(train, cfg_.data.shape, d.patch_size, cfg_.poison, fixture_dir);
      return {{"records", pd.manifest.records.size()}};
    }));
    const json vin = {{"data", artifact_hash("defend-fixture-victim", fixture_dir)},
                      {"shape", shape_json(cfg_.data.shape)},
                      {"resize", cfg_.data.resize},
                      {"hyper", cfg_.victim.to_json()}};
    out.push_back(run_stage("defend-fixture-victim", vin, {fixture_model}, [&]() -> json {
      const DatasetManifest mixed = load_dataset_manifest(fixture_dir / "dataset.json");
      const LabeledImages tr = load_images(mixed, cfg_.data.shape, policy_of(cfg_.data));
      auto progress = [&](const EpochLog& l) {
        say(strf("  fixture epoch %d/%d loss %.4f train %.4f", l.epoch + 1, cfg_.victim.epochs, l.loss, l.train_acc));
      };
      const VictimModel m = sst::train_victim(tr, cfg_.victim, mixed.class_names, nullptr, progress);
      save_victim(m, fixture_model);
      return {{"model_id", m.id()}};
    }));
  }

  const fs::path gpath = generator_path();
  const json inputs = {{"victim", artifact_hash("defend", victim_path())},
                       {"fixture", d.patch_fixture ? artifact_hash("defend", fixture_model) : ""},
                       {"generator", artifact_hash("defend", gpath)},
                       {"injection", cfg_.injection.to_json()},
                       {"test", test.digest()},
                       {"holdout", holdout.digest()},
                       {"shape", shape_json(cfg_.data.shape)},
                       {"resize", cfg_.data.resize},
                       {"adapter", cfg_.adapter == ShapeAdapter::kBilinear ? "bilinear" : "reject"},
                       {"target_label", cfg_.poison.target_label},
                       {"defense", cfg_.to_json()["defense"]},
                       {"seed", cfg_.seed}};
  const std::vector<fs::path> artifacts = {dir / "defense.json", dir / "summary.txt", dir / "prune_curve.svg",
                                           dir / "anomaly_index.svg", dir / "strip_entropy.svg",
                                           dir / "gradcam_overlap.svg"};

  out.push_back(run_stage("defend", inputs, artifacts, [&]() -> json {
    fs::create_directories(dir);
    const int yt = cfg_.poison.target_label;
    const std::string victim_before = hash_file(victim_path());
    const std::string fixture_before = d.patch_fixture ? hash_file(fixture_model) : "";

    const TriggerGenerator gen = load_generator(gpath);
    const InjectionSpec spec = effective_spec(cfg_, gen);
    const auto tmpl = template_for(spec, cfg_.data.shape);
    const LabeledImages te = load_images(test, cfg_.data.shape, policy_of(cfg_.data));
    const LabeledImages ho = load_images(holdout, cfg_.data.shape, policy_of(cfg_.data));
    const std::vector<Image> nt = non_target_images(te, yt);

    struct Arm {
      std::string name;
      VictimModel model;
      std::vector<Image> triggered;  // aligned with nt
    };
    std::vector<Arm> arms;
    arms.push_back({"attack", load_victim(victim_path()),
                    generate_trigger_images(gen, spec, tmpl ? &*tmpl : nullptr, nt, cfg_.adapter)});
    if (d.patch_fixture) {
      std::vector<Image> stamped;
      for (const auto& x : nt) stamped.push_back(stamp_patch(x, d.patch_size));
      arms.push_back({"patch_fixture", load_victim(fixture_model), std::move(stamped)});
    }

    // Neural Cleanse samples: a fixed number per class from the holdout split.
    std::vector<Image> nc_samples;
    {
      std::mt19937_64 rng(derive_seed(cfg_.seed, "defend-cleanse-samples"));
      for (int c = 0; c < ho.num_classes; ++c) {
        std::vector<std::size_t> ids;
        for (std::size_t i = 0; i < ho.size(); ++i)
          if (ho.labels[i] == c) ids.push_back(i);
        std::shuffle(ids.begin(), ids.end(), rng);
        ids.resize(std::min<std::size_t>(ids.size(), static_cast<std::size_t>(d.cleanse_per_class)));
        std::sort(ids.begin(), ids.end());
        for (auto i : ids) nc_samples.push_back(ho.images[i]);
      }
    }
    const auto strip_idx = seeded_subset(nt.size(), static_cast<std::size_t>(d.strip_inputs),
                                         derive_seed(cfg_.seed, "defend-strip-inputs"));
    const auto cam_idx = seeded_subset(nt.size(), static_cast<std::size_t>(d.gradcam_pairs),
                                       derive_seed(cfg_.seed, "defend-gradcam-pairs"));

    json rep;
    rep["schema_version"] = 1;
    rep["target_label"] = yt;
    rep["thresholds"] = {{"neural_cleanse_anomaly_index", d.cleanse.anomaly_threshold},
                         {"strip_false_rejection_percentile", 1.0},
                         {"strip_significance", 0.05}};
    std::vector<Series> prune_series, nc_bars, strip_hist, cam_hist;
    std::ostringstream t;
    for (const auto& arm : arms) {
      json a;
      say("  defenses against " + arm.name);
      if (d.fine_pruning) {
        const auto fp = fine_pruning(arm.model, ho, te, arm.triggered, yt, d.pruning);
        a["fine_pruning"] = fp.to_json();
        Series s_asr{arm.name + " ASR", {}, {}}, s_cda{arm.name + " CDA", {}, {}};
        for (const auto& p : fp.points) {
          s_asr.x.push_back(p.ratio);
          s_asr.y.push_back(p.asr);
          s_cda.x.push_back(p.ratio);
          s_cda.y.push_back(p.cda);
          t << strf("%-14s fine-pruning ratio %.2f: CDA %.4f ASR %.4f\n", arm.name.c_str(), p.ratio, p.cda, p.asr);
        }
        prune_series.push_back(std::move(s_asr));
        prune_series.push_back(std::move(s_cda));
      }
      if (d.neural_cleanse) {
        const auto nc = neural_cleanse(arm.model, nc_samples, d.cleanse);
        a["neural_cleanse"] = nc.to_json();
        const bool flagged = std::find(nc.flagged.begin(), nc.flagged.end(), yt) != nc.flagged.end();
        a["neural_cleanse"]["target_anomaly_index"] = nc.anomaly_index.at(static_cast<std::size_t>(yt));
        a["neural_cleanse"]["target_flagged"] = flagged;
        nc_bars.push_back({arm.name, {}, nc.anomaly_index});
        t << strf("%-14s neural cleanse: anomaly index of y_t %.3f (%s), flagged classes %zu\n", arm.name.c_str(),
                  nc.anomaly_index.at(static_cast<std::size_t>(yt)), flagged ? "flagged" : "not flagged",
                  nc.flagged.size());
      }
      if (d.strip) {
        const auto st = strip_sweep(arm.model, pick(nt, strip_idx), pick(arm.triggered, strip_idx), ho.images,
                                    d.strip_n, derive_seed(cfg_.seed, "defend-strip"));
        a["strip"] = st.to_json();
        strip_hist.push_back({arm.name + " clean", {}, st.clean_entropy});
        strip_hist.push_back({arm.name + " trigger", {}, st.trigger_entropy});
        t << strf("%-14s STRIP: AUC %.4f detection %.4f false rejection %.4f p %.3g\n", arm.name.c_str(), st.auc,
                  st.detection, st.false_rejection, st.p_value);
      }
      if (d.gradcam) {
        std::vector<double> overlaps(cam_idx.size());
#pragma omp parallel for schedule(dynamic, 4)
        for (std::size_t i = 0; i < cam_idx.size(); ++i)
          overlaps[i] = sentinet_overlap(arm.model, nt[cam_idx[i]], arm.triggered[cam_idx[i]]);
        a["gradcam"] = {{"defense", "sentinet_gradcam_overlap"}, {"overlaps", overlaps}, {"mean", mean(overlaps)}};
        cam_hist.push_back({arm.name, {}, overlaps});
        t << strf("%-14s Grad-CAM overlap: mean %.4f over %zu pairs\n", arm.name.c_str(), mean(overlaps),
                  overlaps.size());
      }
      a["model_id"] = arm.model.id();
      rep[arm.name] = a;
    }

    const bool victim_same = hash_file(victim_path()) == victim_before;
    const bool fixture_same = !d.patch_fixture || hash_file(fixture_model) == fixture_before;
    if (!victim_same || !fixture_same) throw StageError("a defense modified a model file on disk");
    rep["model_files_unchanged"] = true;

    std::vector<std::string> classes;
    for (int c = 0; c < static_cast<int>(train.class_names.size()); ++c) classes.push_back(std::to_string(c));
    write_line_plot(dir / "prune_curve.svg", prune_series,
                    {"Fine-pruning", "pruned fraction of channels", "rate", 0.0, 1.0, {}});
    write_bar_plot(dir / "anomaly_index.svg", classes, nc_bars,
                   {"Neural Cleanse anomaly index", "class", "anomaly index", 0.0, 0.0,
                    {{"threshold", d.cleanse.anomaly_threshold}}});
    write_histogram(dir / "strip_entropy.svg", strip_hist, 30, {"STRIP entropy", "entropy (bits)", "fraction", 0, 0, {}});
    write_histogram(dir / "gradcam_overlap.svg", cam_hist, 20,
                    {"Grad-CAM overlap, clean vs poisoned", "cosine similarity", "fraction", 0, 0, {}});
    write_json(dir / "defense.json", rep);
    write_text(dir / "summary.txt", t.str());
    say(t.str());

    json sum = json::object();
    for (const auto& arm : arms) {
      const json& a = rep[arm.name];
      json s;
      if (a.contains("neural_cleanse")) s["target_anomaly_index"] = a["neural_cleanse"]["target_anomaly_index"];
      if (a.contains("strip")) s["strip_auc"] = a["strip"]["auc"];
      if (a.contains("gradcam")) s["gradcam_mean"] = a["gradcam"]["mean"];
      sum[arm.name] = s;
    }
    return sum;
  }));
  return out;
}

std::vector<StageOutcome> Pipeline::run_all() {
  std::vector<StageOutcome> out;
  using StageFn = std::vector<StageOutcome> (Pipeline::*)();
  for (StageFn f : {&Pipeline::train_dae, &Pipeline::poison, &Pipeline::train_victim, &Pipeline::evaluate}) {
    auto r = (this->*f)();
    out.insert(out.end(), r.begin(), r.end());
  }
  const auto& d = cfg_.defense;
  if (d.fine_pruning || d.neural_cleanse || d.strip || d.gradcam) {
    auto r = defend();
    out.insert(out.end(), r.begin(), r.end());
  }
  const AuditResult audit = audit_output(ledger_);
  if (!audit.ok()) {
    std::string msg = "audit: ";
    for (const auto& o : audit.orphans) msg += "orphan " + o + "; ";
    for (const auto& m : audit.missing) msg += "missing " + m + "; ";
    throw StageError(msg);
  }
  return out;
}

// --- Experiments ----------------------------------------------------------------------

json transfer_test(ExperimentConfig cfg, const fs::path& foreign_generator, Logger log) {
  const TriggerGenerator gen = load_generator(foreign_generator);
  cfg.generator = foreign_generator;
  if (!(gen.input_shape() == cfg.data.shape)) cfg.adapter = ShapeAdapter::kBilinear;
  cfg.defense.fine_pruning = cfg.defense.neural_cleanse = cfg.defense.strip = cfg.defense.gradcam = false;
  Pipeline p(cfg, std::move(log));
  p.train_dae();
  p.poison();
  p.train_victim();
  p.evaluate();
  json rep = read_json(p.report_path());
  rep["transfer"] = {{"generator", foreign_generator.string()},
                     {"generator_dataset", gen.provenance().dataset_id},
                     {"generator_shape", shape_json(gen.input_shape())},
                     {"adapter", cfg.adapter == ShapeAdapter::kBilinear ? "bilinear" : "reject"}};
  return rep;
}

json ratio_sweep(const ExperimentConfig& cfg, const std::vector<double>& rhos, Logger log) {
  if (rhos.empty()) throw ConfigError("sweep: no rho values");
  for (double r : rhos)
    if (!(r > 0.0 && r <= 1.0)) throw ConfigError("sweep: rho " + std::to_string(r) + " outside (0,1]");
  json rows = json::array();
  fs::path shared_gen, shared_clean;
  for (std::size_t i = 0; i < rhos.size(); ++i) {
    ExperimentConfig c = cfg;
    c.poison.rho = rhos[i];
    c.output = cfg.output / strf("rho_%g", rhos[i]);
    c.defense.fine_pruning = c.defense.neural_cleanse = c.defense.strip = c.defense.gradcam = false;
    if (i > 0) {
      if (cfg.generator.empty()) c.generator = shared_gen;
      if (!shared_clean.empty()) {
        c.evaluate.clean_model = shared_clean;
        c.clean_baseline = false;
      }
    }
    Pipeline p(c, log);
    p.run_all();
    if (i == 0) {
      shared_gen = p.generator_path();
      shared_clean = p.clean_model_path();
    }
    const json rep = read_json(p.report_path());
    json row = {{"rho", rhos[i]}, {"cda", rep["cda"]}, {"asr", rep["asr"]}, {"cda_relative", rep["cda_relative"]},
                {"output", c.output.string()}};
    if (rep.contains("exclusivity")) row["cross_asr"] = rep["exclusivity"]["cross_asr"];
    rows.push_back(row);
  }
  Series asr{"ASR", {}, {}}, cda{"CDA", {}, {}};
  for (const auto& r : rows) {
    asr.x.push_back(r["rho"].get<double>());
    asr.y.push_back(r["asr"].get<double>());
    cda.x.push_back(r["rho"].get<double>());
    cda.y.push_back(r["cda"].get<double>());
  }
  write_json(cfg.output / "sweep.json", {{"rows", rows}, {"config", cfg.to_json()}});
  write_line_plot(cfg.output / "sweep.svg", {asr, cda}, {"Poisoning ratio sweep", "rho", "rate", 0.0, 1.0, {}});
  return rows;
}

}  // namespace sst
