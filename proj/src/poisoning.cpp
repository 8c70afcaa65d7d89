#include "sst/poisoning.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <unordered_set>

#include "sst/errors.hpp"
#include "sst/image_io.hpp"

namespace sst {

namespace fs = std::filesystem;

nlohmann::json PoisonConfig::to_json() const {
  return {{"rho", rho},
          {"target_label", target_label},
          {"selection_seed", selection_seed},
          {"exclude_target_class", exclude_target_class}};
}

std::vector<std::string> select_poison_sources(const DatasetManifest& train, const PoisonConfig& cfg) {
  if (!(cfg.rho >= 0.0 && cfg.rho <= 1.0)) throw ConfigError("poison.rho must lie in [0,1]");
  if (cfg.target_label < 0 || cfg.target_label >= train.num_classes())
    throw ConfigError("poison.target_label " + std::to_string(cfg.target_label) + " outside [0," +
                      std::to_string(train.num_classes()) + ")");
  const auto want = static_cast<std::size_t>(std::llround(cfg.rho * static_cast<double>(train.samples.size())));
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < train.samples.size(); ++i)
    if (!cfg.exclude_target_class || train.samples[i].label != cfg.target_label) eligible.push_back(i);
  if (want > eligible.size())
    throw ConfigError("poison.rho requests " + std::to_string(want) + " sources but only " +
                      std::to_string(eligible.size()) + " are eligible");
  std::mt19937_64 rng(cfg.selection_seed);
  std::shuffle(eligible.begin(), eligible.end(), rng);
  eligible.resize(want);
  std::sort(eligible.begin(), eligible.end());
  std::vector<std::string> ids;
  ids.reserve(want);
  for (std::size_t i : eligible) ids.push_back(train.samples[i].id);
  return ids;
}

nlohmann::json PoisonManifest::to_json() const {
  nlohmann::json recs = nlohmann::json::array();
  for (const auto& r : records)
    recs.push_back({{"source_id", r.source_id},
                    {"source", r.source},
                    {"source_label", r.source_label},
                    {"poisoned", r.poisoned},
                    {"target_label", r.target_label},
                    {"generator_id", r.generator_id},
                    {"spec_id", r.spec_id}});
  return {{"schema_version", schema_version},
          {"rho", config.rho},
          {"target_label", config.target_label},
          {"selection_seed", config.selection_seed},
          {"exclude_target_class", config.exclude_target_class},
          {"train_count", train_count},
          {"poison_count", records.size()},
          {"generator_id", generator_id},
          {"generator_path", generator_path},
          {"spec", spec},
          {"spec_id", spec_id},
          {"template", {{"path", template_path}, {"seed", template_seed}}},
          {"adapter", adapter},
          {"image_shape", {image_shape.height, image_shape.width, image_shape.channels}},
          {"records", recs}};
}

PoisonManifest PoisonManifest::from_json(const nlohmann::json& j) {
  PoisonManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != kPoisonManifestSchema)
    throw VersionError("unsupported poison manifest schema " + std::to_string(m.schema_version));
  m.config.rho = j.at("rho").get<double>();
  m.config.target_label = j.at("target_label").get<int>();
  m.config.selection_seed = j.at("selection_seed").get<std::uint64_t>();
  m.config.exclude_target_class = j.value("exclude_target_class", true);
  m.train_count = j.at("train_count").get<std::size_t>();
  m.generator_id = j.value("generator_id", "");
  m.generator_path = j.value("generator_path", "");
  m.spec = j.value("spec", nlohmann::json::object());
  m.spec_id = j.value("spec_id", "");
  if (j.contains("template")) {
    m.template_path = j["template"].value("path", "");
    m.template_seed = j["template"].value("seed", std::uint64_t{0});
  }
  m.adapter = j.value("adapter", "reject");
  const auto s = j.at("image_shape").get<std::vector<int>>();
  if (s.size() != 3) throw DataError("image_shape needs three entries");
  m.image_shape = {s[0], s[1], s[2]};
  for (const auto& r : j.at("records"))
    m.records.push_back({r.value("source_id", ""), r.at("source").get<std::string>(), r.at("source_label").get<int>(),
                         r.at("poisoned").get<std::string>(), r.value("target_label", m.config.target_label),
                         r.at("generator_id").get<std::string>(), r.at("spec_id").get<std::string>()});
  return m;
}

void save_poison_manifest(const PoisonManifest& m, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IOError("cannot write " + path.string());
  out << m.to_json().dump(1) << '\n';
}

PoisonManifest load_poison_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IOError("cannot read " + path.string());
  try {
    return PoisonManifest::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed poison manifest " + path.string() + ": " + e.what());
  }
}

Image stamp_patch(const Image& x, int size) {
  if (size < 1 || size > std::min(x.height(), x.width())) throw ParameterError("patch size out of range");
  Image out = x;
  for (int r = x.height() - size; r < x.height(); ++r)
    for (int c = x.width() - size; c < x.width(); ++c)
      for (int k = 0; k < x.channels(); ++k) out.at(r, c, k) = 255;
  return out;
}

PoisonedDataset build_poisoned_dataset(const DatasetManifest& train, const Shape3& shape, const PoisonConfig& cfg,
                                       const PoisonTransform& transform, PoisonManifest header,
                                       const fs::path& out_dir) {
  const auto ids = select_poison_sources(train, cfg);
  const std::unordered_set<std::string> chosen(ids.begin(), ids.end());
  const fs::path data = out_dir / "data";
  try {
    fs::remove_all(out_dir);
    for (const auto& c : train.class_names) fs::create_directories(data / c);

    PoisonedDataset out;
    out.mixed.class_names = train.class_names;
    header.config = cfg;
    header.train_count = train.samples.size();
    header.image_shape = shape;
    header.records.clear();

    std::vector<const Sample*> sources;
    for (const auto& s : train.samples) {
      if (chosen.count(s.id)) {
        sources.push_back(&s);
        continue;
      }
      // Clean samples keep their relative location.
      const fs::path dst = data / s.id;
      fs::copy_file(s.path, dst, fs::copy_options::overwrite_existing);
      out.mixed.samples.push_back({s.id, fs::absolute(dst), s.label});
    }

    constexpr std::size_t kChunk = 256;
    const std::string& target = train.class_names[cfg.target_label];
    for (std::size_t b = 0; b < sources.size(); b += kChunk) {
      const std::size_t m = std::min(kChunk, sources.size() - b);
      std::vector<Image> xs(m);
      std::vector<std::exception_ptr> errors(m);
#pragma omp parallel for schedule(dynamic, 8)
      for (std::size_t k = 0; k < m; ++k) {
        try {
          xs[k] = load_image(sources[b + k]->path, shape);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      }
      for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
      const auto xp = transform(xs);
      if (xp.size() != m) throw ShapeError("poison transform returned the wrong number of images");
      for (std::size_t k = 0; k < m; ++k) {
        const Sample& s = *sources[b + k];
        std::string flat = s.id;
        std::replace(flat.begin(), flat.end(), '/', '_');
        const fs::path stem = fs::path(flat).replace_extension(".png");
        const std::string id = target + "/p_" + stem.string();
        const fs::path dst = fs::absolute(data / id);
        save_png(xp[k], dst);
        out.mixed.samples.push_back({id, dst, cfg.target_label});
        header.records.push_back({s.id, fs::absolute(s.path).string(), s.label, dst.string(), cfg.target_label,
                                  header.generator_id, header.spec_id});
      }
    }
    // Keep the `<class>/<file>` ordering a rescan would produce.
    std::sort(out.mixed.samples.begin(), out.mixed.samples.end(), [&](const Sample& a, const Sample& b) {
      return a.label != b.label ? a.label < b.label : a.id < b.id;
    });
    out.manifest = std::move(header);
    save_dataset_manifest(out.mixed, out_dir / "dataset.json");
    save_poison_manifest(out.manifest, out_dir / "poison.json");
    return out;
  } catch (...) {
    std::error_code ec;
    fs::remove_all(out_dir, ec);
    throw;
  }
}

PoisonedDataset build_poisoned_dataset(const DatasetManifest& train, const Shape3& shape, const TriggerGenerator& gen,
                                       const fs::path& generator_path, const InjectionSpec& spec,
                                       const PoisonConfig& cfg, const fs::path& out_dir, ShapeAdapter adapter) {
  spec.validate();
  PoisonManifest header;
  header.generator_id = gen.id();
  header.generator_path = generator_path.empty() ? "" : fs::absolute(generator_path).string();
  header.spec = spec.to_json();
  header.spec_id = spec.id();
  header.adapter = adapter == ShapeAdapter::kBilinear ? "bilinear" : "reject";
  NoiseTemplate tmpl;
  if (spec.mode == InjectionMode::kMix) {
    tmpl = make_noise_template(shape, spec.noise_seed);
    header.template_seed = spec.noise_seed;
  }
  const NoiseTemplate* tp = spec.mode == InjectionMode::kMix ? &tmpl : nullptr;
  auto transform = [&](std::span<const Image> xs) { return generate_trigger_images(gen, spec, tp, xs, adapter); };
  auto out = build_poisoned_dataset(train, shape, cfg, transform, header, out_dir);
  if (tp) {
    const fs::path tpath = fs::absolute(out_dir / "template.png");
    save_png(tmpl.pixels, tpath);
    out.manifest.template_path = tpath.string();
    save_poison_manifest(out.manifest, out_dir / "poison.json");
  }
  return out;
}

// --- Verification ------------------------------------------------------------

namespace {

// Rebuilds x_p for one source from the manifest alone.
class Rederiver {
 public:
  explicit Rederiver(const PoisonManifest& m) : m_(m) {
    const std::string mode = m.spec.value("mode", "");
    patch_ = mode == "patch";
    if (patch_) {
      patch_size_ = m.spec.value("patch_size", 3);
      return;
    }
    spec_ = InjectionSpec::from_json(m.spec);
    if (m.generator_path.empty()) throw VerificationError("manifest has no generator to re-derive from", {});
    gen_ = load_generator(m.generator_path);
    if (spec_.mode == InjectionMode::kMix) tmpl_ = make_noise_template(m.image_shape, spec_.noise_seed);
    adapter_ = m.adapter == "bilinear" ? ShapeAdapter::kBilinear : ShapeAdapter::kReject;
  }

  const std::string generator_id() const { return patch_ ? m_.generator_id : gen_.id(); }

  Image derive(const Image& x) const {
    if (patch_) return stamp_patch(x, patch_size_);
    return generate_trigger_image(gen_, spec_, spec_.mode == InjectionMode::kMix ? &tmpl_ : nullptr, x, adapter_);
  }

 private:
  const PoisonManifest& m_;
  bool patch_ = false;
  int patch_size_ = 0;
  InjectionSpec spec_;
  TriggerGenerator gen_;
  NoiseTemplate tmpl_;
  ShapeAdapter adapter_ = ShapeAdapter::kReject;
};

}  // namespace

VerificationReport verify_manifest(const PoisonManifest& m, std::size_t sample, std::uint64_t seed) {
  std::vector<std::string> v;
  VerificationReport rep;
  rep.records = m.records.size();

  const auto expected = static_cast<std::size_t>(std::llround(m.config.rho * static_cast<double>(m.train_count)));
  if (m.records.size() != expected)
    v.push_back("record count " + std::to_string(m.records.size()) + " != round(rho * train_count) = " +
                std::to_string(expected));
  std::set<std::string> seen;
  for (const auto& r : m.records) {
    const std::string tag = "record " + r.source_id + ": ";
    if (!seen.insert(r.source).second) v.push_back(tag + "source appears more than once");
    if (r.target_label != m.config.target_label) v.push_back(tag + "label differs from the target label");
    if (r.generator_id != m.generator_id) v.push_back(tag + "generator id differs from the manifest's");
    if (r.spec_id != m.spec_id) v.push_back(tag + "spec id differs from the manifest's");
    if (!fs::exists(r.poisoned)) {
      v.push_back(tag + "poisoned file missing: " + r.poisoned);
      continue;
    }
    try {
      (void)load_image(r.poisoned, m.image_shape);
    } catch (const std::exception& e) {
      v.push_back(tag + "poisoned file unreadable: " + e.what());
    }
  }

  std::vector<std::size_t> pick(m.records.size());
  std::iota(pick.begin(), pick.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(pick.begin(), pick.end(), rng);
  pick.resize(std::min(sample, pick.size()));
  if (!pick.empty()) {
    std::unique_ptr<Rederiver> rd;
    try {
      rd = std::make_unique<Rederiver>(m);
    } catch (const VerificationError&) {
      throw;
    } catch (const std::exception& e) {
      v.push_back(std::string("cannot load the generator for re-derivation: ") + e.what());
    }
    if (rd && rd->generator_id() != m.generator_id)
      v.push_back("generator file content " + rd->generator_id() + " does not match manifest id " + m.generator_id);
    for (std::size_t i : pick) {
      if (!rd) break;
      const auto& r = m.records[i];
      try {
        const Image x = load_image(r.source, m.image_shape);
        const Image stored = load_image(r.poisoned, m.image_shape);
        if (!(rd->derive(x) == stored)) v.push_back("record " + r.source_id + ": re-derived image differs from " + r.poisoned);
        rep.rederived_ids.push_back(r.source_id);
        ++rep.rederived;
      } catch (const std::exception& e) {
        v.push_back("record " + r.source_id + ": re-derivation failed: " + e.what());
      }
    }
  }
  if (!v.empty()) throw VerificationError("poison manifest verification failed (" + std::to_string(v.size()) + " issues)", v);
  return rep;
}

VerificationReport verify_manifest(const fs::path& manifest_path, std::size_t sample, std::uint64_t seed) {
  return verify_manifest(load_poison_manifest(manifest_path), sample, seed);
}

}  // namespace sst
