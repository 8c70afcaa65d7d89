#include "sst/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sst/errors.hpp"
#include "sst/util.hpp"

namespace sst {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  s = s.substr(b, e - b + 1);
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(v);
  while (std::getline(in, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

// Field parsers: throw ConfigError mentioning the dotted field path.
struct Field {
  const std::string& path;
  std::string raw;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError(path + ": " + what + " (got '" + raw + "')");
  }
  template <typename T>
  T number() const {
    const std::string v = trim(raw);
    T out{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size() || v.empty()) fail("expected a number");
    return out;
  }
  double real() const {
    const std::string v = trim(raw);
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) fail("expected a real number");
      return d;
    } catch (const std::logic_error&) {
      fail("expected a real number");
    }
  }
  bool boolean() const {
    const std::string v = trim(raw);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail("expected true or false");
  }
  std::string str() const { return trim(raw); }
  std::vector<double> reals() const {
    std::vector<double> out;
    for (const auto& s : split_list(raw)) out.push_back(Field{path, s}.real());
    return out;
  }
  std::vector<int> ints() const {
    std::vector<int> out;
    for (const auto& s : split_list(raw)) out.push_back(Field{path, s}.number<int>());
    return out;
  }
};

using Setter = std::function<void(ExperimentConfig&, const Field&, const fs::path& base)>;

fs::path resolve(const fs::path& base, const std::string& v) {
  if (v.empty()) return {};
  const fs::path p(v);
  return p.is_absolute() ? p : (base / p).lexically_normal();
}

const std::map<std::string, std::map<std::string, Setter>>& schema() {
  static const std::map<std::string, std::map<std::string, Setter>> s = {
      {"meta",
       {
           {"schema_version", [](auto& c, const Field& f, auto&) { c.schema_version = f.number<int>(); }},
           {"seed", [](auto& c, const Field& f, auto&) { c.seed = f.number<std::uint64_t>(); }},
           {"output", [](auto& c, const Field& f, const fs::path& b) { c.output = resolve(b, f.str()); }},
       }},
      {"data",
       {
           {"train", [](auto& c, const Field& f, const fs::path& b) { c.data.train = resolve(b, f.str()); }},
           {"test", [](auto& c, const Field& f, const fs::path& b) { c.data.test = resolve(b, f.str()); }},
           {"benign", [](auto& c, const Field& f, const fs::path& b) { c.data.benign = resolve(b, f.str()); }},
           {"holdout", [](auto& c, const Field& f, const fs::path& b) { c.data.holdout = resolve(b, f.str()); }},
           {"height", [](auto& c, const Field& f, auto&) { c.data.shape.height = f.number<int>(); }},
           {"width", [](auto& c, const Field& f, auto&) { c.data.shape.width = f.number<int>(); }},
           {"channels", [](auto& c, const Field& f, auto&) { c.data.shape.channels = f.number<int>(); }},
           {"resize", [](auto& c, const Field& f, auto&) { c.data.resize = f.boolean(); }},
       }},
      {"injection",
       {
           {"mode",
            [](auto& c, const Field& f, auto&) {
              try {
                c.injection.mode = parse_injection_mode(f.str());
              } catch (const ParameterError&) {
                f.fail("expected mix, corner or edge");
              }
            }},
           {"alpha", [](auto& c, const Field& f, auto&) { c.injection.alpha = f.real(); }},
           {"fill",
            [](auto& c, const Field& f, auto&) {
              const auto v = f.ints();
              if (v.size() != 3) f.fail("expected three components R, G, B");
              for (int x : v)
                if (x < 0 || x > 255) f.fail("colour components must be 0..255");
              c.injection.fill = {static_cast<std::uint8_t>(v[0]), static_cast<std::uint8_t>(v[1]),
                                  static_cast<std::uint8_t>(v[2])};
            }},
           {"max_corners", [](auto& c, const Field& f, auto&) { c.injection.corner.max_corners = f.number<int>(); }},
           {"quality_level", [](auto& c, const Field& f, auto&) { c.injection.corner.quality_level = f.real(); }},
           {"min_distance", [](auto& c, const Field& f, auto&) { c.injection.corner.min_distance = f.real(); }},
           {"fill_size", [](auto& c, const Field& f, auto&) { c.injection.corner.fill_size = f.number<int>(); }},
           {"edge_threshold", [](auto& c, const Field& f, auto&) { c.injection.edge.threshold = f.real(); }},
           {"noise_seed",
            [](auto& c, const Field& f, auto&) {
              c.injection.noise_seed = f.number<std::uint64_t>();
              c.noise_seed_explicit = true;
            }},
       }},
      {"dae",
       {
           {"epochs", [](auto& c, const Field& f, auto&) { c.dae.epochs = f.number<int>(); }},
           {"batch_size", [](auto& c, const Field& f, auto&) { c.dae.batch_size = f.number<int>(); }},
           {"learning_rate", [](auto& c, const Field& f, auto&) { c.dae.learning_rate = f.real(); }},
           {"val_fraction", [](auto& c, const Field& f, auto&) { c.dae.val_fraction = f.real(); }},
           {"width", [](auto& c, const Field& f, auto&) { c.dae.width = f.number<int>(); }},
           {"stage_convs", [](auto& c, const Field& f, auto&) { c.dae.stage_convs = f.ints(); }},
           {"min_samples", [](auto& c, const Field& f, auto&) { c.dae.min_samples = f.number<std::size_t>(); }},
           {"generator", [](auto& c, const Field& f, const fs::path& b) { c.generator = resolve(b, f.str()); }},
           {"adapter",
            [](auto& c, const Field& f, auto&) {
              const auto v = f.str();
              if (v == "reject")
                c.adapter = ShapeAdapter::kReject;
              else if (v == "bilinear")
                c.adapter = ShapeAdapter::kBilinear;
              else
                f.fail("expected reject or bilinear");
            }},
       }},
      {"poison",
       {
           {"rho", [](auto& c, const Field& f, auto&) { c.poison.rho = f.real(); }},
           {"target_label", [](auto& c, const Field& f, auto&) { c.poison.target_label = f.number<int>(); }},
           {"exclude_target_class", [](auto& c, const Field& f, auto&) { c.poison.exclude_target_class = f.boolean(); }},
       }},
      {"victim",
       {
           {"arch",
            [](auto& c, const Field& f, auto&) {
              const auto v = f.str();
              if (v != "small_resnet" && v != "small_vgg") f.fail("expected small_resnet or small_vgg");
              c.victim.arch = v;
            }},
           {"width", [](auto& c, const Field& f, auto&) { c.victim.width = f.number<int>(); }},
           {"stage_blocks", [](auto& c, const Field& f, auto&) { c.victim.stage_blocks = f.ints(); }},
           {"epochs", [](auto& c, const Field& f, auto&) { c.victim.epochs = f.number<int>(); }},
           {"batch_size", [](auto& c, const Field& f, auto&) { c.victim.batch_size = f.number<int>(); }},
           {"learning_rate", [](auto& c, const Field& f, auto&) { c.victim.learning_rate = f.real(); }},
           {"momentum", [](auto& c, const Field& f, auto&) { c.victim.momentum = f.real(); }},
           {"weight_decay", [](auto& c, const Field& f, auto&) { c.victim.weight_decay = f.real(); }},
           {"milestones", [](auto& c, const Field& f, auto&) { c.victim.milestones = f.reals(); }},
           {"gamma", [](auto& c, const Field& f, auto&) { c.victim.gamma = f.real(); }},
           {"hflip", [](auto& c, const Field& f, auto&) { c.victim.hflip = f.boolean(); }},
           {"clean_baseline", [](auto& c, const Field& f, auto&) { c.clean_baseline = f.boolean(); }},
       }},
      {"evaluate",
       {
           {"exclusivity", [](auto& c, const Field& f, auto&) { c.evaluate.exclusivity = f.boolean(); }},
           {"clean_model", [](auto& c, const Field& f, const fs::path& b) { c.evaluate.clean_model = resolve(b, f.str()); }},
           {"stealth_samples", [](auto& c, const Field& f, auto&) { c.evaluate.stealth_samples = f.number<std::size_t>(); }},
       }},
      {"defense",
       {
           {"fine_pruning", [](auto& c, const Field& f, auto&) { c.defense.fine_pruning = f.boolean(); }},
           {"prune_ratios", [](auto& c, const Field& f, auto&) { c.defense.pruning.ratios = f.reals(); }},
           {"finetune_epochs", [](auto& c, const Field& f, auto&) { c.defense.pruning.finetune_epochs = f.number<int>(); }},
           {"finetune_lr_scale", [](auto& c, const Field& f, auto&) { c.defense.pruning.lr_scale = f.real(); }},
           {"neural_cleanse", [](auto& c, const Field& f, auto&) { c.defense.neural_cleanse = f.boolean(); }},
           {"cleanse_epochs", [](auto& c, const Field& f, auto&) { c.defense.cleanse.epochs = f.number<int>(); }},
           {"cleanse_lr", [](auto& c, const Field& f, auto&) { c.defense.cleanse.learning_rate = f.real(); }},
           {"cleanse_init_lambda", [](auto& c, const Field& f, auto&) { c.defense.cleanse.init_lambda = f.real(); }},
           {"cleanse_per_class", [](auto& c, const Field& f, auto&) { c.defense.cleanse_per_class = f.number<int>(); }},
           {"anomaly_threshold", [](auto& c, const Field& f, auto&) { c.defense.cleanse.anomaly_threshold = f.real(); }},
           {"strip", [](auto& c, const Field& f, auto&) { c.defense.strip = f.boolean(); }},
           {"strip_n", [](auto& c, const Field& f, auto&) { c.defense.strip_n = f.number<int>(); }},
           {"strip_inputs", [](auto& c, const Field& f, auto&) { c.defense.strip_inputs = f.number<int>(); }},
           {"gradcam", [](auto& c, const Field& f, auto&) { c.defense.gradcam = f.boolean(); }},
           {"gradcam_pairs", [](auto& c, const Field& f, auto&) { c.defense.gradcam_pairs = f.number<int>(); }},
           {"patch_fixture", [](auto& c, const Field& f, auto&) { c.defense.patch_fixture = f.boolean(); }},
           {"patch_size", [](auto& c, const Field& f, auto&) { c.defense.patch_size = f.number<int>(); }},
       }},
  };
  return s;
}

void apply(ExperimentConfig& cfg, const std::string& section, const std::string& key, const std::string& value,
           const fs::path& base) {
  const std::string path = section + "." + key;
  const auto& s = schema();
  const auto sec = s.find(section);
  if (sec == s.end()) throw ConfigError(path + ": unknown section '" + section + "'");
  const auto it = sec->second.find(key);
  if (it == sec->second.end()) throw ConfigError(path + ": unknown field");
  it->second(cfg, Field{path, value}, base);
}

void require_path(const fs::path& p, const std::string& field) {
  if (p.empty()) throw ConfigError(field + ": required path is missing");
  if (!fs::exists(p)) throw ConfigError(field + ": path does not exist: " + p.string());
}

void validate(ExperimentConfig& cfg) {
  if (cfg.schema_version != kConfigSchemaVersion)
    throw ConfigError("meta.schema_version: unsupported version " + std::to_string(cfg.schema_version));
  const auto& sh = cfg.data.shape;
  if (sh.height < 1 || sh.width < 1 || (sh.channels != 1 && sh.channels != 3))
    throw ConfigError("data: image shape must be positive with 1 or 3 channels");
  require_path(cfg.data.train, "data.train");
  require_path(cfg.data.test, "data.test");
  if (cfg.generator.empty())
    require_path(cfg.data.benign, "data.benign");
  else
    require_path(cfg.generator, "dae.generator");
  const auto& d = cfg.defense;
  if (d.fine_pruning || d.neural_cleanse || d.strip) require_path(cfg.data.holdout, "data.holdout");
  if (!cfg.evaluate.clean_model.empty()) require_path(cfg.evaluate.clean_model, "evaluate.clean_model");
  try {
    cfg.injection.validate();
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("injection: ") + e.what());
  }
  if (!(cfg.poison.rho >= 0.0 && cfg.poison.rho <= 1.0)) throw ConfigError("poison.rho: must lie in [0,1]");
  if (cfg.poison.target_label < 0) throw ConfigError("poison.target_label: must be non-negative");
  if (cfg.dae.epochs < 0 || cfg.dae.batch_size < 1 || !(cfg.dae.learning_rate > 0))
    throw ConfigError("dae: epochs, batch_size and learning_rate must be positive");
  if (!(cfg.dae.val_fraction > 0 && cfg.dae.val_fraction < 1)) throw ConfigError("dae.val_fraction: must lie in (0,1)");
  if (cfg.victim.epochs < 0 || cfg.victim.batch_size < 1 || !(cfg.victim.learning_rate > 0))
    throw ConfigError("victim: epochs, batch_size and learning_rate must be positive");
  for (double r : d.pruning.ratios)
    if (!(r >= 0.0 && r <= 0.95)) throw ConfigError("defense.prune_ratios: ratios must lie in [0, 0.95]");
  if (d.strip_n < 1) throw ConfigError("defense.strip_n: must be positive");
  if (d.patch_size < 1) throw ConfigError("defense.patch_size: must be positive");
}

}  // namespace

void derive_stage_seeds(ExperimentConfig& cfg) {
  cfg.dae.seed = derive_seed(cfg.seed, "train-dae");
  cfg.poison.selection_seed = derive_seed(cfg.seed, "poison");
  cfg.victim.seed = derive_seed(cfg.seed, "train-victim");
  cfg.defense.pruning.seed = derive_seed(cfg.seed, "defend-fine-pruning");
  cfg.defense.cleanse.seed = derive_seed(cfg.seed, "defend-neural-cleanse");
  if (!cfg.noise_seed_explicit) cfg.injection.noise_seed = derive_seed(cfg.seed, "noise-template");
}

ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir, const ConfigOverrides& overrides) {
  pt::ptree tree;
  try {
    std::istringstream in(text);
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError(section + ": top-level keys are not allowed; put them in a [section]");
    for (const auto& [key, node] : body) apply(cfg, section, key, node.data(), base_dir);
  }
  for (const auto& a : overrides.assignments) {
    const auto eq = a.find('=');
    const auto dot = a.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw ConfigError("--stage-override '" + a + "': expected section.key=value");
    apply(cfg, trim(a.substr(0, dot)), trim(a.substr(dot + 1, eq - dot - 1)), a.substr(eq + 1), fs::current_path());
  }
  if (overrides.seed) cfg.seed = *overrides.seed;
  if (overrides.output) cfg.output = fs::absolute(*overrides.output);
  derive_stage_seeds(cfg);
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const fs::path& path, const ConfigOverrides& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), fs::absolute(path).parent_path(), overrides);
}

nlohmann::json ExperimentConfig::to_json() const {
  const auto p = [](const fs::path& x) { return x.string(); };
  return {
      {"schema_version", schema_version},
      {"seed", seed},
      {"output", p(output)},
      {"data",
       {{"train", p(data.train)},
        {"test", p(data.test)},
        {"benign", p(data.benign)},
        {"holdout", p(data.holdout)},
        {"shape", {data.shape.height, data.shape.width, data.shape.channels}},
        {"resize", data.resize}}},
      {"injection", injection.to_json()},
      {"dae", dae.to_json()},
      {"generator", p(generator)},
      {"adapter", adapter == ShapeAdapter::kBilinear ? "bilinear" : "reject"},
      {"poison", poison.to_json()},
      {"victim", victim.to_json()},
      {"clean_baseline", clean_baseline},
      {"evaluate",
       {{"exclusivity", evaluate.exclusivity},
        {"clean_model", p(evaluate.clean_model)},
        {"stealth_samples", evaluate.stealth_samples}}},
      {"defense",
       {{"fine_pruning", defense.fine_pruning},
        {"prune_ratios", defense.pruning.ratios},
        {"finetune_epochs", defense.pruning.finetune_epochs},
        {"finetune_lr_scale", defense.pruning.lr_scale},
        {"pruning_seed", defense.pruning.seed},
        {"neural_cleanse", defense.neural_cleanse},
        {"cleanse_epochs", defense.cleanse.epochs},
        {"cleanse_lr", defense.cleanse.learning_rate},
        {"cleanse_init_lambda", defense.cleanse.init_lambda},
        {"cleanse_per_class", defense.cleanse_per_class},
        {"cleanse_seed", defense.cleanse.seed},
        {"anomaly_threshold", defense.cleanse.anomaly_threshold},
        {"strip", defense.strip},
        {"strip_n", defense.strip_n},
        {"strip_inputs", defense.strip_inputs},
        {"gradcam", defense.gradcam},
        {"gradcam_pairs", defense.gradcam_pairs},
        {"patch_fixture", defense.patch_fixture},
        {"patch_size", defense.patch_size}}},
  };
}

}  // namespace sst
