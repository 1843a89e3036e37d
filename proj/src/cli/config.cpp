#include "pf/cli/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace pf::cli {

namespace {

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  const auto r = std::from_chars(text.data(), end, v);
  if (r.ec != std::errc() || r.ptr != end) throw ConfigError(key + ": cannot parse '" + text + "'");
  return v;
}

template <typename T>
std::string format_number(T v) {
  if constexpr (std::is_floating_point_v<T>)
    return format_double(v);
  else
    return std::to_string(v);
}

// Binds a numeric member reached through `ref`.
template <typename T, typename Ref>
Field number(std::string key, Ref ref) {
  return {key, [ref](const ExperimentConfig& c) { return format_number<T>(ref(const_cast<ExperimentConfig&>(c))); },
          [ref, key](ExperimentConfig& c, const std::string& s) { ref(c) = parse_number<T>(key, s); }};
}

template <typename Ref>
Field text(std::string key, Ref ref) {
  return {key, [ref](const ExperimentConfig& c) { return std::string(ref(const_cast<ExperimentConfig&>(c))); },
          [ref](ExperimentConfig& c, const std::string& s) { ref(c) = s; }};
}

template <typename Ref, typename ToS, typename FromS>
Field enumerated(std::string key, Ref ref, ToS to_s, FromS from_s) {
  return {key, [ref, to_s](const ExperimentConfig& c) { return std::string(to_s(ref(const_cast<ExperimentConfig&>(c)))); },
          [ref, from_s](ExperimentConfig& c, const std::string& s) { ref(c) = from_s(s); }};
}

#define PF_REF(expr) [](ExperimentConfig& c) -> auto& { return c.expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      number<std::uint64_t>("run.seed", PF_REF(seed)),
      text("run.out", PF_REF(out)),

      text("inputs.manifest", PF_REF(inputs.manifest)),
      text("inputs.model", PF_REF(inputs.model)),
      text("inputs.generator", PF_REF(inputs.generator)),

      enumerated("dataset.mode", PF_REF(dataset.mode), [](SynthMode m) { return to_string(m); },
                 [](const std::string& s) { return synth_mode_from_string(s); }),
      number<std::size_t>("dataset.size", PF_REF(dataset.size)),
      number<std::size_t>("dataset.train_count", PF_REF(dataset.train_count)),
      number<std::size_t>("dataset.val_count", PF_REF(dataset.val_count)),
      number<std::size_t>("dataset.test_count", PF_REF(dataset.test_count)),
      number<double>("dataset.freq_lo", PF_REF(dataset.freq_lo)),
      number<double>("dataset.freq_hi", PF_REF(dataset.freq_hi)),
      number<int>("dataset.waves", PF_REF(dataset.waves)),
      number<int>("dataset.shapes", PF_REF(dataset.shapes)),
      number<double>("dataset.grain", PF_REF(dataset.grain)),
      number<double>("dataset.artifact_period", PF_REF(dataset.artifact_period)),
      number<double>("dataset.artifact_amplitude", PF_REF(dataset.artifact_amplitude)),
      number<double>("dataset.envelope_x", PF_REF(dataset.envelope_x)),
      number<double>("dataset.envelope_y", PF_REF(dataset.envelope_y)),
      number<double>("dataset.envelope_sigma", PF_REF(dataset.envelope_sigma)),
      number<double>("dataset.splice_min", PF_REF(dataset.splice_min)),
      number<double>("dataset.splice_max", PF_REF(dataset.splice_max)),
      number<double>("dataset.real_codec_strength", PF_REF(dataset.real_codec_strength)),
      number<double>("dataset.fake_codec_strength", PF_REF(dataset.fake_codec_strength)),
      text("dataset.transform_chain", PF_REF(dataset.transform_chain)),
      number<std::size_t>("dataset.source_size", PF_REF(dataset.source_size)),
      text("dataset.generator", PF_REF(dataset.generator)),

      enumerated("model.backbone", PF_REF(backbone), [](const BackboneSpec& b) { return b.to_string(); },
                 [](const std::string& s) { return BackboneSpec::parse(s); }),
      number<std::size_t>("model.native", PF_REF(native)),

      number<std::size_t>("training.batch_size", PF_REF(training.batch_size)),
      number<double>("training.lr", PF_REF(training.lr)),
      number<int>("training.patience_factor", PF_REF(training.patience_factor)),
      number<int>("training.patience_multiplier", PF_REF(training.patience_multiplier)),
      number<int>("training.max_epochs", PF_REF(training.max_epochs)),
      enumerated("training.augment", PF_REF(training.augment), [](AugmentMode m) { return to_string(m); },
                 [](const std::string& s) { return augment_mode_from_string(s); }),

      enumerated("analysis.split", PF_REF(analysis.split), [](Split s) { return to_string(s); },
                 [](const std::string& s) { return split_from_string(s); }),
      number<std::size_t>("analysis.k", PF_REF(analysis.k)),
      number<std::size_t>("analysis.heatmap_images", PF_REF(analysis.heatmap_images)),
      enumerated("analysis.cluster_mode", PF_REF(analysis.cluster_mode), [](ClusterMode m) { return to_string(m); },
                 [](const std::string& s) { return cluster_mode_from_string(s); }),
      number<double>("analysis.lambda", PF_REF(analysis.exaggerate.lambda)),
      number<int>("analysis.exaggerate_steps", PF_REF(analysis.exaggerate.steps)),
      number<std::size_t>("analysis.exaggerate_batch", PF_REF(analysis.exaggerate.batch)),
      number<double>("analysis.exaggerate_lr", PF_REF(analysis.exaggerate.lr)),
      number<std::size_t>("analysis.samples", PF_REF(analysis.samples)),

      number<std::size_t>("adversary.latent_dim", PF_REF(gan.latent_dim)),
      number<std::size_t>("adversary.image_size", PF_REF(gan.image_size)),
      number<std::size_t>("adversary.width", PF_REF(gan.width)),
      number<int>("adversary.gan_steps", PF_REF(gan.steps)),
      number<std::size_t>("adversary.gan_batch", PF_REF(gan.batch)),
      number<double>("adversary.gan_lr", PF_REF(gan.lr)),
      number<double>("adversary.gan_beta1", PF_REF(gan.beta1)),
      number<double>("adversary.gan_weight", PF_REF(evasion.gan_weight)),
      number<double>("adversary.real_weight", PF_REF(evasion.real_weight)),
      number<int>("adversary.evade_steps", PF_REF(evasion.steps)),
      number<std::size_t>("adversary.evade_batch", PF_REF(evasion.batch)),
      number<double>("adversary.evade_lr", PF_REF(evasion.lr)),
      number<double>("adversary.evade_beta1", PF_REF(evasion.beta1)),
      number<std::size_t>("adversary.evade_eval_samples", PF_REF(evade_eval_samples)),
      number<int>("adversary.reproject_steps", PF_REF(reproject.steps)),
      number<int>("adversary.reproject_restarts", PF_REF(reproject.restarts)),
      number<double>("adversary.reproject_lr", PF_REF(reproject.lr)),
  };
  return f;
}

#undef PF_REF

const Field& find(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

void ExperimentConfig::validate() const {
  dataset.validate();
  training.validate();
  gan.validate();
  if (native < 8) throw ConfigError("model.native must be at least 8");
  if (analysis.k == 0) throw ConfigError("analysis.k must be positive");
  if (analysis.exaggerate.lambda < 0) throw ConfigError("analysis.lambda must be >= 0");
  if (analysis.exaggerate.steps < 0 || analysis.exaggerate.batch < 2 || analysis.exaggerate.lr <= 0)
    throw ConfigError("invalid exaggerate settings");
  if (evasion.steps < 0 || evasion.batch < 1 || evasion.lr <= 0 || evasion.gan_weight < 0 || evasion.real_weight < 0)
    throw ConfigError("invalid evasion settings");
  if (reproject.steps < 0 || reproject.restarts < 1 || reproject.lr <= 0) throw ConfigError("invalid reprojection settings");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.push_back(f.key);
  return keys;
}

std::string get_value(const ExperimentConfig& cfg, const std::string& key) { return find(key).get(cfg); }

void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  try {
    find(key).set(cfg, value);
  } catch (const Error& e) {
    if (dynamic_cast<const ConfigError*>(&e)) throw;
    throw ConfigError(key + ": " + e.what());
  }
}

ExperimentConfig parse_config(const std::string& text) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::ini_parser::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  ExperimentConfig cfg;
  for (const auto& [section, body] : tree) {
    if (!body.data().empty()) throw ConfigError("config key '" + section + "' outside a section");
    for (const auto& [key, value] : body) set_value(cfg, section + "." + key, value.data());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const ExperimentConfig& cfg) {
  std::string out, section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      out += (section.empty() ? "[" : "\n[") + s + "]\n";
      section = s;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(cfg) + "\n";
  }
  return out;
}

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream o(path, std::ios::binary);
  o << format_config(cfg);
  if (!o) throw IoError("cannot write " + path.string());
}

}  // namespace pf::cli
