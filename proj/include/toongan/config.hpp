#pragma once

// Training configuration and its text format: one "key = value" per line,
// '#' starts a comment, blank lines are ignored, unknown keys are errors.
// Paths are taken verbatim (no quoting). Booleans are true/false.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "toongan/errors.hpp"
#include "toongan/losses.hpp"
#include "toongan/models.hpp"
#include "toongan/optim.hpp"

namespace toongan {

struct TrainConfig {
  std::size_t batch_size = 11;
  std::size_t init_epochs = 10;
  std::size_t gan_epochs = 60;
  double base_lr = 1e-3;
  double max_lr = 1e-2;
  std::uint64_t half_cycle = 0;  // 0: one epoch of steps
  double weight_decay = 1e-4;
  double omega = 10.0;
  double d_real_weight = 1.0;
  double d_edge_weight = 1.0;
  double d_fake_weight = 1.0;
  std::uint64_t seed = 42;
  std::size_t image_size = 224;
  std::uint64_t checkpoint_every = 0;  // steps; 0: only at the end
  bool flip = true;

  std::size_t gen_base = 64;
  std::size_t gen_residual_blocks = 8;
  std::size_t disc_base = 32;
  std::size_t feature_base = 32;
  std::string feature_weights;  // optional checkpoint holding "F.*" tensors

  std::string photo_dir;
  std::string cartoon_dir;
  std::string smoothed_dir;
  std::string out_dir;

  void validate() const {
    if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (batch norm needs two samples)");
    if (image_size < 8 || image_size % 4 != 0) throw ConfigError("image_size must be a multiple of 4 and >= 8");
    lr_schedule(1).validate();
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    loss_weights().validate();
    generator_config().validate();
    discriminator_config().validate();
    feature_config().validate();
  }

  LossWeights loss_weights() const { return {omega, d_real_weight, d_edge_weight, d_fake_weight}; }
  LrSchedule lr_schedule(std::uint64_t steps_per_epoch) const {
    return {base_lr, max_lr, half_cycle ? half_cycle : steps_per_epoch};
  }
  AdamWOptions adamw() const {
    AdamWOptions o;
    o.weight_decay = weight_decay;
    return o;
  }
  GeneratorConfig generator_config() const { return {gen_base, gen_residual_blocks, 7}; }
  DiscriminatorConfig discriminator_config() const { return {disc_base}; }
  FeatureExtractorConfig feature_config() const { return {feature_base}; }
};

namespace detail {

template <typename V>
V parse_number(const std::string& key, const std::string& text) {
  V v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end) throw ConfigError("config key '" + key + "': cannot parse '" + text + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Field table shared by the reader and the writer.
struct ConfigField {
  std::string key;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

template <typename V>
ConfigField field(std::string key, V TrainConfig::*member) {
  ConfigField f;
  f.key = key;
  if constexpr (std::is_same_v<V, std::string>) {
    f.set = [member](TrainConfig& c, const std::string& v) { c.*member = v; };
    f.get = [member](const TrainConfig& c) { return c.*member; };
  } else if constexpr (std::is_same_v<V, bool>) {
    f.set = [member, key](TrainConfig& c, const std::string& v) {
      if (v == "true" || v == "1") {
        c.*member = true;
      } else if (v == "false" || v == "0") {
        c.*member = false;
      } else {
        throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
      }
    };
    f.get = [member](const TrainConfig& c) { return std::string(c.*member ? "true" : "false"); };
  } else if constexpr (std::is_floating_point_v<V>) {
    f.set = [member, key](TrainConfig& c, const std::string& v) { c.*member = parse_number<V>(key, v); };
    f.get = [member](const TrainConfig& c) { return format_double(c.*member); };
  } else {
    f.set = [member, key](TrainConfig& c, const std::string& v) { c.*member = parse_number<V>(key, v); };
    f.get = [member](const TrainConfig& c) { return std::to_string(c.*member); };
  }
  return f;
}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      field("batch_size", &TrainConfig::batch_size),
      field("init_epochs", &TrainConfig::init_epochs),
      field("gan_epochs", &TrainConfig::gan_epochs),
      field("base_lr", &TrainConfig::base_lr),
      field("max_lr", &TrainConfig::max_lr),
      field("half_cycle", &TrainConfig::half_cycle),
      field("weight_decay", &TrainConfig::weight_decay),
      field("omega", &TrainConfig::omega),
      field("d_real_weight", &TrainConfig::d_real_weight),
      field("d_edge_weight", &TrainConfig::d_edge_weight),
      field("d_fake_weight", &TrainConfig::d_fake_weight),
      field("seed", &TrainConfig::seed),
      field("image_size", &TrainConfig::image_size),
      field("checkpoint_every", &TrainConfig::checkpoint_every),
      field("flip", &TrainConfig::flip),
      field("gen_base", &TrainConfig::gen_base),
      field("gen_residual_blocks", &TrainConfig::gen_residual_blocks),
      field("disc_base", &TrainConfig::disc_base),
      field("feature_base", &TrainConfig::feature_base),
      field("feature_weights", &TrainConfig::feature_weights),
      field("photo_dir", &TrainConfig::photo_dir),
      field("cartoon_dir", &TrainConfig::cartoon_dir),
      field("smoothed_dir", &TrainConfig::smoothed_dir),
      field("out_dir", &TrainConfig::out_dir),
  };
  return fields;
}

}  // namespace detail

/// Sets one key; throws ConfigError for unknown keys or unparsable values.
inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : detail::config_fields()) {
    if (f.key == key) {
      f.set(cfg, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline std::map<std::string, std::string> config_values(const TrainConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& f : detail::config_fields()) out[f.key] = f.get(cfg);
  return out;
}

/// Parses the text format on top of `base` (defaults unless given).
inline TrainConfig parse_train_config(const std::string& text, TrainConfig base = {}) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    try {
      set_config_value(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_train_config(ss.str());
}

inline std::string to_text(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : detail::config_fields()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

}  // namespace toongan
