#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hopmix/mixer.hpp"

namespace hopmix {

// Flat `key = value` configuration: one assignment per line, `#` starts a
// comment, dotted keys, later assignments win. Unknown keys are rejected
// with the full list of valid keys.
class Config {
 public:
  static Config from_file(const std::string& path);
  static Config from_string(const std::string& text);
  Config() = default;

  // Applies a single "key=value" override.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  std::vector<double> get_double_list(const std::string& key) const;  // comma separated
  std::vector<std::string> get_string_list(const std::string& key) const;

  // Throws ConfigError naming every valid key if an unknown key is present.
  void validate_keys() const;

  const std::map<std::string, std::string>& values() const { return values_; }

  static const std::vector<std::string>& known_keys();

 private:
  std::map<std::string, std::string> values_;
};

// model.* / specnorm.* keys (preset applied first, explicit keys override).
MixerConfig mixer_config_from(const Config& cfg);

// Canonical flat serialization of a model config; parseable by from_string.
std::string serialize_mixer_config(const MixerConfig& cfg);

struct OptimConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct TrainSettings {
  OptimConfig opt;
  int epochs = 30;
  int batch_size = 64;
  double label_smoothing = 0.1;
  int eval_every = 1;
  double stop_train_acc = 0.0;  // 0 disables early stopping
  double stop_val_acc = 0.0;
};

TrainSettings train_settings_from(const Config& cfg);

}  // namespace hopmix
