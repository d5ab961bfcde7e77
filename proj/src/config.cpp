#include "hopmix/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace hopmix {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<std::string>& Config::known_keys() {
  static const std::vector<std::string> keys = {
      "seed",
      "model.preset",
      "model.image_size",
      "model.patch_size",
      "model.channels_in",
      "model.hidden_dim",
      "model.depth",
      "model.token_mlp_dim",
      "model.channel_mlp_dim",
      "model.token_mixer",
      "model.h_r",
      "model.n_iter",
      "model.num_classes",
      "model.dropout",
      "specnorm.coeff",
      "specnorm.n_power",
      "specnorm.mode",
      "train.lr",
      "train.beta1",
      "train.beta2",
      "train.eps",
      "train.weight_decay",
      "train.epochs",
      "train.batch_size",
      "train.label_smoothing",
      "train.eval_every",
      "train.stop_train_acc",
      "train.stop_val_acc",
      "data.classes",
      "data.per_class",
      "data.val_per_class",
      "data.height",
      "data.width",
      "data.channels",
      "data.noise",
      "probe.n_iter",
      "probe.samples",
      "gradcheck.step",
      "gradcheck.samples",
      "gradcheck.batch",
      "hopfield.sizes",
      "hopfield.tau",
      "hopfield.lagrangians",
      "hopfield.alpha",
      "hopfield.dt",
      "hopfield.steps",
      "hopfield.record_every",
      "hopfield.weight_scale",
  };
  return keys;
}

Config Config::from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return from_string(ss.str());
}

Config Config::from_string(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void Config::set(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "': expected key=value");
  std::string key = trim(assignment.substr(0, eq));
  std::string value = trim(assignment.substr(eq + 1));
  set(key, value);
}

void Config::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw ConfigError("empty config key");
  values_[key] = value;
}

void Config::validate_keys() const {
  const auto& known = known_keys();
  for (const auto& [key, value] : values_) {
    bool ok = false;
    for (const auto& k : known)
      if (k == key) {
        ok = true;
        break;
      }
    if (!ok) {
      std::string msg = "unknown config key '" + key + "'; valid keys are:";
      for (const auto& k : known) msg += "\n  " + k;
      throw ConfigError(msg);
    }
  }
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  try {
    std::size_t pos = 0;
    const double v = std::stod(it->second, &pos);
    if (pos != it->second.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + it->second + "' as number");
  }
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::int64_t v = 0;
  const auto* begin = it->second.data();
  const auto* end = begin + it->second.size();
  auto [p, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || p != end)
    throw ConfigError("config key '" + key + "': cannot parse '" + it->second + "' as integer");
  return v;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  std::uint64_t v = 0;
  const auto* begin = it->second.data();
  const auto* end = begin + it->second.size();
  auto [p, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || p != end)
    throw ConfigError("config key '" + key + "': cannot parse '" + it->second +
                      "' as unsigned integer");
  return v;
}

std::vector<std::string> Config::get_string_list(const std::string& key) const {
  std::vector<std::string> out;
  auto it = values_.find(key);
  if (it == values_.end()) return out;
  std::istringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<double> Config::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& s : get_string_list(key)) {
    try {
      out.push_back(std::stod(s));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "': cannot parse '" + s + "' as number");
    }
  }
  return out;
}

MixerConfig mixer_config_from(const Config& cfg) {
  MixerConfig mc;
  const std::string preset = cfg.get_string("model.preset", "micro");
  if (preset == "micro")
    mc = micro_preset();
  else if (preset == "tiny")
    mc = tiny_preset();
  else
    throw ConfigError("model.preset must be 'micro' or 'tiny', got '" + preset + "'");

  mc.image_size = static_cast<int>(cfg.get_int("model.image_size", mc.image_size));
  mc.patch_size = static_cast<int>(cfg.get_int("model.patch_size", mc.patch_size));
  mc.channels_in = static_cast<int>(cfg.get_int("model.channels_in", mc.channels_in));
  mc.hidden_dim = static_cast<int>(cfg.get_int("model.hidden_dim", mc.hidden_dim));
  mc.depth = static_cast<int>(cfg.get_int("model.depth", mc.depth));
  mc.token_mlp_dim = static_cast<int>(cfg.get_int("model.token_mlp_dim", mc.token_mlp_dim));
  mc.channel_mlp_dim = static_cast<int>(cfg.get_int("model.channel_mlp_dim", mc.channel_mlp_dim));
  const std::string mixer = cfg.get_string("model.token_mixer", "imlp");
  if (mixer == "imlp")
    mc.token_mixer = TokenMixerKind::IMlp;
  else if (mixer == "vanilla")
    mc.token_mixer = TokenMixerKind::Vanilla;
  else
    throw ConfigError("model.token_mixer must be 'imlp' or 'vanilla', got '" + mixer + "'");
  mc.h_r = cfg.get_double("model.h_r", mc.h_r);
  mc.n_iter = static_cast<int>(cfg.get_int("model.n_iter", mc.n_iter));
  mc.num_classes = static_cast<int>(cfg.get_int("model.num_classes", mc.num_classes));
  mc.dropout = cfg.get_double("model.dropout", mc.dropout);
  mc.specnorm_coeff = cfg.get_double("specnorm.coeff", mc.specnorm_coeff);
  mc.specnorm_n_power = static_cast<int>(cfg.get_int("specnorm.n_power", mc.specnorm_n_power));
  const std::string mode = cfg.get_string("specnorm.mode", "spec");
  if (mode == "spec")
    mc.specnorm_mode = SpecMode::Spec;
  else if (mode == "none")
    mc.specnorm_mode = SpecMode::None;
  else if (mode == "batchnorm-like")
    mc.specnorm_mode = SpecMode::BatchNormLike;
  else
    throw ConfigError("specnorm.mode must be 'spec', 'none' or 'batchnorm-like', got '" + mode +
                      "'");
  mc.seed = cfg.get_u64("seed", mc.seed);
  mc.validate();
  return mc;
}

std::string serialize_mixer_config(const MixerConfig& cfg) {
  std::ostringstream os;
  os << "model.image_size = " << cfg.image_size << "\n";
  os << "model.patch_size = " << cfg.patch_size << "\n";
  os << "model.channels_in = " << cfg.channels_in << "\n";
  os << "model.hidden_dim = " << cfg.hidden_dim << "\n";
  os << "model.depth = " << cfg.depth << "\n";
  os << "model.token_mlp_dim = " << cfg.token_mlp_dim << "\n";
  os << "model.channel_mlp_dim = " << cfg.channel_mlp_dim << "\n";
  os << "model.token_mixer = "
     << (cfg.token_mixer == TokenMixerKind::IMlp ? "imlp" : "vanilla") << "\n";
  os.precision(17);
  os << "model.h_r = " << cfg.h_r << "\n";
  os << "model.n_iter = " << cfg.n_iter << "\n";
  os << "model.num_classes = " << cfg.num_classes << "\n";
  os << "model.dropout = " << cfg.dropout << "\n";
  os << "specnorm.coeff = " << cfg.specnorm_coeff << "\n";
  os << "specnorm.n_power = " << cfg.specnorm_n_power << "\n";
  os << "specnorm.mode = "
     << (cfg.specnorm_mode == SpecMode::Spec
             ? "spec"
             : (cfg.specnorm_mode == SpecMode::None ? "none" : "batchnorm-like"))
     << "\n";
  os << "seed = " << cfg.seed << "\n";
  return os.str();
}

TrainSettings train_settings_from(const Config& cfg) {
  TrainSettings ts;
  ts.opt.lr = cfg.get_double("train.lr", ts.opt.lr);
  ts.opt.beta1 = cfg.get_double("train.beta1", ts.opt.beta1);
  ts.opt.beta2 = cfg.get_double("train.beta2", ts.opt.beta2);
  ts.opt.eps = cfg.get_double("train.eps", ts.opt.eps);
  ts.opt.weight_decay = cfg.get_double("train.weight_decay", ts.opt.weight_decay);
  ts.epochs = static_cast<int>(cfg.get_int("train.epochs", ts.epochs));
  ts.batch_size = static_cast<int>(cfg.get_int("train.batch_size", ts.batch_size));
  ts.label_smoothing = cfg.get_double("train.label_smoothing", ts.label_smoothing);
  ts.eval_every = static_cast<int>(cfg.get_int("train.eval_every", ts.eval_every));
  ts.stop_train_acc = cfg.get_double("train.stop_train_acc", ts.stop_train_acc);
  ts.stop_val_acc = cfg.get_double("train.stop_val_acc", ts.stop_val_acc);
  if (ts.opt.lr < 0.0) throw ConfigError("train.lr must be >= 0");
  if (ts.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (ts.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (ts.label_smoothing < 0.0 || ts.label_smoothing >= 1.0)
    throw ConfigError("train.label_smoothing must be in [0,1)");
  if (ts.eval_every < 1) throw ConfigError("train.eval_every must be >= 1");
  return ts;
}

}  // namespace hopmix
