#pragma once

#include "aikae/assimilation.hpp"
#include "aikae/losses.hpp"
#include "aikae/model.hpp"
#include "aikae/train.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace aikae {

inline constexpr const char* kVersion = "0.1.0";

struct ConfigKey {
  const char* key;
  const char* value;
  const char* help;
};

// Every accepted key with its default.
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"run.seed", "0", "single seed all random streams derive from"},
      {"run.out_dir", "runs/latest", "directory for every file a command writes"},

      {"data.path", "", "CSV dataset; empty uses the synth.* generator"},
      {"data.splits", "auto", "auto (70/10/20), ett_hourly, or train,val,test row counts"},
      {"data.mode", "delay", "delay: univariate T_L blocks per channel; state: rows as states"},
      {"data.lookback", "96", "T_L, also the model dimension n in delay mode"},
      {"data.horizon", "96", "T_P"},
      {"data.stride", "1", "window stride for training samples"},
      {"data.normalize", "true", "z-score channels with train-split statistics"},
      {"data.group", "0", "state mode: channels per state (0 = all)"},
      {"data.derivative", "false", "state mode: append x_{t+1} - x_t to each state"},

      {"synth.system", "linear", "linear, koopman_quadratic or pixels"},
      {"synth.length", "1000", "rows to generate"},
      {"synth.dim", "4", "linear: state dimension"},
      {"synth.radius", "0.95", "linear: spectral radius of the random A"},
      {"synth.noise", "0", "process noise standard deviation"},
      {"synth.a", "0.9", "koopman_quadratic: a"},
      {"synth.b", "0.5", "koopman_quadratic: b"},
      {"synth.c", "1.0", "koopman_quadratic: c"},
      {"synth.x0", "1,1", "koopman_quadratic: initial state"},
      {"synth.pixels", "4", "pixels: number of pixels"},
      {"synth.bands", "10", "pixels: bands per pixel"},
      {"synth.period", "23", "pixels: seasonal period in steps"},
      {"synth.mask_rate", "0", "probability that a row is unobserved"},
      {"synth.output", "synth.csv", "synth command output file"},

      {"model.variant", "aikae", "kae, ikae, ikae_zp, aikae, or linear (ikae with k = 0)"},
      {"model.p", "32", "augmentation / padding size"},
      {"model.k", "4", "coupling layers"},
      {"model.w", "256", "coupling hidden width"},
      {"model.latent", "32", "kae latent size"},
      {"model.chi_hidden", "256,128", "augmentation encoder hidden widths"},
      {"model.kae_hidden", "256,128", "kae encoder hidden widths (decoder mirrors them)"},
      {"model.revin", "false", "reversible instance normalization"},
      {"model.revin_eps", "1e-5", "RevIN variance floor"},
      {"model.leaky_slope", "0.01", "coupling leaky-ReLU negative slope"},

      {"train.epochs", "100", "epoch budget"},
      {"train.batch_size", "128", "mini-batch size"},
      {"train.max_tau", "0", "rollout steps in the losses (0 = ceil(T_P/T_L) in delay mode, 8 in state mode)"},
      {"train.clip", "5.0", "global gradient-norm clip (0 disables)"},

      {"optim.lr", "1e-3", "Adam learning rate"},
      {"optim.beta1", "0.9", "Adam beta1"},
      {"optim.beta2", "0.999", "Adam beta2"},
      {"optim.eps", "1e-8", "Adam epsilon"},
      {"optim.weight_decay", "auto", "decoupled weight decay (auto = 1e-6 for aikae/ikae_zp, else 0)"},

      {"loss.w_pred", "1", "prediction weight"},
      {"loss.w_lin", "1", "linearity weight"},
      {"loss.w_orth", "0.01", "orthogonality weight"},
      {"loss.w_recon", "1", "reconstruction weight (kae only)"},
      {"loss.alpha", "1", "weight of the augmentation residual in the linearity loss"},
      {"loss.orth_mode", "kTk", "kTk (||K^T K - I||_F^2) or norm_drift"},

      {"eval.checkpoint", "", "checkpoint to evaluate"},
      {"eval.horizons", "", "comma-separated T_P values (empty = data.horizon)"},

      {"assim.checkpoint", "", "frozen prior model"},
      {"assim.obs", "", "observation CSV: t,mask,v1..vn"},
      {"assim.truth", "", "optional CSV t,v1..vn scored against the forecast"},
      {"assim.horizon", "0", "steps to forecast past the last observation row"},
      {"assim.lr", "1e-2", "Adam learning rate on z0"},
      {"assim.steps", "500", "Adam steps on z0"},
      {"assim.constraint", "none", "none or exact-initial"},

      {"gradcheck.h", "1e-5", "central-difference step"},
      {"gradcheck.tol", "1e-4", "relative error tolerance"},
      {"gradcheck.batch", "4", "random samples in the checked batch"},
      {"gradcheck.coords", "16", "coordinates sampled per parameter tensor"},
      {"gradcheck.corrupt", "", "test hook: parameter whose analytic gradient is corrupted"},

      {"ablate.preset", "", "normalization, augmentation, alpha, lookback or hyper"},
      {"ablate.grid", "", "custom grid, e.g. model.p=0,2,4;loss.alpha=0,1"},
      {"ablate.output", "ablation.csv", "results table (relative to run.out_dir)"},
  };
  return keys;
}

namespace detail {
inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}
}  // namespace detail

/// Flat `section.key` configuration. Every key has a default; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[k.key] = k.value;
  }

  static bool known(const std::string& key) { return std::any_of(config_keys().begin(), config_keys().end(), [&](const ConfigKey& k) { return key == k.key; }); }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown config key '" + key + "'");
    values_[key] = value;
  }

  /// "section.key=value"
  void set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
    set(detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
  }

  /// Overlays an INI file ([section] / key = value).
  void merge_ini(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(path.string(), tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    for (const auto& [section, body] : tree) {
      if (body.empty()) throw ConfigError("config " + path.string() + ": key '" + section + "' is outside a section");
      for (const auto& [key, value] : body) set(section + "." + key, value.data());
    }
  }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key) const {
    auto v = detail::parse_double(str(key));
    if (!v) throw ConfigError("config " + key + ": expected a number, got '" + str(key) + "'");
    return *v;
  }

  std::size_t count(const std::string& key) const {
    const std::string& s = str(key);
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw ConfigError("config " + key + ": expected a non-negative integer, got '" + s + "'");
    }
    return v;
  }

  bool flag(const std::string& key) const {
    const std::string& s = str(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("config " + key + ": expected true or false, got '" + s + "'");
  }

  std::vector<std::size_t> counts(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& part : detail::split_list(str(key))) {
      std::size_t v = 0;
      auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
      if (ec != std::errc() || ptr != part.data() + part.size()) throw ConfigError("config " + key + ": bad integer '" + part + "'");
      out.push_back(v);
    }
    return out;
  }

  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& part : detail::split_list(str(key))) {
      auto v = detail::parse_double(part);
      if (!v) throw ConfigError("config " + key + ": bad number '" + part + "'");
      out.push_back(*v);
    }
    return out;
  }

  std::uint64_t seed() const { return count("run.seed"); }
  std::filesystem::path out_dir() const { return str("run.out_dir"); }

  const std::map<std::string, std::string>& values() const { return values_; }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
  }

 private:
  std::map<std::string, std::string> values_;
};

inline Variant config_variant(const RunConfig& c) {
  return c.str("model.variant") == "linear" ? Variant::ikae : parse_variant(c.str("model.variant"));
}

/// Model architecture; n and the RevIN channel count come from the data layout.
inline ModelConfig model_config(const RunConfig& c, std::size_t n, std::size_t channels) {
  ModelConfig m;
  m.variant = config_variant(c);
  m.n = n;
  m.p = c.count("model.p");
  m.k = c.str("model.variant") == "linear" ? 0 : c.count("model.k");
  m.w = c.count("model.w");
  m.latent = c.count("model.latent");
  m.chi_hidden = c.counts("model.chi_hidden");
  m.kae_hidden = c.counts("model.kae_hidden");
  m.revin = c.flag("model.revin");
  m.revin_eps = c.real("model.revin_eps");
  m.leaky_slope = c.real("model.leaky_slope");
  m.channels = std::max<std::size_t>(channels, 1);
  m.delay = c.str("data.mode") == "delay" ? n : 1;
  m.validate();
  return m;
}

inline LossWeights loss_weights(const RunConfig& c) {
  LossWeights w;
  w.w_pred = c.real("loss.w_pred");
  w.w_lin = c.real("loss.w_lin");
  w.w_orth = c.real("loss.w_orth");
  w.w_recon = c.real("loss.w_recon");
  w.alpha = c.real("loss.alpha");
  w.orth = parse_orth_mode(c.str("loss.orth_mode"));
  w.validate();
  return w;
}

inline double resolved_weight_decay(const RunConfig& c) {
  if (c.str("optim.weight_decay") != "auto") return c.real("optim.weight_decay");
  const Variant v = config_variant(c);
  return (v == Variant::aikae || v == Variant::ikae_zp) ? 1e-6 : 0.0;
}

inline TrainConfig train_config(const RunConfig& c) {
  TrainConfig t;
  t.adam.lr = c.real("optim.lr");
  t.adam.beta1 = c.real("optim.beta1");
  t.adam.beta2 = c.real("optim.beta2");
  t.adam.eps = c.real("optim.eps");
  t.adam.weight_decay = resolved_weight_decay(c);
  t.batch_size = c.count("train.batch_size");
  t.epochs = c.count("train.epochs");
  t.clip = c.real("train.clip");
  t.seed = c.seed();
  t.weights = loss_weights(c);
  if (!(t.adam.lr > 0.0)) throw ConfigError("optim.lr must be positive");
  if (t.batch_size == 0) throw ConfigError("train.batch_size must be positive");
  return t;
}

inline AssimilationOptions assimilation_options(const RunConfig& c) {
  AssimilationOptions o;
  o.lr = c.real("assim.lr");
  o.steps = c.count("assim.steps");
  o.constraint = parse_constraint(c.str("assim.constraint"));
  if (!(o.lr > 0.0)) throw ConfigError("assim.lr must be positive");
  return o;
}

}  // namespace aikae
