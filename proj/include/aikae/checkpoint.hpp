#pragma once

#include "aikae/model.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

namespace aikae {

inline constexpr const char* kCheckpointFormat = "aikae-checkpoint";
inline constexpr int kCheckpointVersion = 1;

// Text checkpoint. Doubles are written in shortest round-trip form, so
// load(save(model)) reproduces every parameter bit for bit.
inline nlohmann::json checkpoint_json(const AikaeModel& model) {
  const ModelConfig& c = model.config;
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["variant"] = to_string(c.variant);
  j["dims"] = {{"n", c.n}, {"p", c.p}, {"d", c.latent_dim()}, {"m", c.delay},
               {"k", c.k}, {"w", c.w}, {"latent", c.latent}};
  j["config"] = {{"chi_hidden", c.chi_hidden}, {"kae_hidden", c.kae_hidden}, {"revin", c.revin},
                 {"channels", c.channels},     {"revin_eps", c.revin_eps},   {"leaky_slope", c.leaky_slope}};
  auto params = nlohmann::json::array();
  model.visit([&](const std::string& name, const Tensor& t) {
    params.push_back({{"name", name},
                      {"shape", {t.rows(), t.cols()}},
                      {"values", std::vector<double>(t.values().begin(), t.values().end())}});
  });
  j["params"] = std::move(params);
  return j;
}

inline AikaeModel model_from_checkpoint(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw ParseError("checkpoint: unrecognized format tag");
    const int version = j.at("version").get<int>();
    if (version != kCheckpointVersion) throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    ModelConfig c;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    const auto& d = j.at("dims");
    c.n = d.at("n").get<std::size_t>();
    c.p = d.at("p").get<std::size_t>();
    c.delay = d.at("m").get<std::size_t>();
    c.k = d.at("k").get<std::size_t>();
    c.w = d.at("w").get<std::size_t>();
    c.latent = d.at("latent").get<std::size_t>();
    const auto& cfg = j.at("config");
    c.chi_hidden = cfg.at("chi_hidden").get<std::vector<std::size_t>>();
    c.kae_hidden = cfg.at("kae_hidden").get<std::vector<std::size_t>>();
    c.revin = cfg.at("revin").get<bool>();
    c.channels = cfg.at("channels").get<std::size_t>();
    c.revin_eps = cfg.at("revin_eps").get<double>();
    c.leaky_slope = cfg.at("leaky_slope").get<double>();
    if (d.at("d").get<std::size_t>() != c.latent_dim()) throw ParseError("checkpoint: latent dimension inconsistent with variant");

    AikaeModel model = AikaeModel::create(c, 0, Init::zero);
    std::map<std::string, const nlohmann::json*> by_name;
    for (const auto& p : j.at("params")) by_name[p.at("name").get<std::string>()] = &p;
    std::size_t used = 0;
    model.visit([&](const std::string& name, Tensor& t) {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw ParseError("checkpoint: missing parameter '" + name + "'");
      const auto& p = *it->second;
      auto shape = p.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols()) {
        throw ParseError("checkpoint: parameter '" + name + "' has shape incompatible with " + t.shape_string());
      }
      auto values = p.at("values").get<std::vector<double>>();
      t = Tensor::matrix(shape[0], shape[1], values);
      ++used;
    });
    if (used != by_name.size()) throw ParseError("checkpoint: contains parameters the model does not have");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: malformed JSON (") + e.what() + ")");
  }
}

inline void save_checkpoint(const AikaeModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << checkpoint_json(model).dump() << '\n';
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

inline AikaeModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path.string() + ": " + e.what());
  }
  return model_from_checkpoint(j);
}

}  // namespace aikae
