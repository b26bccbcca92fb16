#include "seqrisk/config.hpp"

#include <fstream>

#include "seqrisk/error.hpp"

namespace seqrisk {

using nlohmann::json;

void ExperimentConfig::validate() const {
  simulation.validate();
  training.validate();
  model.risk.validate();
  if (risk::uses_vae(model.risk.variant)) model.vae.validate(simulation.canvas_pixels());
  if (!(splits.train > 0 && splits.validation > 0 && splits.test > 0) ||
      std::abs(splits.train + splits.validation + splits.test - 1.0) > 1e-9) {
    throw ConfigError("splits: fractions must be positive and sum to 1");
  }
  if (reproduce.masking_levels.empty()) throw ConfigError("reproduce.masking_levels must be non-empty");
  for (double m : reproduce.masking_levels) {
    if (!(m >= 0.0 && m < 1.0)) throw ConfigError("reproduce.masking_levels must lie in [0, 1)");
  }
  for (const auto& s : reproduce.cox_imputation) {
    if (s != "mean" && s != "knn") throw ConfigError("reproduce.cox_imputation entries must be 'mean' or 'knn'");
  }
  if (reproduce.knn_k < 1) throw ConfigError("reproduce.knn_k must be >= 1");
}

json to_json(const ExperimentConfig& c) {
  json variants = json::array();
  for (auto v : c.reproduce.variants) variants.push_back(risk::to_string(v));
  return {{"seed", c.seed},
          {"mnist_images", c.mnist_images},
          {"simulation", sim::to_json(c.simulation)},
          {"vae", vae::to_json(c.model.vae)},
          {"gp", gp::to_json(c.model.gp)},
          {"risk_head", risk::to_json(c.model.risk)},
          {"training", train::to_json(c.training)},
          {"splits", {{"train", c.splits.train}, {"validation", c.splits.validation}, {"test", c.splits.test}}},
          {"reproduce",
           {{"masking_levels", c.reproduce.masking_levels},
            {"variants", variants},
            {"cox_imputation", c.reproduce.cox_imputation},
            {"knn_k", c.reproduce.knn_k}}}};
}

namespace {

SplitFractions splits_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("splits: expected an object");
  SplitFractions f;
  for (const auto& [key, v] : j.items()) {
    if (key == "train") f.train = v.get<double>();
    else if (key == "validation") f.validation = v.get<double>();
    else if (key == "test") f.test = v.get<double>();
    else throw ConfigError("splits: unknown key '" + key + "'");
  }
  return f;
}

ReproduceConfig reproduce_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("reproduce: expected an object");
  ReproduceConfig r;
  for (const auto& [key, v] : j.items()) {
    if (key == "masking_levels") r.masking_levels = v.get<std::vector<double>>();
    else if (key == "variants") {
      r.variants.clear();
      for (const auto& s : v) r.variants.push_back(risk::variant_from_string(s.get<std::string>()));
    } else if (key == "cox_imputation") r.cox_imputation = v.get<std::vector<std::string>>();
    else if (key == "knn_k") r.knn_k = v.get<int>();
    else throw ConfigError("reproduce: unknown key '" + key + "'");
  }
  return r;
}

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object at the top level");
  ExperimentConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "mnist_images") c.mnist_images = v.get<std::string>();
      else if (key == "simulation") c.simulation = sim::sim_config_from_json(v);
      else if (key == "vae") c.model.vae = vae::vae_config_from_json(v);
      else if (key == "gp") c.model.gp = gp::gp_config_from_json(v);
      else if (key == "risk_head") c.model.risk = risk::risk_config_from_json(v);
      else if (key == "training") c.training = train::train_config_from_json(v);
      else if (key == "splits") c.splits = splits_from_json(v);
      else if (key == "reproduce") c.reproduce = reproduce_from_json(v);
      else throw ConfigError("config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: wrong value type: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

std::filesystem::path default_mnist_images() {
  return std::filesystem::path(SEQRISK_DATA_DIR) / "mnist_digit3.idx3-ubyte";
}

}  // namespace seqrisk
