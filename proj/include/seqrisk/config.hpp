#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqrisk/data_model.hpp"
#include "seqrisk/model.hpp"
#include "seqrisk/survival_mnist.hpp"
#include "seqrisk/training.hpp"

namespace seqrisk {

struct ReproduceConfig {
  std::vector<double> masking_levels = {0.70, 0.80, 0.90, 0.95, 0.99};
  std::vector<risk::Variant> variants = {risk::Variant::transformer_only, risk::Variant::vae_mlp,
                                         risk::Variant::vae_transformer, risk::Variant::lvae_transformer};
  /// Linear Cox rows: "mean" and/or "knn" imputation.
  std::vector<std::string> cox_imputation = {"mean", "knn"};
  int knn_k = 5;
};

/// Everything one command needs. JSON keys: seed, mnist_images, simulation,
/// vae, gp, risk_head, training, splits, reproduce. Unknown keys are rejected
/// at every level.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  /// IDX3 file of source digits; empty = the bundled digit-3 subset.
  std::string mnist_images;
  sim::SimConfig simulation;
  model::ModelConfig model = model::mnist_preset(risk::Variant::vae_transformer);
  train::TrainConfig training;
  SplitFractions splits;
  ReproduceConfig reproduce;

  /// Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
/// Throws IoError / ConfigError.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Path of the bundled digit-3 images.
std::filesystem::path default_mnist_images();

}  // namespace seqrisk
