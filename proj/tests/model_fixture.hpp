#pragma once

#include <random>

#include "seqrisk/model.hpp"
#include "seqrisk/training.hpp"
#include "test_support.hpp"

namespace seqrisk::testing {

/// Tiny MLP-VAE model on random_dataset features.
inline model::ModelConfig small_config(risk::Variant v) {
  model::ModelConfig c;
  c.vae = vae::mlp_preset(3);
  c.vae.encoder_hidden = {12};
  c.vae.decoder_hidden = {12};
  c.vae.input_scale = 0.01;
  c.gp = gp::mnist_preset();
  c.gp.inducing_count = 16;
  c.risk.model_dim = 8;
  c.risk.mlp_hidden = 6;
  c.risk.variant = v;
  c.risk.covariates = {"time", "smoker"};
  return c;
}

struct Fixture {
  SurvivalDataset dataset;
  SplitMap splits;
  model::DatasetTensors data;
  train::TrainingSets sets;

  explicit Fixture(const model::ModelConfig& c, int patients = 40, std::uint64_t seed = 3) {
    std::mt19937_64 rng(seed);
    dataset = random_dataset(rng, patients, 10);
    splits = assign_splits(dataset, {}, 7);
    data = model::make_tensors(dataset, c, torch::kFloat64);
    sets = train::training_sets(dataset, splits);
  }
};

inline model::SeqRiskModel make_model(const model::ModelConfig& c, const Fixture& f, std::uint64_t seed = 1) {
  model::SeqRiskModel m(c, f.data.feature_dim(), f.dataset.covariate_schema, seed, torch::kFloat64);
  m.select_inducing(f.data, f.sets.train, 5);
  return m;
}

inline std::vector<bool> train_flags(const Fixture& f) {
  std::vector<bool> flags(f.data.patient_count(), false);
  for (auto p : f.sets.train) flags[p] = true;
  return flags;
}

}  // namespace seqrisk::testing
