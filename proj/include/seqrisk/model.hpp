#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqrisk/data_model.hpp"
#include "seqrisk/gp_prior.hpp"
#include "seqrisk/nn.hpp"
#include "seqrisk/risk_transformer.hpp"
#include "seqrisk/vae.hpp"

namespace seqrisk::model {

/// Architecture of one SeqRisk variant. The variant lives in risk.variant;
/// `gp` is used by lvae_transformer only and `vae` by every variant that
/// encodes (transformer_only still reads vae.input_scale).
struct ModelConfig {
  vae::VaeConfig vae;
  gp::GPPriorConfig gp;
  risk::RiskHeadConfig risk;
};

nlohmann::json to_json(const ModelConfig& c);
/// Keys "vae", "gp", "risk_head"; unknown keys rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Survival MNIST defaults for a variant with latent dimension `latent_dim`.
ModelConfig mnist_preset(risk::Variant variant, int latent_dim = 16);

/// Whole-dataset tensors built once; batches are row gathers.
struct DatasetTensors {
  torch::Tensor values;           // samples x D, scaled, store dtype
  torch::Tensor mask;             // samples x D, 1 = observed, store dtype
  torch::Tensor covariates;       // samples x Q, double (all schema columns)
  torch::Tensor risk_covariates;  // samples x Q', store dtype
  std::vector<std::int64_t> record_offsets;  // records + 1 entries
  std::vector<double> times;
  std::vector<bool> events;
  std::vector<CovariateSpec> schema;

  std::size_t patient_count() const { return times.size(); }
  std::int64_t feature_dim() const { return values.size(1); }
};

/// Throws ConfigError when a named risk covariate is missing or is the
/// patient id.
DatasetTensors make_tensors(const SurvivalDataset& dataset, const ModelConfig& config, torch::Dtype dtype);

struct PatientBatch {
  std::vector<std::size_t> patients;  // record indices
  torch::Tensor values, mask, covariates, risk_covariates;
  std::vector<std::int64_t> offsets;  // patients + 1 entries into the batch rows
  std::vector<double> times;
  std::vector<bool> events;
  /// Patients whose survival labels may enter the loss.
  std::vector<bool> in_train;

  std::size_t size() const { return patients.size(); }
  std::int64_t sample_count() const { return offsets.back(); }
};

/// `in_train` is indexed by record; pass an empty vector to mark none.
PatientBatch make_batch(const DatasetTensors& data, const std::vector<std::size_t>& patients,
                        const std::vector<bool>& in_train = {});

/// Outputs of one training-mode forward pass.
struct ForwardOutput {
  torch::Tensor risk;    // B scores
  torch::Tensor elbo;    // scalar sum over samples (recon - kl); undefined without a VAE
  torch::Tensor recon;
  torch::Tensor kl;
};

class SeqRiskModel {
 public:
  SeqRiskModel(const ModelConfig& config, std::int64_t feature_dim, const std::vector<CovariateSpec>& schema,
               std::uint64_t seed, torch::Dtype dtype = torch::kFloat32);

  /// Chooses the GP inducing inputs from the covariate rows of `patients`.
  /// No-op for variants without a GP prior.
  void select_inducing(const DatasetTensors& data, const std::vector<std::size_t>& patients, std::uint64_t seed);

  /// One reparameterized latent draw feeds both the ELBO and the risk head.
  ForwardOutput forward(const PatientBatch& batch, at::Generator& gen) const;

  /// Risk scores from posterior means, without gradient, as doubles.
  std::vector<double> score(const DatasetTensors& data, const std::vector<std::size_t>& patients,
                            std::size_t chunk = 64) const;
  /// Posterior mean of each patient's last sample (patients x L, double).
  torch::Tensor last_latent_means(const DatasetTensors& data, const std::vector<std::size_t>& patients) const;

  torch::Tensor risk_from_latents(const PatientBatch& batch, const torch::Tensor& z,
                                  risk::AttentionTrace* trace = nullptr) const;

  const ModelConfig& config() const { return config_; }
  risk::Variant variant() const { return config_.risk.variant; }
  nn::ParameterStore& store() { return store_; }
  const nn::ParameterStore& store() const { return store_; }
  const vae::Vae* vae() const { return vae_.get(); }
  const gp::GPPrior* gp() const { return gp_.get(); }
  gp::GPPrior* gp() { return gp_.get(); }
  const risk::RiskTransformer& risk_head() const { return *risk_; }

 private:
  ModelConfig config_;
  nn::ParameterStore store_;
  std::unique_ptr<vae::Vae> vae_;
  std::unique_ptr<gp::GPPrior> gp_;
  std::unique_ptr<risk::RiskTransformer> risk_;
};

}  // namespace seqrisk::model
