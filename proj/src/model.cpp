#include "seqrisk/model.hpp"

#include <algorithm>

#include "seqrisk/error.hpp"
#include "seqrisk/seeding.hpp"

namespace seqrisk::model {

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vae", vae::to_json(c.vae)}, {"gp", gp::to_json(c.gp)}, {"risk_head", risk::to_json(c.risk)}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model: expected an object");
  ModelConfig c = model::mnist_preset(risk::Variant::vae_transformer);
  for (const auto& [key, v] : j.items()) {
    if (key == "vae") c.vae = vae::vae_config_from_json(v);
    else if (key == "gp") c.gp = gp::gp_config_from_json(v);
    else if (key == "risk_head") c.risk = risk::risk_config_from_json(v);
    else throw ConfigError("model: unknown key '" + key + "'");
  }
  return c;
}

ModelConfig mnist_preset(risk::Variant variant, int latent_dim) {
  ModelConfig c;
  c.vae = vae::conv_preset(latent_dim);
  c.gp = gp::mnist_preset();
  c.risk = risk::mnist_preset(variant);
  return c;
}

DatasetTensors make_tensors(const SurvivalDataset& dataset, const ModelConfig& config, torch::Dtype dtype) {
  DatasetTensors t;
  t.schema = dataset.covariate_schema;
  const auto n = static_cast<std::int64_t>(dataset.sample_count());
  const auto d = static_cast<std::int64_t>(dataset.feature_count());
  const auto q = static_cast<std::int64_t>(dataset.covariate_count());

  std::vector<std::int64_t> risk_cols;
  for (const auto& name : config.risk.covariates) {
    const int idx = dataset.covariate_index(name);
    if (idx < 0) throw ConfigError("risk_head.covariates: unknown covariate '" + name + "'");
    if (name == "patient_id") throw ConfigError("risk_head.covariates: the patient id cannot feed the risk head");
    risk_cols.push_back(idx);
  }

  auto values = torch::zeros({n, d}, torch::kFloat64);
  auto mask = torch::zeros({n, d}, torch::kFloat64);
  auto cov = torch::zeros({n, q}, torch::kFloat64);
  auto* pv = values.data_ptr<double>();
  auto* pm = mask.data_ptr<double>();
  auto* pc = cov.data_ptr<double>();
  const double scale = config.vae.input_scale;
  std::int64_t row = 0;
  t.record_offsets.push_back(0);
  for (const auto& rec : dataset.records) {
    for (const auto& s : rec.samples) {
      for (std::int64_t j = 0; j < d; ++j) {
        if (s.observed_mask[j]) {
          pv[row * d + j] = s.measurements[j] * scale;
          pm[row * d + j] = 1.0;
        } else {
          pv[row * d + j] = kUnobservedSentinel;
        }
      }
      std::copy(s.covariates.begin(), s.covariates.end(), pc + row * q);
      ++row;
    }
    t.record_offsets.push_back(row);
    t.times.push_back(rec.event_time);
    t.events.push_back(rec.event);
  }
  t.values = values.to(dtype);
  t.mask = mask.to(dtype);
  t.covariates = cov;
  if (risk_cols.empty()) {
    t.risk_covariates = torch::zeros({n, 0}, dtype);
  } else {
    t.risk_covariates = cov.index_select(1, torch::tensor(risk_cols, torch::kInt64)).to(dtype);
  }
  return t;
}

PatientBatch make_batch(const DatasetTensors& data, const std::vector<std::size_t>& patients,
                        const std::vector<bool>& in_train) {
  PatientBatch b;
  b.patients = patients;
  std::vector<std::int64_t> rows;
  b.offsets.push_back(0);
  for (auto p : patients) {
    if (p >= data.patient_count()) throw SchemaError("make_batch: patient index out of range");
    for (auto r = data.record_offsets[p]; r < data.record_offsets[p + 1]; ++r) rows.push_back(r);
    b.offsets.push_back(static_cast<std::int64_t>(rows.size()));
    b.times.push_back(data.times[p]);
    b.events.push_back(data.events[p]);
    b.in_train.push_back(!in_train.empty() && in_train[p]);
  }
  const auto idx = torch::tensor(rows, torch::kInt64);
  b.values = data.values.index_select(0, idx);
  b.mask = data.mask.index_select(0, idx);
  b.covariates = data.covariates.index_select(0, idx);
  b.risk_covariates = data.risk_covariates.index_select(0, idx);
  return b;
}

SeqRiskModel::SeqRiskModel(const ModelConfig& config, std::int64_t feature_dim,
                           const std::vector<CovariateSpec>& schema, std::uint64_t seed, torch::Dtype dtype)
    : config_(config), store_(dtype) {
  auto gen = nn::make_generator(derive_seed(seed, "init"));
  const auto variant = config_.risk.variant;
  std::int64_t risk_in = static_cast<std::int64_t>(config_.risk.covariates.size());
  if (risk::uses_vae(variant)) {
    vae_ = std::make_unique<vae::Vae>(config_.vae, feature_dim, store_, gen);
    risk_in += config_.vae.latent_dim;
  } else {
    risk_in += 2 * feature_dim;
  }
  if (variant == risk::Variant::lvae_transformer) {
    gp_ = std::make_unique<gp::GPPrior>(config_.gp, schema, config_.vae.latent_dim, store_);
  }
  risk_ = std::make_unique<risk::RiskTransformer>(config_.risk, risk_in, store_, gen);
}

void SeqRiskModel::select_inducing(const DatasetTensors& data, const std::vector<std::size_t>& patients,
                                   std::uint64_t seed) {
  if (!gp_) return;
  std::vector<std::int64_t> rows;
  for (auto p : patients) {
    for (auto r = data.record_offsets[p]; r < data.record_offsets[p + 1]; ++r) rows.push_back(r);
  }
  const auto cov = data.covariates.index_select(0, torch::tensor(rows, torch::kInt64));
  gp_->set_inducing(gp::select_inducing(cov, config_.gp.inducing_count, seed));
}

torch::Tensor SeqRiskModel::risk_from_latents(const PatientBatch& batch, const torch::Tensor& z,
                                              risk::AttentionTrace* trace) const {
  const auto rows = batch.risk_covariates.size(1) > 0 ? at::cat({z, batch.risk_covariates}, 1) : z;
  return risk_->risk_score(risk::pack_sequences(rows, batch.offsets), trace);
}

ForwardOutput SeqRiskModel::forward(const PatientBatch& batch, at::Generator& gen) const {
  ForwardOutput out;
  if (!vae_) {
    out.risk = risk_from_latents(batch, at::cat({batch.values, batch.mask}, 1));
    return out;
  }
  const auto q = vae_->encode(batch.values, batch.mask);
  const auto z = vae::reparameterize(q, gen);
  out.recon = vae::masked_gaussian_loglik(batch.values, batch.mask, vae_->decode(z)).sum();
  out.kl = gp_ ? gp_->kl(q.mean, q.variance, batch.covariates).to(out.recon.scalar_type())
               : vae::kl_standard_normal(q.mean, q.variance).sum();
  out.elbo = out.recon - out.kl;
  out.risk = risk_from_latents(batch, z);
  return out;
}

std::vector<double> SeqRiskModel::score(const DatasetTensors& data, const std::vector<std::size_t>& patients,
                                        std::size_t chunk) const {
  torch::NoGradGuard guard;
  std::vector<double> out;
  out.reserve(patients.size());
  for (std::size_t start = 0; start < patients.size(); start += chunk) {
    const std::vector<std::size_t> part(patients.begin() + static_cast<std::ptrdiff_t>(start),
                                        patients.begin() + static_cast<std::ptrdiff_t>(std::min(start + chunk, patients.size())));
    const auto batch = make_batch(data, part);
    const auto z = vae_ ? vae_->encode(batch.values, batch.mask).mean : at::cat({batch.values, batch.mask}, 1);
    const auto r = risk_from_latents(batch, z).to(torch::kFloat64).contiguous();
    out.insert(out.end(), r.data_ptr<double>(), r.data_ptr<double>() + r.numel());
  }
  return out;
}

torch::Tensor SeqRiskModel::last_latent_means(const DatasetTensors& data,
                                              const std::vector<std::size_t>& patients) const {
  if (!vae_) throw ConfigError("embedding export needs a variant with a VAE");
  torch::NoGradGuard guard;
  std::vector<std::int64_t> rows;
  for (auto p : patients) rows.push_back(data.record_offsets[p + 1] - 1);
  const auto idx = torch::tensor(rows, torch::kInt64);
  return vae_->encode(data.values.index_select(0, idx), data.mask.index_select(0, idx)).mean.to(torch::kFloat64);
}

}  // namespace seqrisk::model
