#pragma once

#include <cstdint>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqrisk/cox.hpp"
#include "seqrisk/data_model.hpp"
#include "seqrisk/error.hpp"
#include "seqrisk/model.hpp"

namespace seqrisk::train {

/// Denominator of the ELBO term: observed feature entries in the batch, or
/// samples in the batch.
enum class ElboScale { observed_entry, sample };

struct TrainConfig {
  double alpha = 0.5;
  std::vector<double> alpha_grid = {0.1, 0.3, 0.5, 0.7, 0.9};
  std::vector<int> latent_dim_grid = {16};
  double learning_rate = 1e-3;
  double clip_norm = 5.0;
  /// L2 penalty added to the Adam gradients of every parameter.
  double weight_decay = 0.0;
  int batch_patients = 64;
  int max_epochs = 40;
  /// Epochs without a better validation C-index before stopping.
  int patience = 10;
  /// Stop after this many optimizer steps; 0 = no limit.
  int max_steps = 0;
  /// The KL term's weight in the objective rises linearly from 0 to 1 over
  /// this many steps; 0 = weight 1 throughout. Logged ELBOs are unweighted.
  int kl_warmup_steps = 0;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  /// 0: one random split per seed; k > 1: k-fold rotation for each seed.
  int cv_folds = 0;
  bool double_precision = false;
  ElboScale elbo_scale = ElboScale::observed_entry;

  torch::Dtype dtype() const { return double_precision ? torch::kFloat64 : torch::kFloat32; }
  /// Throws ConfigError.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
/// Rejects unknown keys.
TrainConfig train_config_from_json(const nlohmann::json& j);

/// The loss of one batch. `total` carries the graph; the rest are values.
struct LossBreakdown {
  torch::Tensor total;     // alpha * survival - (1 - alpha) * elbo, double
  double survival = 0.0;   // -partial log-likelihood / events, training patients only
  double elbo = 0.0;       // ELBO / scale, every patient in the batch
  double recon = 0.0;      // per scale unit
  double kl = 0.0;         // per scale unit
  double alpha = 0.0;
  std::int64_t events = 0;
  std::int64_t samples = 0;
  std::int64_t observed = 0;  // observed feature entries
};

/// Negative mean Cox partial log-likelihood of `scores` as a differentiable
/// double scalar, using cox::partial_log_likelihood and its analytic gradient.
torch::Tensor cox_loss(const torch::Tensor& scores, const cox::SurvivalLabelSet& labels);

/// Throws NumericalError when alpha > 0 and no training patient in the batch
/// has an event. `kl_weight` < 1 down-weights the KL inside `total` only.
LossBreakdown composite_loss(const model::SeqRiskModel& model, const model::PatientBatch& batch, double alpha,
                             at::Generator& gen, ElboScale scale = ElboScale::observed_entry,
                             double kl_weight = 1.0);

/// True when the batch has an event among its training patients.
bool has_training_event(const model::PatientBatch& batch);

struct StepRecord {
  int epoch = 0;
  int step = 0;
  double total = 0.0, survival = 0.0, elbo = 0.0, recon = 0.0, kl = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  int steps = 0;
  double total = 0.0, survival = 0.0, elbo = 0.0, recon = 0.0, kl = 0.0;  // means over the epoch's steps
  double validation_c_index = 0.0;
  bool improved = false;
  double wall_seconds = 0.0;
};

nlohmann::json to_json(const EpochRecord& r);

struct TrainHooks {
  /// NDJSON epoch log, one object per line.
  std::ostream* log = nullptr;
  std::function<void(const StepRecord&)> on_step;
  /// Called with the restored last good parameters before a divergence error.
  std::function<void(const model::SeqRiskModel&)> on_divergence;
};

/// Record indices by role. The ELBO sees every patient in `all`; the survival
/// loss sees only `train`.
struct TrainingSets {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> all;
};

TrainingSets training_sets(const SurvivalDataset& dataset, const SplitMap& splits);

struct TrainResult {
  int best_epoch = -1;
  double best_validation_c_index = 0.0;
  int epochs_run = 0;
  int steps = 0;
  std::vector<EpochRecord> epochs;
};

/// Raised after restoring the last good parameters.
class TrainingDiverged : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Joint optimization with Adam, early stopping on validation C-index from
/// posterior means, best parameters restored at the end. With max_steps set
/// and an empty validation set, trains without early stopping.
TrainResult train(model::SeqRiskModel& model, const model::DatasetTensors& data, const TrainingSets& sets,
                  const TrainConfig& config, std::uint64_t seed, const TrainHooks& hooks = {});

/// Harrell C-index of the model's scores on `patients`.
double evaluate_c_index(const model::SeqRiskModel& model, const model::DatasetTensors& data,
                        const std::vector<std::size_t>& patients);

struct CvEntry {
  double alpha = 0.0;
  int latent_dim = 0;
  std::vector<double> validation_c_index;  // one per (split, seed) run
  double mean = 0.0;
};

struct CvReport {
  std::vector<CvEntry> entries;
  std::size_t winner = 0;

  nlohmann::json to_json() const;
  std::string to_tsv() const;
};

/// Grid search over alpha_grid x latent_dim_grid. Every grid point uses the
/// same splits: one random split per seed, or cv_folds folds per seed.
/// Result does not depend on `jobs`.
CvReport cross_validate(const SurvivalDataset& dataset, const model::ModelConfig& base, const TrainConfig& config,
                        SplitFractions fractions, std::uint64_t seed, int jobs = 1);

/// Runs fn(0..count-1) on up to `jobs` threads; rethrows the first error.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace seqrisk::train
