#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seqrisk/config.hpp"
#include "seqrisk/cox.hpp"
#include "seqrisk/evaluation.hpp"
#include "seqrisk/training.hpp"

namespace seqrisk::exp {

/// Per-patient static features for the linear Cox baselines: the last
/// sample's raw measurements and mask.
struct StaticFeatures {
  Eigen::MatrixXd values;
  cox::MatrixXb observed;
};

StaticFeatures last_observation_features(const SurvivalDataset& dataset);

/// Linear Cox on last-observation features, fit on train + validation,
/// scored on test. Columns never observed in the fitting rows are dropped.
double cox_baseline_c_index(const SurvivalDataset& dataset, const SplitMap& splits, cox::ImputeMethod method,
                            int knn_k = 5);

struct VariantRun {
  double validation_c_index = 0.0;
  double test_c_index = 0.0;
  train::TrainResult training;
};

/// Builds, trains and scores one model on one split.
VariantRun run_variant(const SurvivalDataset& dataset, const SplitMap& splits, const model::ModelConfig& config,
                       const train::TrainConfig& training, std::uint64_t seed, const train::TrainHooks& hooks = {});

/// Row labels of the benchmark table, in order.
std::vector<std::string> benchmark_rows(const ReproduceConfig& r);
std::string masking_label(double level);

/// Seeds for run k of a sweep (split and model initialization).
std::uint64_t run_seed(const ExperimentConfig& c, std::size_t k);

/// Creates `dir`. Throws IoError when it exists and is non-empty unless
/// `force`, in which case its contents are removed first.
void prepare_output_dir(const std::filesystem::path& dir, bool force);
/// Writes run_manifest.json listing every regular file under `dir` with its size.
void write_manifest(const std::filesystem::path& dir, const std::string& command, const nlohmann::json& config);

std::vector<sim::Image> load_source_images(const ExperimentConfig& c);

SurvivalDataset cmd_simulate(const ExperimentConfig& c, const std::filesystem::path& out, bool force);

struct TrainSummary {
  double validation_c_index = 0.0;
  double test_c_index = 0.0;
  int best_epoch = 0;
};

/// Uses the archive's splits when present, otherwise a random split from the
/// config seed. Writes model.ckpt, train.ndjson, summary.json.
TrainSummary cmd_train(const ExperimentConfig& c, const std::filesystem::path& dataset_path,
                       const std::filesystem::path& out, bool force);

train::CvReport cmd_cross_validate(const ExperimentConfig& c, const std::filesystem::path& dataset_path,
                                   const std::filesystem::path& out, bool force, int jobs);

struct SplitEvaluation {
  std::string split;
  eval::CIndexResult result;
};

/// Scores every split recorded with the checkpoint (else the archive's).
std::vector<SplitEvaluation> cmd_evaluate(const std::filesystem::path& checkpoint,
                                          const std::filesystem::path& dataset_path);
std::string format_evaluation(const std::vector<SplitEvaluation>& rows);

/// Point table: patient_id, x, y, log_time, event, time_floored.
void cmd_embed(const std::filesystem::path& checkpoint, const std::filesystem::path& dataset_path,
               const std::filesystem::path& out, eval::Projection projection, bool force);

/// Simulates each masking level once, runs every variant and Cox row for each
/// training seed, and writes results.txt and results.tsv. The table does not
/// depend on `jobs`.
eval::ReportTable cmd_reproduce_mnist(const ExperimentConfig& c, const std::filesystem::path& out, bool force,
                                      int jobs);

}  // namespace seqrisk::exp
