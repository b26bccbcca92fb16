#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace seqrisk {

enum class CovariateKind { continuous, categorical, binary };

std::string to_string(CovariateKind kind);
CovariateKind covariate_kind_from_string(const std::string& s);

/// One covariate column. Categorical columns carry a code table; the stored
/// value is the integer index into `codes`.
struct CovariateSpec {
  std::string name;
  CovariateKind kind = CovariateKind::continuous;
  std::vector<std::string> codes;

  bool operator==(const CovariateSpec&) const = default;
};

/// Unobserved measurement entries hold this value. Consumers must branch on
/// the mask, never on the value.
inline constexpr double kUnobservedSentinel = 0.0;

struct TrajectorySample {
  std::string patient_id;
  double time = 0.0;
  std::vector<double> measurements;
  std::vector<std::uint8_t> observed_mask;  // 1 = observed
  std::vector<double> covariates;           // categorical/binary entries are integer codes

  std::size_t observed_count() const;
  bool operator==(const TrajectorySample&) const = default;
};

struct PatientRecord {
  std::string patient_id;
  std::vector<TrajectorySample> samples;  // strictly increasing time
  double event_time = 0.0;                // measured from the last sample's time
  bool event = false;                     // false = censored

  bool operator==(const PatientRecord&) const = default;
};

enum class Split { train, validation, test };

std::string to_string(Split split);
Split split_from_string(const std::string& s);

using SplitMap = std::map<std::string, Split>;

struct SurvivalDataset {
  std::vector<PatientRecord> records;
  std::vector<std::string> feature_names;        // D entries
  std::vector<CovariateSpec> covariate_schema;   // Q entries
  SplitMap splits;
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t feature_count() const { return feature_names.size(); }
  std::size_t covariate_count() const { return covariate_schema.size(); }
  std::size_t sample_count() const;
  /// Index of a covariate column by name, or -1.
  int covariate_index(const std::string& name) const;

  bool operator==(const SurvivalDataset&) const = default;
};

/// Throws SchemaError naming the first violated invariant.
void validate(const SurvivalDataset& dataset);

/// Checks that `splits` assigns every patient of `dataset` exactly once.
void validate_splits(const SurvivalDataset& dataset, const SplitMap& splits);

inline constexpr int kArchiveVersion = 1;

/// Writes the dataset archive directory: manifest.json, records.ndjson and
/// splits.tsv. Output is byte-identical for identical inputs.
void write_dataset(const SurvivalDataset& dataset, const std::filesystem::path& dir);

/// Reads and fully re-validates an archive written by write_dataset.
SurvivalDataset read_dataset(const std::filesystem::path& dir);

struct SplitFractions {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

/// Random patient-level split. Counts follow largest-remainder rounding of the
/// fractions with every split non-empty; deterministic given the seed.
SplitMap assign_splits(const SurvivalDataset& dataset, SplitFractions fractions, std::uint64_t seed);

/// K-fold rotation: fold f tests part f, validates on part (f+1) mod k and
/// trains on the rest, so each patient is tested exactly once across folds.
std::vector<SplitMap> kfold_splits(const SurvivalDataset& dataset, int folds, std::uint64_t seed);

/// Record indices (into dataset.records) belonging to `which`, in record order.
std::vector<std::size_t> split_indices(const SurvivalDataset& dataset, const SplitMap& splits,
                                       Split which);

}  // namespace seqrisk
