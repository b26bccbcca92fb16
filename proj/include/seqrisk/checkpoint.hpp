#pragma once

#include <filesystem>
#include <memory>

#include <nlohmann/json.hpp>

#include "seqrisk/model.hpp"

namespace seqrisk::ckpt {

/// File layout: the 8 bytes "SEQRISK1", a little-endian uint64 header length,
/// a JSON header, then the raw tensor bytes in header order. The header holds
/// "config" (model config, feature_dim, covariate_schema, dtype), "extra"
/// (caller metadata) and "tensors" (name, dtype, shape, offset, bytes).
inline constexpr char kMagic[8] = {'S', 'E', 'Q', 'R', 'I', 'S', 'K', '1'};

/// The config echo that identifies a model's architecture.
nlohmann::json model_identity(const model::SeqRiskModel& m, std::int64_t feature_dim,
                              const std::vector<CovariateSpec>& schema);

void write_checkpoint(const std::filesystem::path& path, const model::SeqRiskModel& m, std::int64_t feature_dim,
                      const std::vector<CovariateSpec>& schema, const nlohmann::json& extra = nlohmann::json::object());

struct CheckpointHeader {
  nlohmann::json config;
  nlohmann::json extra;
  nlohmann::json tensors;
};

/// Throws IoError for unreadable or malformed files.
CheckpointHeader read_header(const std::filesystem::path& path);

/// Overwrites the parameters of `m`. Throws ConfigError when the stored
/// config differs from the model's or a tensor is missing or misshapen.
void load_into(const std::filesystem::path& path, model::SeqRiskModel& m, std::int64_t feature_dim,
               const std::vector<CovariateSpec>& schema);

/// Rebuilds the model described by the header, then loads it.
std::unique_ptr<model::SeqRiskModel> load_model(const std::filesystem::path& path);

}  // namespace seqrisk::ckpt
