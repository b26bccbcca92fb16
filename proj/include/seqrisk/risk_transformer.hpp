#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqrisk/nn.hpp"

namespace seqrisk::risk {

enum class Variant { vae_transformer, lvae_transformer, transformer_only, vae_mlp };

std::string to_string(Variant v);
/// Accepts the snake_case names and the display names ("VAE+Transformer", ...).
Variant variant_from_string(const std::string& s);
/// Display name used in reports.
std::string display_name(Variant v);
bool uses_vae(Variant v);
bool uses_transformer(Variant v);

struct RiskHeadConfig {
  int model_dim = 32;
  int n_layers = 2;
  int n_heads = 2;
  /// Feed-forward width as a multiple of model_dim.
  int ffn_multiplier = 2;
  int mlp_hidden = 50;
  int max_seq_len = 20;
  Variant variant = Variant::vae_transformer;
  /// Covariate names appended to every timestep. Empty list: none.
  std::vector<std::string> covariates;
  /// Start the last MLP layer at zero so initial scores are all 0.
  bool zero_init_output = false;

  int ffn_dim() const { return ffn_multiplier * model_dim; }
  /// Throws ConfigError.
  void validate() const;
};

RiskHeadConfig mnist_preset(Variant variant);
RiskHeadConfig chd_preset(Variant variant);

nlohmann::json to_json(const RiskHeadConfig& c);
/// Rejects unknown keys.
RiskHeadConfig risk_config_from_json(const nlohmann::json& j);

/// Per-patient sequences, left-aligned and zero-padded.
struct SequenceBatch {
  torch::Tensor inputs;        // B x T x F
  torch::Tensor padding_mask;  // B x T bool, true = real timestep
  std::vector<std::int64_t> lengths;
};

/// Builds a batch from per-sample feature rows. `offsets` has B+1 entries;
/// patient b owns rows [offsets[b], offsets[b+1]). Differentiable in `rows`.
SequenceBatch pack_sequences(const torch::Tensor& rows, const std::vector<std::int64_t>& offsets);

/// Attention weights recorded during a forward pass, for inspection.
struct AttentionTrace {
  std::vector<torch::Tensor> layers;  // each B x H x T x T
  torch::Tensor pooling;              // B x T
};

class RiskTransformer {
 public:
  RiskTransformer(const RiskHeadConfig& config, std::int64_t input_dim, nn::ParameterStore& store,
                  at::Generator& gen, const std::string& prefix = "risk");

  torch::Tensor embed(const torch::Tensor& inputs) const;
  /// Throws NumericalError naming the layer and head on NaN attention weights.
  torch::Tensor encoder_forward(const torch::Tensor& embedded, const torch::Tensor& padding_mask,
                                AttentionTrace* trace = nullptr) const;
  torch::Tensor attention_pool(const torch::Tensor& encoded, const torch::Tensor& padding_mask,
                               AttentionTrace* trace = nullptr) const;
  torch::Tensor mlp(const torch::Tensor& pooled) const;

  /// f(Z_p, X_p): one score per patient.
  torch::Tensor risk_score(const SequenceBatch& batch, AttentionTrace* trace = nullptr) const;

  const RiskHeadConfig& config() const { return config_; }
  std::int64_t input_dim() const { return input_dim_; }

 private:
  struct Layer {
    nn::Linear wq, wk, wv, wo;
    nn::LayerNorm norm1, norm2;
    nn::Linear ff1, ff2;
  };

  RiskHeadConfig config_;
  std::int64_t input_dim_;
  nn::Linear embedding_;
  std::vector<Layer> layers_;
  torch::Tensor pool_query_;
  nn::Linear mlp_hidden_, mlp_out_;
};

}  // namespace seqrisk::risk
