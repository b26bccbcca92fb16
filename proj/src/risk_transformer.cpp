#include "seqrisk/risk_transformer.hpp"

#include <cmath>
#include <limits>

#include "seqrisk/error.hpp"

namespace seqrisk::risk {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::vae_transformer: return "vae_transformer";
    case Variant::lvae_transformer: return "lvae_transformer";
    case Variant::transformer_only: return "transformer_only";
    case Variant::vae_mlp: return "vae_mlp";
  }
  return "?";
}

std::string display_name(Variant v) {
  switch (v) {
    case Variant::vae_transformer: return "VAE+Transformer";
    case Variant::lvae_transformer: return "LVAE+Transformer";
    case Variant::transformer_only: return "Transformer-only";
    case Variant::vae_mlp: return "VAE+MLP";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  for (auto v : {Variant::vae_transformer, Variant::lvae_transformer, Variant::transformer_only, Variant::vae_mlp}) {
    if (s == to_string(v) || s == display_name(v)) return v;
  }
  throw ConfigError("unknown variant '" + s +
                    "' (expected vae_transformer, lvae_transformer, transformer_only or vae_mlp)");
}

bool uses_vae(Variant v) { return v != Variant::transformer_only; }
bool uses_transformer(Variant v) { return v != Variant::vae_mlp; }

void RiskHeadConfig::validate() const {
  if (model_dim < 1 || n_heads < 1 || model_dim % n_heads != 0) {
    throw ConfigError("risk_head.model_dim must be a positive multiple of n_heads");
  }
  if (n_layers < 1) throw ConfigError("risk_head.n_layers must be >= 1");
  if (ffn_multiplier < 1) throw ConfigError("risk_head.ffn_multiplier must be >= 1");
  if (mlp_hidden < 1) throw ConfigError("risk_head.mlp_hidden must be >= 1");
  if (max_seq_len < 1) throw ConfigError("risk_head.max_seq_len must be >= 1");
}

RiskHeadConfig mnist_preset(Variant variant) {
  RiskHeadConfig c;
  c.variant = variant;
  return c;
}

RiskHeadConfig chd_preset(Variant variant) {
  RiskHeadConfig c;
  c.variant = variant;
  c.n_layers = 1;
  c.n_heads = 4;
  c.ffn_multiplier = 4;
  c.max_seq_len = 160;
  return c;
}

nlohmann::json to_json(const RiskHeadConfig& c) {
  return {{"model_dim", c.model_dim},         {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},             {"ffn_multiplier", c.ffn_multiplier},
          {"mlp_hidden", c.mlp_hidden},       {"max_seq_len", c.max_seq_len},
          {"variant", to_string(c.variant)},  {"covariates", c.covariates},
          {"zero_init_output", c.zero_init_output}};
}

RiskHeadConfig risk_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("risk_head: expected an object");
  RiskHeadConfig c;
  if (j.contains("preset")) {
    const auto name = j.at("preset").get<std::string>();
    if (name == "mnist") c = mnist_preset(c.variant);
    else if (name == "chd") c = chd_preset(c.variant);
    else throw ConfigError("risk_head.preset must be 'mnist' or 'chd'");
  }
  for (const auto& [key, v] : j.items()) {
    if (key == "preset") continue;
    if (key == "model_dim") c.model_dim = v.get<int>();
    else if (key == "n_layers") c.n_layers = v.get<int>();
    else if (key == "n_heads") c.n_heads = v.get<int>();
    else if (key == "ffn_multiplier") c.ffn_multiplier = v.get<int>();
    else if (key == "mlp_hidden") c.mlp_hidden = v.get<int>();
    else if (key == "max_seq_len") c.max_seq_len = v.get<int>();
    else if (key == "variant") c.variant = variant_from_string(v.get<std::string>());
    else if (key == "covariates") c.covariates = v.get<std::vector<std::string>>();
    else if (key == "zero_init_output") c.zero_init_output = v.get<bool>();
    else throw ConfigError("risk_head: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

SequenceBatch pack_sequences(const torch::Tensor& rows, const std::vector<std::int64_t>& offsets) {
  if (offsets.size() < 2) throw SchemaError("pack_sequences: need at least one patient");
  const auto b = static_cast<std::int64_t>(offsets.size()) - 1;
  SequenceBatch out;
  std::int64_t t_max = 0;
  for (std::int64_t i = 0; i < b; ++i) {
    const auto len = offsets[i + 1] - offsets[i];
    if (len < 1) throw SchemaError("pack_sequences: patient " + std::to_string(i) + " has no samples");
    out.lengths.push_back(len);
    t_max = std::max(t_max, len);
  }
  const auto pad_row = rows.size(0);
  std::vector<std::int64_t> index(static_cast<std::size_t>(b * t_max), pad_row);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(b * t_max), 0);
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t t = 0; t < out.lengths[i]; ++t) {
      index[static_cast<std::size_t>(i * t_max + t)] = offsets[i] + t;
      mask[static_cast<std::size_t>(i * t_max + t)] = 1;
    }
  }
  const auto padded = at::cat({rows, at::zeros({1, rows.size(1)}, rows.options())}, 0);
  out.inputs = padded.index_select(0, torch::tensor(index, torch::kInt64)).view({b, t_max, rows.size(1)});
  out.padding_mask = torch::tensor(mask, torch::kUInt8).to(torch::kBool).view({b, t_max});
  return out;
}

RiskTransformer::RiskTransformer(const RiskHeadConfig& config, std::int64_t input_dim, nn::ParameterStore& store,
                                 at::Generator& gen, const std::string& prefix)
    : config_(config), input_dim_(input_dim) {
  config_.validate();
  const auto d = config_.model_dim;
  std::int64_t mlp_in = d;
  if (uses_transformer(config_.variant)) {
    embedding_ = nn::Linear::create(store, prefix + ".embed", input_dim, d, gen);
    for (int k = 0; k < config_.n_layers; ++k) {
      const std::string name = prefix + ".layer" + std::to_string(k);
      Layer layer;
      layer.wq = nn::Linear::create(store, name + ".wq", d, d, gen);
      layer.wk = nn::Linear::create(store, name + ".wk", d, d, gen);
      layer.wv = nn::Linear::create(store, name + ".wv", d, d, gen);
      layer.wo = nn::Linear::create(store, name + ".wo", d, d, gen);
      layer.norm1 = nn::LayerNorm::create(store, name + ".norm1", d);
      layer.ff1 = nn::Linear::create(store, name + ".ff1", d, config_.ffn_dim(), gen);
      layer.ff2 = nn::Linear::create(store, name + ".ff2", config_.ffn_dim(), d, gen);
      layer.norm2 = nn::LayerNorm::create(store, name + ".norm2", d);
      layers_.push_back(std::move(layer));
    }
    pool_query_ = store.add(prefix + ".pool.query", nn::uniform({d}, 1.0 / std::sqrt(static_cast<double>(d)), gen,
                                                                store.dtype()));
  } else {
    mlp_in = input_dim;
  }
  mlp_hidden_ = nn::Linear::create(store, prefix + ".mlp.hidden", mlp_in, config_.mlp_hidden, gen);
  if (config_.zero_init_output) {
    mlp_out_.weight = store.add(prefix + ".mlp.out.weight", torch::zeros({1, config_.mlp_hidden}));
    mlp_out_.bias = store.add(prefix + ".mlp.out.bias", torch::zeros({1}));
  } else {
    mlp_out_ = nn::Linear::create(store, prefix + ".mlp.out", config_.mlp_hidden, 1, gen);
  }
}

torch::Tensor RiskTransformer::embed(const torch::Tensor& inputs) const { return embedding_(inputs); }

torch::Tensor RiskTransformer::encoder_forward(const torch::Tensor& embedded, const torch::Tensor& padding_mask,
                                               AttentionTrace* trace) const {
  const auto b = embedded.size(0);
  const auto t = embedded.size(1);
  const auto h = config_.n_heads;
  const auto dk = config_.model_dim / h;
  const auto key_mask = padding_mask.logical_not().view({b, 1, 1, t});
  auto x = embedded;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const auto& layer = layers_[k];
    auto split = [&](const torch::Tensor& y) { return y.view({b, t, h, dk}).transpose(1, 2); };
    const auto q = split(layer.wq(x));
    const auto kk = split(layer.wk(x));
    const auto v = split(layer.wv(x));
    auto logits = at::matmul(q, kk.transpose(2, 3)) / std::sqrt(static_cast<double>(dk));
    logits = logits.masked_fill(key_mask, -std::numeric_limits<double>::infinity());
    const auto weights = at::softmax(logits, -1);
    const auto nan = weights.isnan();
    if (nan.any().item<bool>()) {
      const auto head = nan.any(3).any(2).any(0).nonzero()[0][0].item<std::int64_t>();
      throw NumericalError("risk transformer: NaN attention weights in layer " + std::to_string(k) + ", head " +
                           std::to_string(head));
    }
    if (trace) trace->layers.push_back(weights.detach());
    const auto heads = at::matmul(weights, v).transpose(1, 2).reshape({b, t, config_.model_dim});
    x = layer.norm1(x + layer.wo(heads));
    x = layer.norm2(x + layer.ff2(at::relu(layer.ff1(x))));
  }
  return x;
}

torch::Tensor RiskTransformer::attention_pool(const torch::Tensor& encoded, const torch::Tensor& padding_mask,
                                              AttentionTrace* trace) const {
  auto logits = at::matmul(encoded, pool_query_) / std::sqrt(static_cast<double>(config_.model_dim));
  logits = logits.masked_fill(padding_mask.logical_not(), -std::numeric_limits<double>::infinity());
  const auto weights = at::softmax(logits, -1);
  if (weights.isnan().any().item<bool>()) throw NumericalError("risk transformer: NaN attention pooling weights");
  if (trace) trace->pooling = weights.detach();
  return at::matmul(weights.unsqueeze(1), encoded).squeeze(1);
}

torch::Tensor RiskTransformer::mlp(const torch::Tensor& pooled) const {
  return mlp_out_(at::relu(mlp_hidden_(pooled))).squeeze(-1);
}

torch::Tensor RiskTransformer::risk_score(const SequenceBatch& batch, AttentionTrace* trace) const {
  if (batch.inputs.dim() != 3 || batch.inputs.size(2) != input_dim_) {
    throw SchemaError("risk_score: expected inputs of shape B x T x " + std::to_string(input_dim_));
  }
  const auto t = batch.inputs.size(1);
  if (t > config_.max_seq_len) {
    throw SchemaError("risk_score: sequence length " + std::to_string(t) + " exceeds max_seq_len " +
                      std::to_string(config_.max_seq_len));
  }
  if (!uses_transformer(config_.variant)) {
    std::vector<std::int64_t> last;
    for (auto len : batch.lengths) last.push_back(len - 1);
    const auto idx = torch::tensor(last, torch::kInt64);
    const auto b = batch.inputs.size(0);
    const auto rows = batch.inputs.index({torch::arange(b, torch::kInt64), idx});
    return mlp(rows);
  }
  const auto encoded = encoder_forward(embed(batch.inputs), batch.padding_mask, trace);
  return mlp(attention_pool(encoded, batch.padding_mask, trace));
}

}  // namespace seqrisk::risk
