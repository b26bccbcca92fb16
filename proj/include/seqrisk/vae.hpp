#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqrisk/nn.hpp"

namespace seqrisk::vae {

enum class Architecture { conv, mlp };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

struct VaeConfig {
  int latent_dim = 16;
  Architecture architecture = Architecture::conv;
  /// Feed-forward widths after the convolution (conv) or after the input (mlp).
  std::vector<int> encoder_hidden = {300, 30};
  /// Feed-forward widths from the latent towards the output.
  std::vector<int> decoder_hidden = {30, 300};
  int conv_filters = 32;
  int conv_kernel = 3;
  int deconv_filters = 16;
  int deconv_kernel = 4;
  int image_rows = 36;
  int image_cols = 36;
  /// Multiplies raw measurements before they enter the encoder or likelihood.
  double input_scale = 1.0 / 255.0;
  double variance_floor = 1e-4;
  /// Starting value of the learned per-feature output variance (scaled units).
  /// Near the simulator's pixel noise, (30/255)^2, for the conv preset.
  double initial_variance = 0.02;

  /// Throws ConfigError.
  void validate(std::int64_t feature_dim) const;
};

/// Convolutional preset for 36x36 images.
VaeConfig conv_preset(int latent_dim);
/// Feed-forward preset with [200,50]/[50,200] layers.
VaeConfig mlp_preset(int latent_dim);

nlohmann::json to_json(const VaeConfig& c);
/// Rejects unknown keys. Missing keys take the defaults of the named architecture.
VaeConfig vae_config_from_json(const nlohmann::json& j);

/// Per-sample diagonal Gaussian q(z | y).
struct LatentPosterior {
  torch::Tensor mean;      // N x L
  torch::Tensor variance;  // N x L, strictly positive
};

/// Per-feature Gaussian p(y | z).
struct GaussianOutput {
  torch::Tensor mean;      // N x D
  torch::Tensor variance;  // D, shared across samples
};

struct ElboTerms {
  torch::Tensor total;  // recon - kl, summed over the batch
  torch::Tensor recon;
  torch::Tensor kl;
  torch::Tensor z;  // the reparameterized draw, N x L
  LatentPosterior posterior;
};

/// Closed-form KL(N(mean, diag variance) || N(0, I)) per row.
torch::Tensor kl_standard_normal(const torch::Tensor& mean, const torch::Tensor& variance);

/// Gaussian log-density per row, summed over entries with mask = 1 only.
torch::Tensor masked_gaussian_loglik(const torch::Tensor& y, const torch::Tensor& mask, const GaussianOutput& p);

/// z = mean + sqrt(variance) * eps with eps ~ N(0, I) from `gen`.
torch::Tensor reparameterize(const LatentPosterior& q, at::Generator& gen);

class Vae {
 public:
  Vae(const VaeConfig& config, std::int64_t feature_dim, nn::ParameterStore& store, at::Generator& gen,
      const std::string& prefix = "vae");

  /// `values` are scaled measurements with sentinel-filled gaps; `mask` is 1
  /// where observed. Both N x D in the store's dtype.
  LatentPosterior encode(const torch::Tensor& values, const torch::Tensor& mask) const;
  GaussianOutput decode(const torch::Tensor& z) const;

  /// One-sample ELBO against the standard normal prior.
  ElboTerms elbo(const torch::Tensor& values, const torch::Tensor& mask, at::Generator& gen) const;

  const VaeConfig& config() const { return config_; }
  std::int64_t feature_dim() const { return feature_dim_; }
  /// Parameter name prefixes of the generative side.
  std::string decoder_prefix() const { return prefix_ + ".dec"; }
  std::string encoder_prefix() const { return prefix_ + ".enc"; }

 private:
  VaeConfig config_;
  std::int64_t feature_dim_;
  std::string prefix_;
  nn::Conv2d conv_;
  std::vector<nn::Linear> enc_layers_;
  nn::Linear enc_mean_, enc_var_;
  std::vector<nn::Linear> dec_layers_;
  nn::Linear dec_to_grid_;
  nn::ConvTranspose2d deconv1_, deconv2_;
  nn::Linear dec_out_;
  torch::Tensor dec_raw_variance_;
};

}  // namespace seqrisk::vae
