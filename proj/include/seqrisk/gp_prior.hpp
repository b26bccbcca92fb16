#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seqrisk/data_model.hpp"
#include "seqrisk/nn.hpp"

namespace seqrisk::gp {

enum class KernelFamily {
  squared_exponential,  // continuous inputs, one lengthscale per input
  categorical_delta,    // 1 when every listed code matches
  product,              // SE factor per continuous input times delta per categorical input
};

std::string to_string(KernelFamily f);
KernelFamily kernel_family_from_string(const std::string& s);

struct KernelComponent {
  KernelFamily family = KernelFamily::squared_exponential;
  std::vector<std::string> covariates;
  double variance = 1.0;     // initial value
  double lengthscale = 1.0;  // initial value for every continuous input

  bool operator==(const KernelComponent&) const = default;
};

struct GPPriorConfig {
  std::vector<KernelComponent> components;
  int inducing_count = 64;
  /// First jitter tried on K_mm, relative to its mean diagonal; multiplied by
  /// 10 after each failed factorization up to max_jitter.
  double jitter = 1e-10;
  double max_jitter = 1e-2;
  /// Added to every prior variance: Sigma_l = sum_r K_r + noise_floor I.
  double noise_floor = 1e-3;
  /// Components with a delta factor on this categorical covariate are
  /// block-diagonal in its codes and enter the KL exactly, block by block.
  /// Empty disables blocking.
  std::string block_covariate = "patient_id";

  bool operator==(const GPPriorConfig&) const = default;
};

/// Time, patient id and their product.
GPPriorConfig mnist_preset();
/// Id, time, age and time products with gender, treatment, arrhythmia, smoking.
GPPriorConfig chd_preset();

nlohmann::json to_json(const GPPriorConfig& c);
/// Rejects unknown keys.
GPPriorConfig gp_config_from_json(const nlohmann::json& j);

/// Uniform subsample of `count` distinct rows (all rows when count >= rows).
/// Nested in `count` for a fixed seed.
torch::Tensor select_inducing(const torch::Tensor& covariates, int count, std::uint64_t seed);

/// Additive multi-output GP prior over the latent dimensions with an
/// inducing-point approximation of each Sigma_l.
class GPPrior {
 public:
  GPPrior(const GPPriorConfig& config, const std::vector<CovariateSpec>& schema, int latent_dim,
          nn::ParameterStore& store, const std::string& prefix = "gp");

  /// Component r for every latent dimension: L x Na x Nb, double.
  torch::Tensor component_kernel(std::size_t r, const torch::Tensor& xa, const torch::Tensor& xb) const;
  /// Sum over components: L x Na x Nb, double.
  torch::Tensor kernel(const torch::Tensor& xa, const torch::Tensor& xb) const;

  void set_inducing(torch::Tensor inducing);
  const torch::Tensor& inducing() const { return inducing_; }

  /// Sum over l of KL(N(mean_l, diag variance_l) || N(0, Sigma_l)). Sigma_l is
  /// approximated by a block-diagonal part (blocked components, noise floor and
  /// the diagonal correction) plus a rank-M term from the inducing inputs for
  /// the remaining components. Double precision scalar.
  torch::Tensor kl(const torch::Tensor& mean, const torch::Tensor& variance, const torch::Tensor& covariates) const;

  /// Relative jitter used by the most recent kl() call.
  double last_jitter() const { return last_jitter_; }

  const GPPriorConfig& config() const { return config_; }
  int latent_dim() const { return latent_dim_; }
  /// Per-dimension variances and lengthscales of component r (double).
  torch::Tensor variance(std::size_t r) const;
  torch::Tensor lengthscales(std::size_t r) const;  // L x (continuous inputs of r)
  /// Schema column indices of component r, continuous ones first.
  const std::vector<int>& continuous_columns(std::size_t r) const { return parts_[r].continuous; }
  const std::vector<int>& categorical_columns(std::size_t r) const { return parts_[r].categorical; }

 private:
  struct Part {
    std::vector<int> continuous;
    std::vector<int> categorical;
    torch::Tensor log_variance;     // L
    torch::Tensor log_lengthscale;  // L x continuous.size()
  };
  /// True when component r is diagonal on these rows: its categorical codes
  /// identify every row uniquely.
  bool diagonal_on(std::size_t r, const torch::Tensor& x) const;
  bool blocked(std::size_t r) const;
  /// Component r within each padded group: xg is G x b x q, result L x G x b x b.
  torch::Tensor block_kernel(std::size_t r, const torch::Tensor& xg) const;

  GPPriorConfig config_;
  int latent_dim_;
  std::vector<Part> parts_;
  torch::Tensor inducing_;
  int block_col_ = -1;
  mutable double last_jitter_ = 0.0;
};

}  // namespace seqrisk::gp
