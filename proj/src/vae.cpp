#include "seqrisk/vae.hpp"

#include <cmath>
#include <numbers>

#include "seqrisk/error.hpp"

namespace seqrisk::vae {

std::string to_string(Architecture a) { return a == Architecture::conv ? "conv" : "mlp"; }

Architecture architecture_from_string(const std::string& s) {
  if (s == "conv") return Architecture::conv;
  if (s == "mlp") return Architecture::mlp;
  throw ConfigError("vae.architecture must be 'conv' or 'mlp', got '" + s + "'");
}

void VaeConfig::validate(std::int64_t feature_dim) const {
  if (latent_dim < 1) throw ConfigError("vae.latent_dim must be >= 1");
  if (encoder_hidden.empty() || decoder_hidden.empty()) throw ConfigError("vae hidden layer lists must be non-empty");
  for (int w : encoder_hidden) if (w < 1) throw ConfigError("vae.encoder_hidden widths must be >= 1");
  for (int w : decoder_hidden) if (w < 1) throw ConfigError("vae.decoder_hidden widths must be >= 1");
  if (!(variance_floor > 0.0)) throw ConfigError("vae.variance_floor must be positive");
  if (!(initial_variance > 0.0)) throw ConfigError("vae.initial_variance must be positive");
  if (!(input_scale > 0.0)) throw ConfigError("vae.input_scale must be positive");
  if (architecture == Architecture::conv) {
    if (static_cast<std::int64_t>(image_rows) * image_cols != feature_dim) {
      throw ConfigError("vae.image_shape " + std::to_string(image_rows) + "x" + std::to_string(image_cols) +
                        " does not match D=" + std::to_string(feature_dim));
    }
    if (image_rows % 4 != 0 || image_cols % 4 != 0) {
      throw ConfigError("vae.image_shape must be divisible by 4 for the two stride-2 transposed convolutions");
    }
    if (conv_kernel < 1 || conv_kernel > image_rows || deconv_kernel != 4) {
      throw ConfigError("vae: conv_kernel must fit the image and deconv_kernel must be 4");
    }
  }
}

VaeConfig conv_preset(int latent_dim) {
  VaeConfig c;
  c.latent_dim = latent_dim;
  return c;
}

VaeConfig mlp_preset(int latent_dim) {
  VaeConfig c;
  c.latent_dim = latent_dim;
  c.architecture = Architecture::mlp;
  c.encoder_hidden = {200, 50};
  c.decoder_hidden = {50, 200};
  c.input_scale = 1.0;
  c.initial_variance = 0.1;
  return c;
}

nlohmann::json to_json(const VaeConfig& c) {
  return {{"latent_dim", c.latent_dim},
          {"architecture", to_string(c.architecture)},
          {"encoder_hidden", c.encoder_hidden},
          {"decoder_hidden", c.decoder_hidden},
          {"conv_filters", c.conv_filters},
          {"conv_kernel", c.conv_kernel},
          {"deconv_filters", c.deconv_filters},
          {"deconv_kernel", c.deconv_kernel},
          {"image_shape", {c.image_rows, c.image_cols}},
          {"input_scale", c.input_scale},
          {"variance_floor", c.variance_floor},
          {"initial_variance", c.initial_variance}};
}

VaeConfig vae_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("vae: expected an object");
  VaeConfig c;
  if (j.contains("architecture")) {
    c = architecture_from_string(j.at("architecture").get<std::string>()) == Architecture::mlp ? mlp_preset(16)
                                                                                               : conv_preset(16);
  }
  for (const auto& [key, v] : j.items()) {
    if (key == "latent_dim") c.latent_dim = v.get<int>();
    else if (key == "architecture") continue;
    else if (key == "encoder_hidden") c.encoder_hidden = v.get<std::vector<int>>();
    else if (key == "decoder_hidden") c.decoder_hidden = v.get<std::vector<int>>();
    else if (key == "conv_filters") c.conv_filters = v.get<int>();
    else if (key == "conv_kernel") c.conv_kernel = v.get<int>();
    else if (key == "deconv_filters") c.deconv_filters = v.get<int>();
    else if (key == "deconv_kernel") c.deconv_kernel = v.get<int>();
    else if (key == "image_shape") {
      const auto s = v.get<std::vector<int>>();
      if (s.size() != 2) throw ConfigError("vae.image_shape must be [rows, cols]");
      c.image_rows = s[0];
      c.image_cols = s[1];
    } else if (key == "input_scale") c.input_scale = v.get<double>();
    else if (key == "variance_floor") c.variance_floor = v.get<double>();
    else if (key == "initial_variance") c.initial_variance = v.get<double>();
    else throw ConfigError("vae: unknown key '" + key + "'");
  }
  return c;
}

torch::Tensor kl_standard_normal(const torch::Tensor& mean, const torch::Tensor& variance) {
  return 0.5 * (mean.pow(2) + variance - 1.0 - variance.log()).sum(-1);
}

torch::Tensor masked_gaussian_loglik(const torch::Tensor& y, const torch::Tensor& mask, const GaussianOutput& p) {
  const auto log2pi = std::log(2.0 * std::numbers::pi);
  const auto per_entry = -0.5 * (log2pi + p.variance.log() + (y - p.mean).pow(2) / p.variance);
  // where() instead of a product so masked entries never touch the value.
  return at::where(mask > 0.5, per_entry, at::zeros_like(per_entry)).sum(-1);
}

torch::Tensor reparameterize(const LatentPosterior& q, at::Generator& gen) {
  const auto eps = at::randn(q.mean.sizes(), gen, q.mean.options());
  return q.mean + q.variance.sqrt() * eps;
}

Vae::Vae(const VaeConfig& config, std::int64_t feature_dim, nn::ParameterStore& store, at::Generator& gen,
         const std::string& prefix)
    : config_(config), feature_dim_(feature_dim), prefix_(prefix) {
  config_.validate(feature_dim);
  const std::string enc = prefix + ".enc";
  const std::string dec = prefix + ".dec";
  std::int64_t width = 0;
  if (config_.architecture == Architecture::conv) {
    conv_ = nn::Conv2d::create(store, enc + ".conv", 2, config_.conv_filters, config_.conv_kernel, 1, 0, gen);
    const std::int64_t r = (config_.image_rows - config_.conv_kernel + 1) / 2;
    const std::int64_t c = (config_.image_cols - config_.conv_kernel + 1) / 2;
    width = config_.conv_filters * r * c;
  } else {
    width = 2 * feature_dim;
  }
  for (std::size_t i = 0; i < config_.encoder_hidden.size(); ++i) {
    enc_layers_.push_back(nn::Linear::create(store, enc + ".fc" + std::to_string(i), width, config_.encoder_hidden[i], gen));
    width = config_.encoder_hidden[i];
  }
  enc_mean_ = nn::Linear::create(store, enc + ".mean", width, config_.latent_dim, gen);
  enc_var_ = nn::Linear::create(store, enc + ".var", width, config_.latent_dim, gen);

  width = config_.latent_dim;
  for (std::size_t i = 0; i < config_.decoder_hidden.size(); ++i) {
    dec_layers_.push_back(nn::Linear::create(store, dec + ".fc" + std::to_string(i), width, config_.decoder_hidden[i], gen));
    width = config_.decoder_hidden[i];
  }
  if (config_.architecture == Architecture::conv) {
    const std::int64_t grid = config_.deconv_filters * (config_.image_rows / 4) * (config_.image_cols / 4);
    dec_to_grid_ = nn::Linear::create(store, dec + ".grid", width, grid, gen);
    deconv1_ = nn::ConvTranspose2d::create(store, dec + ".deconv1", config_.deconv_filters, config_.deconv_filters,
                                           config_.deconv_kernel, 2, 1, gen);
    deconv2_ = nn::ConvTranspose2d::create(store, dec + ".deconv2", config_.deconv_filters, 1, config_.deconv_kernel,
                                           2, 1, gen);
  } else {
    dec_out_ = nn::Linear::create(store, dec + ".out", width, feature_dim, gen);
  }
  dec_raw_variance_ =
      store.add(dec + ".raw_variance", torch::full({feature_dim}, std::log(std::expm1(config_.initial_variance))));
}

LatentPosterior Vae::encode(const torch::Tensor& values, const torch::Tensor& mask) const {
  if (values.dim() != 2 || values.size(1) != feature_dim_ || !values.sizes().equals(mask.sizes())) {
    throw SchemaError("vae.encode: expected values and mask of shape N x " + std::to_string(feature_dim_));
  }
  torch::Tensor h;
  if (config_.architecture == Architecture::conv) {
    const auto n = values.size(0);
    // Channels-last is several times faster for two input channels on CPU.
    // Pooling before the ReLU is equivalent and touches a quarter of the data.
    auto x = at::stack({values, mask}, 1)
                 .view({n, 2, config_.image_rows, config_.image_cols})
                 .contiguous(at::MemoryFormat::ChannelsLast);
    h = at::relu(at::max_pool2d(conv_(x), {2, 2}, {2, 2})).flatten(1);
  } else {
    h = at::cat({values, mask}, 1);
  }
  for (const auto& layer : enc_layers_) h = at::relu(layer(h));
  return {enc_mean_(h), at::softplus(enc_var_(h)) + 1e-6};
}

GaussianOutput Vae::decode(const torch::Tensor& z) const {
  auto h = z;
  for (const auto& layer : dec_layers_) h = at::relu(layer(h));
  torch::Tensor mean;
  if (config_.architecture == Architecture::conv) {
    const auto n = z.size(0);
    h = at::relu(dec_to_grid_(h)).view({n, config_.deconv_filters, config_.image_rows / 4, config_.image_cols / 4});
    h = at::relu(deconv1_(h));
    mean = deconv2_(h).view({n, feature_dim_});
  } else {
    mean = dec_out_(h);
  }
  return {mean, at::softplus(dec_raw_variance_) + config_.variance_floor};
}

ElboTerms Vae::elbo(const torch::Tensor& values, const torch::Tensor& mask, at::Generator& gen) const {
  ElboTerms t;
  t.posterior = encode(values, mask);
  t.z = reparameterize(t.posterior, gen);
  t.recon = masked_gaussian_loglik(values, mask, decode(t.z)).sum();
  t.kl = kl_standard_normal(t.posterior.mean, t.posterior.variance).sum();
  t.total = t.recon - t.kl;
  return t;
}

}  // namespace seqrisk::vae
