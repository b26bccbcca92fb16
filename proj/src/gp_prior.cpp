#include "seqrisk/gp_prior.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "seqrisk/error.hpp"
#include "seqrisk/seeding.hpp"

namespace seqrisk::gp {

namespace {

const auto kDouble = torch::TensorOptions().dtype(torch::kFloat64);

std::string describe(const KernelComponent& c) {
  std::string s = to_string(c.family) + "(";
  for (std::size_t i = 0; i < c.covariates.size(); ++i) s += (i ? "," : "") + c.covariates[i];
  return s + ")";
}

}  // namespace

std::string to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::squared_exponential: return "squared_exponential";
    case KernelFamily::categorical_delta: return "categorical_delta";
    case KernelFamily::product: return "product";
  }
  return "?";
}

KernelFamily kernel_family_from_string(const std::string& s) {
  if (s == "squared_exponential" || s == "se") return KernelFamily::squared_exponential;
  if (s == "categorical_delta" || s == "delta") return KernelFamily::categorical_delta;
  if (s == "product") return KernelFamily::product;
  throw ConfigError("unknown kernel family '" + s + "'");
}

GPPriorConfig mnist_preset() {
  GPPriorConfig c;
  c.components = {{KernelFamily::squared_exponential, {"time"}, 1.0, 0.3},
                  {KernelFamily::categorical_delta, {"patient_id"}, 1.0, 1.0},
                  {KernelFamily::product, {"time", "patient_id"}, 1.0, 0.3}};
  return c;
}

GPPriorConfig chd_preset() {
  GPPriorConfig c;
  c.components = {{KernelFamily::categorical_delta, {"patient_id"}, 1.0, 1.0},
                  {KernelFamily::squared_exponential, {"time"}, 1.0, 1.0},
                  {KernelFamily::squared_exponential, {"age"}, 1.0, 1.0},
                  {KernelFamily::product, {"time", "gender"}, 1.0, 1.0},
                  {KernelFamily::product, {"time", "treatment"}, 1.0, 1.0},
                  {KernelFamily::product, {"time", "arrhythmia"}, 1.0, 1.0},
                  {KernelFamily::product, {"time", "smoking"}, 1.0, 1.0}};
  return c;
}

nlohmann::json to_json(const GPPriorConfig& c) {
  nlohmann::json comps = nlohmann::json::array();
  for (const auto& k : c.components) {
    comps.push_back({{"family", to_string(k.family)},
                     {"covariates", k.covariates},
                     {"variance", k.variance},
                     {"lengthscale", k.lengthscale}});
  }
  return {{"components", comps},
          {"inducing_count", c.inducing_count},
          {"jitter", c.jitter},
          {"max_jitter", c.max_jitter},
          {"noise_floor", c.noise_floor},
          {"block_covariate", c.block_covariate}};
}

GPPriorConfig gp_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("gp: expected an object");
  GPPriorConfig c = mnist_preset();
  for (const auto& [key, v] : j.items()) {
    if (key == "preset") {
      const auto name = v.get<std::string>();
      if (name == "mnist") c.components = mnist_preset().components;
      else if (name == "chd") c.components = chd_preset().components;
      else throw ConfigError("gp.preset must be 'mnist' or 'chd'");
    }
  }
  for (const auto& [key, v] : j.items()) {
    if (key == "preset") continue;
    if (key == "components") {
      c.components.clear();
      for (const auto& item : v) {
        KernelComponent k;
        for (const auto& [ck, cv] : item.items()) {
          if (ck == "family") k.family = kernel_family_from_string(cv.get<std::string>());
          else if (ck == "covariates") k.covariates = cv.get<std::vector<std::string>>();
          else if (ck == "variance") k.variance = cv.get<double>();
          else if (ck == "lengthscale") k.lengthscale = cv.get<double>();
          else throw ConfigError("gp.components: unknown key '" + ck + "'");
        }
        c.components.push_back(std::move(k));
      }
    } else if (key == "inducing_count") c.inducing_count = v.get<int>();
    else if (key == "jitter") c.jitter = v.get<double>();
    else if (key == "max_jitter") c.max_jitter = v.get<double>();
    else if (key == "noise_floor") c.noise_floor = v.get<double>();
    else if (key == "block_covariate") c.block_covariate = v.get<std::string>();
    else throw ConfigError("gp: unknown key '" + key + "'");
  }
  return c;
}

torch::Tensor select_inducing(const torch::Tensor& covariates, int count, std::uint64_t seed) {
  const auto n = covariates.size(0);
  std::vector<std::int64_t> perm(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  auto rng = make_rng(derive_seed(seed, "inducing"));
  for (std::int64_t i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::int64_t> pick(i, n - 1);
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
  }
  perm.resize(static_cast<std::size_t>(std::min<std::int64_t>(count, n)));
  const auto idx = torch::tensor(perm, torch::TensorOptions().dtype(torch::kInt64));
  return covariates.index_select(0, idx).to(torch::kFloat64).contiguous();
}

GPPrior::GPPrior(const GPPriorConfig& config, const std::vector<CovariateSpec>& schema, int latent_dim,
                 nn::ParameterStore& store, const std::string& prefix)
    : config_(config), latent_dim_(latent_dim) {
  if (config_.components.empty()) throw ConfigError("gp: at least one kernel component is required");
  if (config_.inducing_count < 1) throw ConfigError("gp.inducing_count must be >= 1");
  if (!(config_.jitter > 0.0) || config_.max_jitter < config_.jitter) {
    throw ConfigError("gp: need 0 < jitter <= max_jitter");
  }
  if (!(config_.noise_floor >= 0.0)) throw ConfigError("gp.noise_floor must be >= 0");
  if (!config_.block_covariate.empty()) {
    const auto it = std::find_if(schema.begin(), schema.end(),
                                 [&](const CovariateSpec& s) { return s.name == config_.block_covariate; });
    if (it == schema.end() || it->kind == CovariateKind::continuous) {
      throw ConfigError("gp.block_covariate: '" + config_.block_covariate + "' is not a categorical covariate");
    }
    block_col_ = static_cast<int>(it - schema.begin());
  }
  for (std::size_t r = 0; r < config_.components.size(); ++r) {
    const auto& comp = config_.components[r];
    if (comp.covariates.empty()) throw ConfigError("gp component " + describe(comp) + " lists no covariates");
    if (!(comp.variance > 0.0) || !(comp.lengthscale > 0.0)) {
      throw ConfigError("gp component " + describe(comp) + ": initial hyperparameters must be positive");
    }
    Part part;
    for (const auto& name : comp.covariates) {
      const auto it = std::find_if(schema.begin(), schema.end(), [&](const CovariateSpec& s) { return s.name == name; });
      if (it == schema.end()) throw ConfigError("gp component " + describe(comp) + ": unknown covariate '" + name + "'");
      const int col = static_cast<int>(it - schema.begin());
      (it->kind == CovariateKind::continuous ? part.continuous : part.categorical).push_back(col);
    }
    if (comp.family == KernelFamily::squared_exponential && !part.categorical.empty()) {
      throw ConfigError("gp component " + describe(comp) + ": squared_exponential needs continuous covariates");
    }
    if (comp.family == KernelFamily::categorical_delta && !part.continuous.empty()) {
      throw ConfigError("gp component " + describe(comp) + ": categorical_delta needs categorical or binary covariates");
    }
    const std::string name = prefix + "." + std::to_string(r);
    part.log_variance = store.add(name + ".log_variance", torch::full({latent_dim}, std::log(comp.variance)));
    part.log_lengthscale = store.add(
        name + ".log_lengthscale",
        torch::full({latent_dim, static_cast<std::int64_t>(part.continuous.size())}, std::log(comp.lengthscale)));
    parts_.push_back(std::move(part));
  }
}

torch::Tensor GPPrior::variance(std::size_t r) const { return parts_[r].log_variance.to(torch::kFloat64).exp(); }

torch::Tensor GPPrior::lengthscales(std::size_t r) const {
  return parts_[r].log_lengthscale.to(torch::kFloat64).exp();
}

torch::Tensor GPPrior::component_kernel(std::size_t r, const torch::Tensor& xa_in, const torch::Tensor& xb_in) const {
  const auto xa = xa_in.to(torch::kFloat64);
  const auto xb = xb_in.to(torch::kFloat64);
  const auto& part = parts_[r];
  auto k = variance(r).view({latent_dim_, 1, 1}).expand({latent_dim_, xa.size(0), xb.size(0)});
  if (!part.continuous.empty()) {
    const auto ls = lengthscales(r);
    torch::Tensor sq = at::zeros({latent_dim_, xa.size(0), xb.size(0)}, kDouble);
    for (std::size_t c = 0; c < part.continuous.size(); ++c) {
      const auto d = xa.select(1, part.continuous[c]).unsqueeze(1) - xb.select(1, part.continuous[c]).unsqueeze(0);
      const auto l = ls.select(1, static_cast<std::int64_t>(c)).view({latent_dim_, 1, 1});
      sq = sq + d.pow(2).unsqueeze(0) / l.pow(2);
    }
    k = k * (-0.5 * sq).exp();
  }
  if (!part.categorical.empty()) {
    auto same = at::ones({xa.size(0), xb.size(0)}, kDouble);
    for (int c : part.categorical) {
      same = same * (xa.select(1, c).unsqueeze(1) == xb.select(1, c).unsqueeze(0)).to(torch::kFloat64);
    }
    k = k * same.unsqueeze(0);
  }
  return k;
}

torch::Tensor GPPrior::kernel(const torch::Tensor& xa, const torch::Tensor& xb) const {
  torch::Tensor k = component_kernel(0, xa, xb);
  for (std::size_t r = 1; r < parts_.size(); ++r) k = k + component_kernel(r, xa, xb);
  return k;
}

void GPPrior::set_inducing(torch::Tensor inducing) {
  if (inducing.dim() != 2 || inducing.size(0) < 1) throw SchemaError("gp: inducing inputs must be a non-empty matrix");
  inducing_ = inducing.to(torch::kFloat64).contiguous();
}

bool GPPrior::diagonal_on(std::size_t r, const torch::Tensor& x) const {
  const auto& part = parts_[r];
  if (part.categorical.empty()) return false;
  const auto codes = x.index_select(1, torch::tensor(std::vector<std::int64_t>(part.categorical.begin(), part.categorical.end())))
                         .to(torch::kFloat64)
                         .contiguous();
  std::set<std::vector<double>> seen;
  const auto* p = codes.data_ptr<double>();
  const auto cols = codes.size(1);
  for (std::int64_t i = 0; i < codes.size(0); ++i) {
    if (!seen.insert(std::vector<double>(p + i * cols, p + (i + 1) * cols)).second) return false;
  }
  return true;
}

bool GPPrior::blocked(std::size_t r) const {
  const auto& cat = parts_[r].categorical;
  return block_col_ >= 0 && std::find(cat.begin(), cat.end(), block_col_) != cat.end();
}

torch::Tensor GPPrior::block_kernel(std::size_t r, const torch::Tensor& xg) const {
  const auto& part = parts_[r];
  const auto g = xg.size(0);
  const auto b = xg.size(1);
  auto k = variance(r).view({latent_dim_, 1, 1, 1}).expand({latent_dim_, g, b, b});
  if (!part.continuous.empty()) {
    const auto ls = lengthscales(r);
    torch::Tensor sq = at::zeros({latent_dim_, g, b, b}, kDouble);
    for (std::size_t c = 0; c < part.continuous.size(); ++c) {
      const auto col = xg.select(2, part.continuous[c]);
      const auto d = col.unsqueeze(2) - col.unsqueeze(1);
      const auto l = ls.select(1, static_cast<std::int64_t>(c)).view({latent_dim_, 1, 1, 1});
      sq = sq + d.pow(2).unsqueeze(0) / l.pow(2);
    }
    k = k * (-0.5 * sq).exp();
  }
  auto same = at::ones({g, b, b}, kDouble);
  for (int c : part.categorical) {
    const auto col = xg.select(2, c);
    same = same * (col.unsqueeze(2) == col.unsqueeze(1)).to(torch::kFloat64);
  }
  return k * same.unsqueeze(0);
}

torch::Tensor GPPrior::kl(const torch::Tensor& mean_in, const torch::Tensor& variance_in,
                          const torch::Tensor& covariates) const {
  const auto mean = mean_in.to(torch::kFloat64).t().contiguous();  // L x N
  const auto s = variance_in.to(torch::kFloat64).t().contiguous();  // L x N
  const auto x = covariates.to(torch::kFloat64).contiguous();
  const auto n = x.size(0);
  if (mean.size(0) != latent_dim_ || mean.size(1) != n || !s.sizes().equals(mean.sizes())) {
    throw SchemaError("gp.kl: posterior must be N x L with N matching the covariate rows");
  }

  // Components diagonal on this batch go straight into d; blocked ones into
  // the per-group blocks; the rest through the inducing inputs.
  std::vector<std::size_t> low_rank, block;
  torch::Tensor d = at::full({latent_dim_, n}, config_.noise_floor, kDouble);
  for (std::size_t r = 0; r < parts_.size(); ++r) {
    if (diagonal_on(r, x)) d = d + variance(r).unsqueeze(1);
    else if (blocked(r)) block.push_back(r);
    else low_rank.push_back(r);
  }

  torch::Tensor a;  // L x M x N, with Q = A^T A
  std::int64_t m = 0;
  if (!low_rank.empty()) {
    if (!inducing_.defined()) throw ConfigError("gp.kl: inducing inputs not set");
    const auto& z = inducing_;
    m = z.size(0);
    torch::Tensor kmm = component_kernel(low_rank[0], z, z);
    torch::Tensor knm = component_kernel(low_rank[0], x, z);
    torch::Tensor diag_k = variance(low_rank[0]).unsqueeze(1).expand({latent_dim_, n});
    for (std::size_t i = 1; i < low_rank.size(); ++i) {
      kmm = kmm + component_kernel(low_rank[i], z, z);
      knm = knm + component_kernel(low_rank[i], x, z);
      diag_k = diag_k + variance(low_rank[i]).unsqueeze(1);
    }
    const auto eye_m = at::eye(m, kDouble);
    const auto scale = kmm.diagonal(0, 1, 2).mean(1).detach().view({latent_dim_, 1, 1});
    torch::Tensor lm;
    double rel = config_.jitter;
    for (;;) {
      auto [factor, info] = at::linalg_cholesky_ex(kmm + rel * scale * eye_m);
      if (info.max().item<std::int64_t>() == 0) {
        lm = factor;
        break;
      }
      rel *= 10.0;
      if (rel > config_.max_jitter * (1.0 + 1e-9)) {
        const auto diag = kmm.diagonal(0, 1, 2);
        std::ostringstream msg;
        msg << "gp.kl: Cholesky of K_mm failed for latent dimension " << (info > 0).nonzero()[0][0].item<std::int64_t>()
            << " with relative jitter up to " << config_.max_jitter << " (M=" << m << ", diag range ["
            << diag.min().item<double>() << ", " << diag.max().item<double>() << "])";
        throw NumericalError(msg.str());
      }
    }
    last_jitter_ = rel;
    a = at::linalg_solve_triangular(lm, knm.transpose(1, 2), /*upper=*/false);
    d = d + (diag_k - a.pow(2).sum(1)).clamp_min(0.0);
  } else {
    last_jitter_ = 0.0;
  }

  // Padded groups: rows sharing a block code, in input order.
  std::vector<std::vector<std::int64_t>> groups;
  if (block.empty()) {
    for (std::int64_t i = 0; i < n; ++i) groups.push_back({i});
  } else {
    std::map<double, std::size_t> slot;
    const auto* px = x.data_ptr<double>();
    for (std::int64_t i = 0; i < n; ++i) {
      const auto [it, fresh] = slot.emplace(px[i * x.size(1) + block_col_], groups.size());
      if (fresh) groups.emplace_back();
      groups[it->second].push_back(i);
    }
  }
  const auto g = static_cast<std::int64_t>(groups.size());
  std::int64_t b = 0;
  for (const auto& grp : groups) b = std::max<std::int64_t>(b, static_cast<std::int64_t>(grp.size()));
  std::vector<std::int64_t> flat(static_cast<std::size_t>(g * b), 0);
  std::vector<double> valid_flat(static_cast<std::size_t>(g * b), 0.0);
  for (std::int64_t k = 0; k < g; ++k) {
    for (std::size_t i = 0; i < groups[k].size(); ++i) {
      flat[static_cast<std::size_t>(k * b) + i] = groups[k][i];
      valid_flat[static_cast<std::size_t>(k * b) + i] = 1.0;
    }
  }
  const auto idx = torch::tensor(flat, torch::kInt64);
  const auto valid = torch::tensor(valid_flat, kDouble).view({g, b});
  auto gather = [&](const torch::Tensor& t) {  // L x N -> L x G x b, zero padded
    return t.index_select(1, idx).view({latent_dim_, g, b}) * valid.unsqueeze(0);
  };

  const auto dg = gather(d);
  torch::Tensor bk = at::diag_embed(dg + (1.0 - valid).unsqueeze(0));  // padding gets 1 on the diagonal
  if (!block.empty()) {
    const auto xg = x.index_select(0, idx).view({g, b, x.size(1)});
    const auto pair = (valid.unsqueeze(2) * valid.unsqueeze(1)).unsqueeze(0);
    for (auto r : block) bk = bk + block_kernel(r, xg) * pair;
  }
  auto [lb, info] = at::linalg_cholesky_ex(bk);
  if (info.max().item<std::int64_t>() != 0) {
    throw NumericalError("gp.kl: the block-diagonal part is not positive definite; increase noise_floor (currently " +
                         std::to_string(config_.noise_floor) + ")");
  }

  const auto mg = gather(mean).unsqueeze(3);  // L x G x b x 1
  const auto sg = gather(s);
  const auto alpha = at::linalg_solve_triangular(lb, mg, /*upper=*/false);  // L x G x b x 1
  const auto eye_b = at::eye(b, kDouble).expand_as(lb);
  const auto lb_inv = at::linalg_solve_triangular(lb, eye_b, /*upper=*/false);
  torch::Tensor logdet = 2.0 * lb.diagonal(0, 2, 3).log().sum({1, 2});
  torch::Tensor quad = alpha.pow(2).sum({1, 2, 3});
  torch::Tensor trace = (sg * lb_inv.pow(2).sum(2)).sum({1, 2});

  if (!low_rank.empty()) {
    // Woodbury with U = A^T gathered into the groups.
    const auto ug = a.transpose(1, 2).index_select(1, idx).view({latent_dim_, g, b, m}) *
                    valid.view({1, g, b, 1});
    const auto v = at::linalg_solve_triangular(lb, ug, /*upper=*/false);  // L x G x b x M
    const auto vf = v.reshape({latent_dim_, g * b, m});
    const auto c = at::eye(m, kDouble) + at::matmul(vf.transpose(1, 2), vf);
    const auto lc = at::linalg_cholesky(c);
    const auto w = at::matmul(vf.transpose(1, 2), alpha.reshape({latent_dim_, g * b, 1}));  // L x M x 1
    const auto lw = at::linalg_solve_triangular(lc, w, /*upper=*/false);
    logdet = logdet + 2.0 * lc.diagonal(0, 1, 2).log().sum(1);
    quad = quad - lw.pow(2).sum({1, 2});
    // diag(B^-1 U C^-1 U^T B^-1) with B^-1 U = L_B^-T V.
    const auto binv_u = at::matmul(lb_inv.transpose(2, 3), v).reshape({latent_dim_, g * b, m});
    const auto h = at::linalg_solve_triangular(lc, binv_u.transpose(1, 2), /*upper=*/false);  // L x M x Gb
    trace = trace - (sg.reshape({latent_dim_, g * b}) * h.pow(2).sum(1)).sum(1);
  }
  const auto per_dim = 0.5 * (trace + quad - static_cast<double>(n) + logdet - s.log().sum(1));
  return per_dim.sum();
}

}  // namespace seqrisk::gp
