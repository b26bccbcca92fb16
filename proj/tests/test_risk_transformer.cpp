#include <doctest.h>

#include <cmath>
#include <string>

#include "seqrisk/error.hpp"
#include "seqrisk/risk_transformer.hpp"

using namespace seqrisk;
using namespace seqrisk::risk;

namespace {

const auto kDouble = torch::TensorOptions().dtype(torch::kFloat64);

struct Head {
  nn::ParameterStore store{torch::kFloat64};
  std::unique_ptr<RiskTransformer> net;

  Head(const RiskHeadConfig& c, std::int64_t input_dim, std::uint64_t seed = 1) {
    auto gen = nn::make_generator(seed);
    net = std::make_unique<RiskTransformer>(c, input_dim, store, gen);
  }
};

RiskHeadConfig small_config(Variant v = Variant::vae_transformer) {
  RiskHeadConfig c;
  c.model_dim = 8;
  c.n_heads = 2;
  c.n_layers = 2;
  c.mlp_hidden = 6;
  c.variant = v;
  return c;
}

SequenceBatch random_batch(const std::vector<std::int64_t>& lengths, std::int64_t f, std::uint64_t seed) {
  std::vector<std::int64_t> offsets{0};
  for (auto len : lengths) offsets.push_back(offsets.back() + len);
  auto gen = nn::make_generator(seed);
  return pack_sequences(at::randn({offsets.back(), f}, gen, kDouble), offsets);
}

/// Appends `extra` masked timesteps full of large random values.
SequenceBatch with_padding(const SequenceBatch& b, std::int64_t extra, std::uint64_t seed) {
  auto gen = nn::make_generator(seed);
  const auto n = b.inputs.size(0);
  SequenceBatch out;
  out.inputs = at::cat({b.inputs, at::randn({n, extra, b.inputs.size(2)}, gen, kDouble) * 100.0}, 1);
  out.padding_mask = at::cat({b.padding_mask, torch::zeros({n, extra}, torch::kBool)}, 1);
  out.lengths = b.lengths;
  return out;
}

torch::Tensor linear(const nn::ParameterStore& s, const std::string& name, const torch::Tensor& x) {
  return at::linear(x, s.get(name + ".weight"), s.get(name + ".bias"));
}

torch::Tensor layer_norm(const nn::ParameterStore& s, const std::string& name, const torch::Tensor& x) {
  return at::layer_norm(x, {x.size(-1)}, s.get(name + ".weight"), s.get(name + ".bias"), 1e-5);
}

}  // namespace

TEST_CASE("pack_sequences: layout, padding mask and gradient flow") {
  auto rows = torch::arange(1.0, 13.0, kDouble).view({6, 2}).set_requires_grad(true);
  const auto b = pack_sequences(rows, {0, 1, 4, 6});
  CHECK(b.inputs.sizes() == std::vector<std::int64_t>{3, 3, 2});
  CHECK(b.lengths == std::vector<std::int64_t>{1, 3, 2});
  CHECK(b.inputs[0][0][0].item<double>() == 1.0);
  CHECK(b.inputs[0][1].abs().sum().item<double>() == 0.0);
  CHECK(b.inputs[1][2][1].item<double>() == 8.0);
  CHECK(b.inputs[2][1][0].item<double>() == 11.0);
  CHECK(b.padding_mask.sum().item<std::int64_t>() == 6);
  CHECK_FALSE(b.padding_mask[2][2].item<bool>());
  b.inputs.sum().backward();
  CHECK(torch::equal(rows.grad(), torch::ones({6, 2}, kDouble)));
  CHECK_THROWS_AS(pack_sequences(rows.detach(), {0, 0, 6}), SchemaError);
}

TEST_CASE("embed: zero weights give zero, batching and permutation equivariance") {
  Head h(small_config(), 5);
  const auto b = random_batch({3, 1, 4}, 5, 2);
  const auto e = h.net->embed(b.inputs);
  for (std::int64_t i = 0; i < 3; ++i) {
    for (std::int64_t t = 0; t < b.inputs.size(1); ++t) {
      const auto one = h.net->embed(b.inputs[i][t].unsqueeze(0));
      CHECK((one[0] - e[i][t]).abs().max().item<double>() <= 1e-6);
    }
  }
  const auto perm = torch::tensor({2, 0, 1}, torch::kInt64);
  CHECK((h.net->embed(b.inputs.index_select(0, perm)) - e.index_select(0, perm)).abs().max().item<double>() == 0.0);
  {
    torch::NoGradGuard g;
    h.store.get("risk.embed.weight").zero_();
    h.store.get("risk.embed.bias").zero_();
  }
  CHECK(h.net->embed(b.inputs).abs().max().item<double>() == 0.0);
}

TEST_CASE("T = 1: attention weight is exactly 1 and the output is the position-wise path") {
  Head h(small_config(), 4);
  auto gen = nn::make_generator(4);
  const auto x = at::randn({3, 1, 8}, gen, kDouble);
  const auto mask = torch::ones({3, 1}, torch::kBool);
  AttentionTrace trace;
  const auto out = h.net->encoder_forward(x, mask, &trace);
  REQUIRE(trace.layers.size() == 2);
  for (const auto& w : trace.layers) CHECK(torch::equal(w, torch::ones_like(w)));

  auto y = x;
  for (int k = 0; k < 2; ++k) {
    const std::string p = "risk.layer" + std::to_string(k);
    y = layer_norm(h.store, p + ".norm1", y + linear(h.store, p + ".wo", linear(h.store, p + ".wv", y)));
    y = layer_norm(h.store, p + ".norm2", y + linear(h.store, p + ".ff2", at::relu(linear(h.store, p + ".ff1", y))));
  }
  CHECK((out - y).abs().max().item<double>() <= 1e-12);

  const auto pooled = h.net->attention_pool(out, mask, &trace);
  CHECK(torch::equal(trace.pooling, torch::ones({3, 1}, kDouble)));
  CHECK((pooled - out.squeeze(1)).abs().max().item<double>() == 0.0);
}

TEST_CASE("identical timesteps give uniform attention and pool to that timestep") {
  Head h(small_config(), 4);
  auto gen = nn::make_generator(8);
  const auto row = at::randn({2, 1, 8}, gen, kDouble);
  const auto x = row.expand({2, 5, 8}).contiguous();
  const auto mask = torch::ones({2, 5}, torch::kBool);
  AttentionTrace trace;
  const auto enc = h.net->encoder_forward(x, mask, &trace);
  for (const auto& w : trace.layers) CHECK((w - 0.2).abs().max().item<double>() <= 1e-15);
  const auto pooled = h.net->attention_pool(enc, mask);
  CHECK((pooled - enc.select(1, 0)).abs().max().item<double>() <= 1e-12);
}

TEST_CASE("padding invariance of encoder, pooling and scores") {
  Head h(small_config(), 6);
  for (std::int64_t extra = 1; extra <= 10; ++extra) {
    const auto b = random_batch({1, 4, 7, 2}, 6, 10 + extra);
    const auto padded = with_padding(b, extra, 99 + extra);
    const auto s = h.net->risk_score(b);
    const auto sp = h.net->risk_score(padded);
    CHECK((s - sp).abs().max().item<double>() <= 1e-6);

    const auto enc = h.net->encoder_forward(h.net->embed(b.inputs), b.padding_mask);
    const auto encp = h.net->encoder_forward(h.net->embed(padded.inputs), padded.padding_mask);
    const auto real = b.padding_mask.unsqueeze(2).to(torch::kFloat64);
    CHECK(((enc - encp.slice(1, 0, b.inputs.size(1))) * real).abs().max().item<double>() <= 1e-6);
  }
}

TEST_CASE("pooling weights sum to one with no mass on padding") {
  Head h(small_config(), 3);
  const auto b = with_padding(random_batch({2, 5, 3}, 3, 7), 4, 8);
  AttentionTrace trace;
  h.net->risk_score(b, &trace);
  CHECK((trace.pooling.sum(1) - 1.0).abs().max().item<double>() <= 1e-12);
  CHECK(trace.pooling.masked_select(b.padding_mask.logical_not()).abs().max().item<double>() == 0.0);
  for (const auto& w : trace.layers) {
    const auto masked_keys = b.padding_mask.logical_not().view({3, 1, 1, -1}).expand_as(w);
    CHECK(w.masked_select(masked_keys).abs().max().item<double>() == 0.0);
  }
}

TEST_CASE("score gradient matches central differences on a tiny head") {
  RiskHeadConfig c = small_config();
  c.model_dim = 4;
  c.mlp_hidden = 5;
  Head h(c, 3, 21);
  auto b = random_batch({3, 2}, 3, 5);
  auto inputs = b.inputs.clone().set_requires_grad(true);
  SequenceBatch bg{inputs, b.padding_mask, b.lengths};
  h.net->risk_score(bg).sum().backward();
  const auto analytic = inputs.grad().masked_select(b.padding_mask.unsqueeze(2).expand_as(inputs));

  auto fd = torch::zeros_like(inputs);
  const double eps = 1e-6;
  torch::NoGradGuard g;
  for (std::int64_t i = 0; i < inputs.size(0); ++i) {
    for (std::int64_t t = 0; t < b.lengths[i]; ++t) {
      for (std::int64_t f = 0; f < 3; ++f) {
        auto up = b.inputs.clone();
        auto dn = b.inputs.clone();
        up[i][t][f] += eps;
        dn[i][t][f] -= eps;
        const double d = (h.net->risk_score({up, b.padding_mask, b.lengths}).sum() -
                          h.net->risk_score({dn, b.padding_mask, b.lengths}).sum())
                             .item<double>();
        fd[i][t][f] = d / (2 * eps);
      }
    }
  }
  const auto numeric = fd.masked_select(b.padding_mask.unsqueeze(2).expand_as(fd));
  const double rel = (analytic - numeric).norm().item<double>() / numeric.norm().item<double>();
  CHECK(rel < 1e-4);
}

TEST_CASE("shape contract over sequence lengths and the length limit") {
  RiskHeadConfig c = small_config();
  c.max_seq_len = 20;
  Head h(c, 2);
  for (std::int64_t t = 1; t <= 20; ++t) {
    const auto s = h.net->risk_score(random_batch({t, 1, t}, 2, static_cast<std::uint64_t>(t)));
    CHECK(s.sizes() == std::vector<std::int64_t>{3});
    CHECK(torch::isfinite(s).all().item<bool>());
  }
  CHECK_THROWS_AS(h.net->risk_score(random_batch({21}, 2, 1)), SchemaError);
  CHECK_THROWS_AS(h.net->risk_score(random_batch({3}, 5, 1)), SchemaError);
}

TEST_CASE("zero-initialized output layer scores every patient 0") {
  RiskHeadConfig c = small_config();
  c.zero_init_output = true;
  Head h(c, 3);
  CHECK(h.net->risk_score(random_batch({2, 5, 1}, 3, 3)).abs().max().item<double>() == 0.0);
}

TEST_CASE("VAE+MLP variant reads only the last timestep") {
  Head h(small_config(Variant::vae_mlp), 4);
  auto b = random_batch({3, 1, 2}, 4, 6);
  const auto s = h.net->risk_score(b);
  auto changed = b;
  changed.inputs = b.inputs.clone();
  changed.inputs[0][0] += 5.0;
  changed.inputs[2][0] -= 3.0;
  CHECK(torch::equal(h.net->risk_score(changed), s));
  CHECK((h.net->mlp(b.inputs[1][0].unsqueeze(0))[0] - s[1]).abs().item<double>() == 0.0);
  CHECK_FALSE(h.store.contains("risk.embed.weight"));
}

TEST_CASE("NaN attention weights name the layer and head") {
  Head h(small_config(), 3);
  {
    torch::NoGradGuard g;
    h.store.get("risk.layer1.wq.weight")[5][0] = std::nan("");
  }
  const auto b = random_batch({2, 3}, 3, 1);
  try {
    h.net->risk_score(b);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("layer 1") != std::string::npos);
    CHECK(msg.find("head 1") != std::string::npos);
  }
}

TEST_CASE("risk head config: presets, JSON and validation") {
  const auto m = mnist_preset(Variant::vae_transformer);
  CHECK(m.n_layers == 2);
  CHECK(m.n_heads == 2);
  CHECK(m.mlp_hidden == 50);
  CHECK(m.ffn_dim() == 2 * m.model_dim);
  CHECK(m.max_seq_len >= 20);
  const auto chd = chd_preset(Variant::lvae_transformer);
  CHECK(chd.n_layers == 1);
  CHECK(chd.n_heads == 4);
  CHECK(chd.ffn_dim() == 4 * chd.model_dim);

  CHECK(risk::to_json(risk_config_from_json(risk::to_json(chd))) == risk::to_json(chd));
  CHECK_THROWS_AS(risk_config_from_json({{"heads", 2}}), ConfigError);
  const auto from_preset = risk_config_from_json({{"preset", "chd"}, {"variant", "vae_mlp"}});
  CHECK(from_preset.n_heads == 4);
  CHECK(from_preset.variant == Variant::vae_mlp);
  CHECK_THROWS_AS(risk_config_from_json({{"preset", "cifar"}}), ConfigError);
  CHECK_THROWS_AS(risk_config_from_json({{"model_dim", 7}, {"n_heads", 2}}), ConfigError);
  CHECK(variant_from_string("VAE+Transformer") == Variant::vae_transformer);
  CHECK(variant_from_string("transformer_only") == Variant::transformer_only);
  CHECK_THROWS_AS(variant_from_string("rsf"), ConfigError);
}
