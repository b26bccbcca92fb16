#include "seqrisk/nn.hpp"

#include <cmath>

#include <ATen/CPUGeneratorImpl.h>

#include "seqrisk/error.hpp"

namespace seqrisk::nn {

at::Generator make_generator(std::uint64_t seed) { return at::make_generator<at::CPUGeneratorImpl>(seed); }

torch::Tensor ParameterStore::add(const std::string& name, torch::Tensor init) {
  if (contains(name)) throw ConfigError("parameter '" + name + "' registered twice");
  auto t = init.to(dtype_).detach().clone().set_requires_grad(true);
  items_.emplace_back(name, t);
  return t;
}

const torch::Tensor& ParameterStore::get(const std::string& name) const {
  for (const auto& [n, t] : items_) {
    if (n == name) return t;
  }
  throw ConfigError("unknown parameter '" + name + "'");
}

bool ParameterStore::contains(const std::string& name) const {
  for (const auto& item : items_) {
    if (item.first == name) return true;
  }
  return false;
}

std::vector<torch::Tensor> ParameterStore::tensors() const {
  std::vector<torch::Tensor> out;
  out.reserve(items_.size());
  for (const auto& item : items_) out.push_back(item.second);
  return out;
}

std::vector<torch::Tensor> ParameterStore::tensors_with_prefix(const std::string& prefix) const {
  std::vector<torch::Tensor> out;
  for (const auto& [n, t] : items_) {
    if (n.rfind(prefix, 0) == 0) out.push_back(t);
  }
  return out;
}

std::int64_t ParameterStore::numel() const {
  std::int64_t n = 0;
  for (const auto& item : items_) n += item.second.numel();
  return n;
}

std::vector<torch::Tensor> ParameterStore::snapshot() const {
  std::vector<torch::Tensor> out;
  out.reserve(items_.size());
  for (const auto& item : items_) out.push_back(item.second.detach().clone());
  return out;
}

void ParameterStore::restore(const std::vector<torch::Tensor>& values) {
  if (values.size() != items_.size()) throw ConfigError("parameter snapshot does not match the store");
  torch::NoGradGuard guard;
  for (std::size_t i = 0; i < values.size(); ++i) items_[i].second.copy_(values[i]);
}

torch::Tensor uniform(std::vector<std::int64_t> shape, double bound, at::Generator& gen, torch::Dtype dtype) {
  auto u = at::rand(shape, gen, torch::TensorOptions().dtype(torch::kFloat64));
  return ((u * 2.0 - 1.0) * bound).to(dtype);
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                      at::Generator& gen) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  Linear l;
  l.weight = store.add(name + ".weight", uniform({out, in}, bound, gen, store.dtype()));
  l.bias = store.add(name + ".bias", uniform({out}, bound, gen, store.dtype()));
  return l;
}

Conv2d Conv2d::create(ParameterStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                      std::int64_t kernel, std::int64_t stride, std::int64_t padding, at::Generator& gen) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel * kernel));
  Conv2d c;
  c.weight = store.add(name + ".weight", uniform({out, in, kernel, kernel}, bound, gen, store.dtype()));
  c.bias = store.add(name + ".bias", uniform({out}, bound, gen, store.dtype()));
  c.stride = stride;
  c.padding = padding;
  return c;
}

torch::Tensor Conv2d::operator()(const torch::Tensor& x) const {
  return at::conv2d(x, weight, bias, {stride, stride}, {padding, padding});
}

ConvTranspose2d ConvTranspose2d::create(ParameterStore& store, const std::string& name, std::int64_t in,
                                        std::int64_t out, std::int64_t kernel, std::int64_t stride,
                                        std::int64_t padding, at::Generator& gen) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(out * kernel * kernel));
  ConvTranspose2d c;
  c.weight = store.add(name + ".weight", uniform({in, out, kernel, kernel}, bound, gen, store.dtype()));
  c.bias = store.add(name + ".bias", uniform({out}, bound, gen, store.dtype()));
  c.stride = stride;
  c.padding = padding;
  return c;
}

torch::Tensor ConvTranspose2d::operator()(const torch::Tensor& x) const {
  return at::conv_transpose2d(x, weight, bias, {stride, stride}, {padding, padding});
}

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::int64_t dim) {
  LayerNorm l;
  l.weight = store.add(name + ".weight", torch::ones({dim}));
  l.bias = store.add(name + ".bias", torch::zeros({dim}));
  return l;
}

torch::Tensor LayerNorm::operator()(const torch::Tensor& x) const {
  return at::layer_norm(x, {weight.size(0)}, weight, bias, eps);
}

}  // namespace seqrisk::nn
