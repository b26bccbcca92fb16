#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <ATen/ATen.h>
#include <torch/types.h>

namespace seqrisk::nn {

/// Generator for parameter initialization and sampling. Every random draw in
/// the library goes through one of these, never the global torch generator.
at::Generator make_generator(std::uint64_t seed);

/// Named, ordered parameter tensors. Insertion order is the serialization order.
class ParameterStore {
 public:
  explicit ParameterStore(torch::Dtype dtype = torch::kFloat32) : dtype_(dtype) {}

  /// Registers a leaf tensor requiring grad. Throws ConfigError on a duplicate name.
  torch::Tensor add(const std::string& name, torch::Tensor init);
  /// Throws ConfigError for an unknown name.
  const torch::Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<std::pair<std::string, torch::Tensor>>& items() const { return items_; }
  std::vector<torch::Tensor> tensors() const;
  std::vector<torch::Tensor> tensors_with_prefix(const std::string& prefix) const;
  torch::Dtype dtype() const { return dtype_; }
  std::int64_t numel() const;

  /// Deep copy of the current values (detached, no grad).
  std::vector<torch::Tensor> snapshot() const;
  /// Overwrites values in place from a snapshot taken from this store.
  void restore(const std::vector<torch::Tensor>& values);

 private:
  torch::Dtype dtype_;
  std::vector<std::pair<std::string, torch::Tensor>> items_;
};

/// Uniform(-bound, bound) initialization.
torch::Tensor uniform(std::vector<std::int64_t> shape, double bound, at::Generator& gen, torch::Dtype dtype);

struct Linear {
  torch::Tensor weight;  // out x in
  torch::Tensor bias;    // out

  static Linear create(ParameterStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                       at::Generator& gen);
  torch::Tensor operator()(const torch::Tensor& x) const { return at::linear(x, weight, bias); }
};

struct Conv2d {
  torch::Tensor weight;  // out x in x k x k
  torch::Tensor bias;
  std::int64_t stride = 1;
  std::int64_t padding = 0;

  static Conv2d create(ParameterStore& store, const std::string& name, std::int64_t in, std::int64_t out,
                       std::int64_t kernel, std::int64_t stride, std::int64_t padding, at::Generator& gen);
  torch::Tensor operator()(const torch::Tensor& x) const;
};

struct ConvTranspose2d {
  torch::Tensor weight;  // in x out x k x k
  torch::Tensor bias;
  std::int64_t stride = 1;
  std::int64_t padding = 0;

  static ConvTranspose2d create(ParameterStore& store, const std::string& name, std::int64_t in,
                                std::int64_t out, std::int64_t kernel, std::int64_t stride, std::int64_t padding,
                                at::Generator& gen);
  torch::Tensor operator()(const torch::Tensor& x) const;
};

struct LayerNorm {
  torch::Tensor weight;
  torch::Tensor bias;
  double eps = 1e-5;

  static LayerNorm create(ParameterStore& store, const std::string& name, std::int64_t dim);
  torch::Tensor operator()(const torch::Tensor& x) const;
};

}  // namespace seqrisk::nn
