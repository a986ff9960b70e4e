#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "t2i/ops.hpp"
#include "t2i/tensor.hpp"

namespace t2i {

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;
};

// Ordered, named collection of a model's tensors. Non-trainable entries hold
// normalization statistics; both kinds are persisted in checkpoints.
class ParameterStore {
 public:
  Tensor add(std::string name, Tensor tensor, bool trainable = true);

  const std::vector<NamedTensor>& entries() const { return entries_; }
  const NamedTensor* find(std::string_view name) const;
  std::vector<NamedTensor> trainable() const;
  std::size_t trainable_scalar_count() const;
  void zero_grad() const;
  void release_grads() const;

 private:
  std::vector<NamedTensor> entries_;
};

struct BatchNormParams {
  Tensor gamma;
  Tensor beta;
  BatchNormState state;
};

Tensor apply_batch_norm(const Tensor& x, const BatchNormParams& p, Mode mode);

// Creates initialized parameters under a name prefix.
//   weights: Glorot uniform, limit sqrt(6 / (fan_in + fan_out))
//   position embeddings: normal(0, 0.02)
//   biases / beta: 0, gamma: 1
class ParamBuilder {
 public:
  ParamBuilder(ParameterStore& store, std::mt19937_64& rng, std::string prefix = "");

  ParamBuilder scoped(std::string_view name) const;

  Tensor glorot(std::string_view name, Shape shape, std::size_t fan_in, std::size_t fan_out);
  Tensor normal(std::string_view name, Shape shape, double stddev);
  Tensor constant(std::string_view name, Shape shape, double value);
  BatchNormParams batch_norm(std::string_view name, std::size_t channels);

 private:
  std::string full(std::string_view name) const { return prefix_ + std::string(name); }

  ParameterStore* store_;
  std::mt19937_64* rng_;
  std::string prefix_;
};

}  // namespace t2i
