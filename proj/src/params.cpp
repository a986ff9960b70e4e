#include "t2i/params.hpp"

#include <cmath>

#include "t2i/errors.hpp"

namespace t2i {

Tensor ParameterStore::add(std::string name, Tensor tensor, bool trainable) {
  if (find(name) != nullptr) throw ConfigError("duplicate parameter name: " + name);
  tensor.set_requires_grad(trainable);
  entries_.push_back({std::move(name), tensor, trainable});
  return tensor;
}

const NamedTensor* ParameterStore::find(std::string_view name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

std::vector<NamedTensor> ParameterStore::trainable() const {
  std::vector<NamedTensor> out;
  for (const auto& e : entries_) {
    if (e.trainable) out.push_back(e);
  }
  return out;
}

std::size_t ParameterStore::trainable_scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.trainable) n += e.tensor.size();
  }
  return n;
}

void ParameterStore::zero_grad() const {
  for (const auto& e : entries_) e.tensor.zero_grad();
}

void ParameterStore::release_grads() const {
  for (const auto& e : entries_) e.tensor.release_grad();
}

Tensor apply_batch_norm(const Tensor& x, const BatchNormParams& p, Mode mode) {
  BatchNormState state = p.state;  // shares the running-stat storage
  return batch_norm(x, p.gamma, p.beta, state, mode);
}

ParamBuilder::ParamBuilder(ParameterStore& store, std::mt19937_64& rng, std::string prefix)
    : store_(&store), rng_(&rng), prefix_(std::move(prefix)) {}

ParamBuilder ParamBuilder::scoped(std::string_view name) const {
  return ParamBuilder(*store_, *rng_, full(name) + "/");
}

Tensor ParamBuilder::glorot(std::string_view name, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(*rng_);
  return store_->add(full(name), Tensor(std::move(shape), std::move(v)));
}

Tensor ParamBuilder::normal(std::string_view name, Shape shape, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(*rng_);
  return store_->add(full(name), Tensor(std::move(shape), std::move(v)));
}

Tensor ParamBuilder::constant(std::string_view name, Shape shape, double value) {
  return store_->add(full(name), Tensor::full(std::move(shape), value));
}

BatchNormParams ParamBuilder::batch_norm(std::string_view name, std::size_t channels) {
  auto s = scoped(name);
  BatchNormParams p;
  p.gamma = s.constant("gamma", {channels}, 1.0);
  p.beta = s.constant("beta", {channels}, 0.0);
  p.state.running_mean = store_->add(s.full("running_mean"), Tensor::zeros({channels}), false);
  p.state.running_var = store_->add(s.full("running_var"), Tensor::full({channels}, 1.0), false);
  p.state.tracked = store_->add(s.full("tracked"), Tensor::zeros({1}), false);
  return p;
}

}  // namespace t2i
