#pragma once

// Losses, the Adam optimizer and the training loop.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "t2i/checkpoint.hpp"
#include "t2i/data.hpp"
#include "t2i/generator.hpp"
#include "t2i/params.hpp"
#include "t2i/tensor.hpp"

namespace t2i {

// Mean over pixels of -log softmax(logits)[label], via log-sum-exp.
// logits [N,H,W,K]; labels N*H*W values in [0,K). An out-of-range label
// raises DataError with its (n, y, x) coordinates.
Tensor sparse_categorical_crossentropy(const Tensor& logits, std::span<const std::int32_t> labels);

// mean |pred - target|; the subgradient at ties is 0.
Tensor mae_loss(const Tensor& pred, const Tensor& target);

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(std::vector<NamedTensor> params, AdamConfig config = {});

  // m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2;
  // p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
  // Throws ContractError naming the first parameter without a gradient.
  void step();

  std::uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<NamedTensor>& params() const { return params_; }
  std::span<const double> first_moment(std::size_t i) const { return m_[i]; }
  std::span<const double> second_moment(std::size_t i) const { return v_[i]; }

  OptimizerRecord record() const;
  // Throws NameMismatchError when the record does not fit these params.
  void restore(const OptimizerRecord& record);

 private:
  std::vector<NamedTensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

struct TrainRecord {
  std::size_t step = 0;  // 1-based optimizer step
  double loss = 0;
  double ms = 0;
  double lr = 0;
};

struct TrainOptions {
  std::size_t epochs = 1;
  std::size_t batch_size = 4;
  std::size_t max_steps = 0;  // 0: no limit
  std::uint64_t seed = 0;     // shuffling
  AdamConfig adam;
  // Return false to stop after this step.
  std::function<bool(const TrainRecord&)> on_step;
  // Called after each completed epoch (1-based).
  std::function<void(std::size_t epoch)> on_epoch;
  std::string log_path;         // "step loss ms" lines, appended per step
  std::string checkpoint_path;  // written at the end when set
};

struct TrainResult {
  std::vector<TrainRecord> log;
  std::size_t epochs_completed = 0;
  bool stopped_early = false;
  OptimizerRecord optimizer;
};

// Stacks samples[indices] into [B,S,S,3] inputs.
Tensor batch_inputs(const Dataset& data, std::span<const std::size_t> indices);
// Segmentation labels or regression targets for the same samples.
std::vector<std::int32_t> batch_labels(const Dataset& data, std::span<const std::size_t> indices);
Tensor batch_targets(const Dataset& data, std::span<const std::size_t> indices);

// Loss of the generator on a batch, taped when a graph is current.
Tensor batch_loss(const Generator& g, const Dataset& data, std::span<const std::size_t> indices, Mode mode);

// Seeded Fisher-Yates permutation of 0..n-1.
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

// Epoch loop over seeded shuffles; the last partial batch is kept. A
// non-finite loss throws NumericError naming the step, epoch, batch and
// sample ids. Deterministic for a fixed (model seed, options.seed, data).
TrainResult train(Generator& g, const Dataset& data, const TrainOptions& options, Adam* optimizer = nullptr);

}  // namespace t2i
