#include "t2i/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "t2i/errors.hpp"
#include "t2i/log.hpp"
#include "t2i/ops.hpp"

namespace t2i {

Tensor sparse_categorical_crossentropy(const Tensor& logits, std::span<const std::int32_t> labels) {
  if (logits.ndim() != 4) {
    throw DimensionError("sparse_categorical_crossentropy: expected [N,H,W,K] logits, got " +
                         shape_str(logits.shape()));
  }
  const std::size_t n = logits.dim(0), h = logits.dim(1), w = logits.dim(2), k = logits.dim(3);
  const std::size_t pixels = n * h * w;
  if (labels.size() != pixels) {
    throw DimensionError("sparse_categorical_crossentropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(pixels) + " pixels");
  }
  for (std::size_t i = 0; i < pixels; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw DataError("label " + std::to_string(labels[i]) + " out of range [0," + std::to_string(k) +
                      ") at sample " + std::to_string(i / (h * w)) + ", pixel (y=" + std::to_string(i / w % h) +
                      ", x=" + std::to_string(i % w) + ")");
    }
  }
  auto z = logits.data();
  std::vector<double> lse(pixels);
  double total = 0.0;
  for (std::size_t i = 0; i < pixels; ++i) {
    const double* row = z.data() + i * k;
    double mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - mx);
    lse[i] = mx + std::log(s);
    total += lse[i] - row[labels[i]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(pixels));
  std::vector<std::int32_t> lab(labels.begin(), labels.end());
  detail::record_op("sparse_categorical_crossentropy", {logits}, out,
                    [logits, out, lab = std::move(lab), lse = std::move(lse), pixels, k]() {
                      if (!logits.requires_grad()) return;
                      const double g = out.grad()[0] / static_cast<double>(pixels);
                      auto gl = logits.mutable_grad();
                      auto z = logits.data();
                      for (std::size_t i = 0; i < pixels; ++i) {
                        for (std::size_t j = 0; j < k; ++j) gl[i * k + j] += g * std::exp(z[i * k + j] - lse[i]);
                        gl[i * k + static_cast<std::size_t>(lab[i])] -= g;
                      }
                    });
  return out;
}

Tensor mae_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("mae_loss: prediction " + shape_str(pred.shape()) + " and target " +
                         shape_str(target.shape()) + " differ");
  }
  auto p = pred.data(), t = target.data();
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) total += std::abs(p[i] - t[i]);
  const double count = static_cast<double>(p.size());
  Tensor out = Tensor::scalar(total / count);
  detail::record_op("mae_loss", {pred, target}, out, [pred, target, out, count]() {
    const double g = out.grad()[0] / count;
    auto p = pred.data(), t = target.data();
    auto sign = [](double d) { return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0); };
    if (pred.requires_grad()) {
      auto gp = pred.mutable_grad();
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g * sign(p[i] - t[i]);
    }
    if (target.requires_grad()) {
      auto gt = target.mutable_grad();
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] -= g * sign(p[i] - t[i]);
    }
  });
  return out;
}

Adam::Adam(std::vector<NamedTensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

void Adam::step() {
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) throw ContractError("adam: parameter '" + p.name + "' has no gradient");
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor t = params_[i].tensor;
    auto g = t.grad();
    auto w = t.mutable_data();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      w[j] -= config_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
    }
  }
}

OptimizerRecord Adam::record() const {
  OptimizerRecord r;
  r.step = t_;
  r.lr = config_.lr;
  r.beta1 = config_.beta1;
  r.beta2 = config_.beta2;
  r.eps = config_.eps;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    r.moments.push_back({"m/" + params_[i].name, Tensor(params_[i].tensor.shape(), m_[i]), false});
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    r.moments.push_back({"v/" + params_[i].name, Tensor(params_[i].tensor.shape(), v_[i]), false});
  }
  return r;
}

void Adam::restore(const OptimizerRecord& r) {
  const std::size_t n = params_.size();
  if (r.moments.size() != 2 * n) {
    throw NameMismatchError("optimizer state has " + std::to_string(r.moments.size()) + " moment tensors, expected " +
                            std::to_string(2 * n));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t half = 0; half < 2; ++half) {
      const auto& rec = r.moments[half * n + i];
      const std::string expect = (half == 0 ? "m/" : "v/") + params_[i].name;
      if (rec.name != expect || rec.tensor.shape() != params_[i].tensor.shape()) {
        throw NameMismatchError("optimizer state entry '" + rec.name + "' does not match '" + expect + "'");
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    auto m = r.moments[i].tensor.data();
    auto v = r.moments[n + i].tensor.data();
    m_[i].assign(m.begin(), m.end());
    v_[i].assign(v.begin(), v.end());
  }
  t_ = r.step;
  config_ = {r.lr, r.beta1, r.beta2, r.eps};
}

Tensor batch_inputs(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("empty batch");
  const Shape& s = data.samples.at(indices[0]).input.shape();
  std::vector<double> out;
  out.reserve(indices.size() * shape_numel(s));
  for (auto i : indices) {
    const auto& x = data.samples.at(i).input;
    if (x.shape() != s) throw DataError("sample '" + data.samples[i].id + "' has shape " + shape_str(x.shape()));
    out.insert(out.end(), x.data().begin(), x.data().end());
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  return Tensor(std::move(shape), std::move(out));
}

std::vector<std::int32_t> batch_labels(const Dataset& data, std::span<const std::size_t> indices) {
  std::vector<std::int32_t> out;
  for (auto i : indices) {
    const auto& l = data.samples.at(i).labels;
    out.insert(out.end(), l.begin(), l.end());
  }
  return out;
}

Tensor batch_targets(const Dataset& data, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ContractError("empty batch");
  const Shape& s = data.samples.at(indices[0]).target.shape();
  std::vector<double> out;
  for (auto i : indices) {
    const auto& t = data.samples.at(i).target;
    if (t.shape() != s) throw DataError("sample '" + data.samples[i].id + "' target has shape " + shape_str(t.shape()));
    out.insert(out.end(), t.data().begin(), t.data().end());
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), s.begin(), s.end());
  return Tensor(std::move(shape), std::move(out));
}

Tensor batch_loss(const Generator& g, const Dataset& data, std::span<const std::size_t> indices, Mode mode) {
  Tensor y = g.forward(batch_inputs(data, indices), mode);
  if (data.task == Task::segmentation) return sparse_categorical_crossentropy(y, batch_labels(data, indices));
  return mae_loss(y, batch_targets(data, indices));
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

TrainResult train(Generator& g, const Dataset& data, const TrainOptions& opt, Adam* optimizer) {
  data.validate();
  if (data.samples.empty()) throw DataError("training dataset is empty");
  const auto& cfg = g.config();
  if (cfg.task != data.task) {
    throw ConfigError("model task " + to_string(cfg.task) + " does not match dataset task " + to_string(data.task));
  }
  if (cfg.out_channels != data.target_channels()) {
    throw ConfigError("model out_channels " + std::to_string(cfg.out_channels) + " does not match the dataset's " +
                      std::to_string(data.target_channels()));
  }
  if (cfg.image_size != data.image_size) {
    throw ConfigError("model image_size " + std::to_string(cfg.image_size) + " does not match dataset size " +
                      std::to_string(data.image_size));
  }
  if (opt.batch_size == 0) throw ConfigError("batch_size must be > 0");

  Adam local(g.parameters().trainable(), opt.adam);
  Adam& adam = optimizer ? *optimizer : local;
  std::ofstream log_file;
  if (!opt.log_path.empty()) {
    log_file.open(opt.log_path, std::ios::app);
    if (!log_file) throw IoError("cannot open training log " + opt.log_path);
  }

  TrainResult result;
  std::mt19937_64 shuffle_rng(opt.seed);
  const std::size_t n = data.samples.size();
  std::size_t step = 0;
  bool stop = false;
  const std::size_t batches_per_epoch = (n + opt.batch_size - 1) / opt.batch_size;
  for (std::size_t epoch = 1; epoch <= opt.epochs && !stop; ++epoch) {
    const auto order = shuffled_indices(n, shuffle_rng());
    std::size_t batch_no = 0;
    for (; batch_no < batches_per_epoch && !stop; ++batch_no) {
      const std::size_t begin = batch_no * opt.batch_size;
      const std::span<const std::size_t> idx(order.data() + begin, std::min(opt.batch_size, n - begin));
      const auto t0 = std::chrono::steady_clock::now();
      g.parameters().release_grads();
      double loss_value;
      {
        Graph graph;
        GraphScope scope(graph);
        Tensor loss = batch_loss(g, data, idx, Mode::train);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
          std::ostringstream os;
          os << "non-finite loss " << loss_value << " at step " << step + 1 << ", epoch " << epoch << ", batch "
             << batch_no << " (samples:";
          for (auto i : idx) os << " " << data.samples[i].id;
          os << ")";
          throw NumericError(os.str());
        }
        graph.backward(loss);
      }
      adam.step();
      ++step;
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      const TrainRecord rec{step, loss_value, ms, adam.config().lr};
      result.log.push_back(rec);
      if (log_file) {
        log_file << rec.step << " " << std::setprecision(17) << rec.loss << " " << std::setprecision(6) << rec.ms
                 << "\n"
                 << std::flush;
      }
      if (opt.on_step && !opt.on_step(rec)) {
        stop = true;
        result.stopped_early = true;
      }
      if (opt.max_steps != 0 && step >= opt.max_steps) stop = true;
    }
    if (batch_no == batches_per_epoch) {
      result.epochs_completed = epoch;
      if (opt.on_epoch) opt.on_epoch(epoch);
    }
  }
  g.parameters().release_grads();
  result.optimizer = adam.record();
  if (!opt.checkpoint_path.empty()) save_checkpoint(g, opt.checkpoint_path, &result.optimizer);
  return result;
}

}  // namespace t2i
