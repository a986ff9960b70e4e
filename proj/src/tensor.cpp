#include "t2i/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "t2i/errors.hpp"

namespace t2i {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return "config error";
    case ErrorKind::dimension: return "dimension error";
    case ErrorKind::data: return "data error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::format: return "format error";
    case ErrorKind::version: return "version error";
    case ErrorKind::name_mismatch: return "name-set mismatch";
    case ErrorKind::contract: return "contract error";
    case ErrorKind::io: return "io error";
  }
  return "error";
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw DimensionError("tensor dimension must be positive: " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

std::span<double> Tensor::mutable_grad() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() const {
  if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::release_grad() const { std::vector<double>().swap(impl_->grad); }

void Tensor::accumulate_grad(std::span<const double> g) const {
  auto dst = mutable_grad();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

Tensor Tensor::clone() const {
  return Tensor(impl_->shape, impl_->data, false);
}

namespace {
thread_local Graph* current_graph = nullptr;
}

Graph* Graph::current() { return current_graph; }

GraphScope::GraphScope(Graph& graph) : previous_(current_graph) { current_graph = &graph; }
GraphScope::~GraphScope() { current_graph = previous_; }

void Graph::record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
                   std::function<void()> backward) {
  nodes_.push_back(Node{std::string(op), std::move(inputs), std::move(output), std::move(backward)});
}

void Graph::backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  for (auto& node : nodes_) {
    node.output.mutable_grad();
    node.output.zero_grad();
  }
  Tensor seed = loss;
  seed.mutable_grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

void backward(const Tensor& loss) {
  Graph* g = Graph::current();
  if (g == nullptr) {
    // Leaf loss with no recorded graph: d(loss)/d(loss) only.
    if (!loss.defined() || loss.size() != 1) throw ContractError("backward requires a scalar loss");
    Tensor seed = loss;
    seed.mutable_grad()[0] += 1.0;
    return;
  }
  g->backward(loss);
}

namespace detail {

bool record_op(std::string_view op, const std::vector<Tensor>& inputs, Tensor& out,
               std::function<void()> backward) {
#ifndef NDEBUG
  bool inputs_finite = true;
  for (const auto& t : inputs) {
    for (double v : t.data()) inputs_finite = inputs_finite && std::isfinite(v);
  }
  if (inputs_finite) {
    for (double v : out.data()) {
      if (!std::isfinite(v)) throw NumericError(std::string(op) + " produced a non-finite value");
    }
  }
#endif
  Graph* g = Graph::current();
  if (g == nullptr) return false;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return false;
  out.set_requires_grad(true);
  g->record(op, inputs, out, std::move(backward));
  return true;
}

}  // namespace detail
}  // namespace t2i
