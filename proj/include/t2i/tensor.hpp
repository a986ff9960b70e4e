#pragma once

// Dense float64 tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto shared storage. Ops executed while a Graph
// is current (see GraphScope) and touching at least one tensor that requires
// grad are appended to that graph; Graph::backward replays them in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace t2i {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class Mode { train, eval };

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  // Direct write access; used by initializers, the optimizer and loaders.
  std::span<double> mutable_data() { return impl_->data; }
  double at(std::size_t i) const { return impl_->data.at(i); }
  double item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  // Grad slot is the one mutable part of an otherwise immutable value.
  std::span<double> mutable_grad() const;  // allocates zeros on first use
  void zero_grad() const;
  void release_grad() const;  // has_grad() is false afterwards
  void accumulate_grad(std::span<const double> g) const;

  // Same values, fresh storage, no grad tracking.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

class Graph {
 public:
  struct Node {
    std::string op;
    std::vector<Tensor> inputs;
    Tensor output;
    std::function<void()> backward;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
              std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded backward rule once,
  // newest first. Intermediate grads are reset; leaf grads accumulate.
  void backward(const Tensor& loss);

  const std::vector<Node>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Graph receiving ops on this thread, or nullptr when not recording.
  static Graph* current();

 private:
  friend class GraphScope;
  std::vector<Node> nodes_;
};

// Makes `graph` the recording target for the current thread.
class GraphScope {
 public:
  explicit GraphScope(Graph& graph);
  ~GraphScope();
  GraphScope(const GraphScope&) = delete;
  GraphScope& operator=(const GraphScope&) = delete;

 private:
  Graph* previous_;
};

// Backward through the current thread's graph.
void backward(const Tensor& loss);

namespace detail {
// Records `out` as produced by `op` when a graph is active and any input
// requires grad. Marks `out` as requiring grad in that case.
bool record_op(std::string_view op, const std::vector<Tensor>& inputs,
               Tensor& out, std::function<void()> backward);
}  // namespace detail

}  // namespace t2i
