#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "m2cnn/kernels.hpp"
#include "m2cnn/tensor.hpp"

namespace m2cnn {

using kernels::Padding;

class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient of the last backward() output with respect to this node.
  std::span<const double> grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape of operations recorded in execution order. Nodes are appended only,
/// so every input id precedes its consumer and a reverse sweep is a valid
/// topological order for backpropagation.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Trainable leaf.
  Var parameter(Tensor value);

  Var record(std::string_view op, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);

  /// Zeroes previous gradients, seeds d(output)/d(output) = 1 and sweeps the
  /// tape backwards once. Throws ContractError unless output is scalar.
  void backward(Var output);

  std::size_t size() const { return nodes_.size(); }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  Tensor& mutable_value(std::size_t id) { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).value.requires_grad(); }
  std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
  std::span<const std::size_t> inputs(std::size_t id) const { return nodes_.at(id).inputs; }

  /// Upstream gradient of a node during backward().
  std::span<const double> grad_of(std::size_t id) const;
  /// Gradient accumulator for an input; nullptr-equivalent empty span if the
  /// input does not require a gradient.
  std::span<double> input_grad(std::size_t id);

 private:
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
};

// Differentiable operations. Every op validates shapes and throws
// DimensionError on mismatch.
Var conv2d(Var input, Var kernel, Var bias, std::size_t stride, Padding padding);
Var maxpool2d(Var input, std::size_t window, std::size_t stride);
Var avgpool_global(Var input);
Var dense(Var input, Var weight, Var bias);
Var relu(Var x);
Var softmax(Var logits);
Var add(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double factor);
Var reshape(Var x, Shape shape);
Var sum(Var x);
Var sum_squares(Var x);

/// Mean negative log-likelihood of the labelled class under a stable
/// log-softmax of logits [N,K]. Throws LabelError for labels outside [0,K).
Var cross_entropy(Var logits, std::span<const int> labels);
/// Mean of (score - label)^2 over scores [N].
Var mean_squared_error(Var scores, std::span<const int> labels);

// Finite-difference gradient checking.

using GraphBuilder = std::function<Var(Graph&, std::span<const Var>)>;

struct GradientComparison {
  std::vector<Tensor> analytic;
  std::vector<Tensor> numeric;
};

/// |ga - gn| / max(|ga|, |gn|, 1e-8), maximised over every element.
double max_relative_error(const GradientComparison& cmp);

/// Builds the graph on the given inputs (all registered as parameters),
/// backpropagates, and evaluates central differences for every input element.
GradientComparison compare_gradients(const GraphBuilder& build, std::span<const Tensor> inputs, double h = 1e-5);

double grad_check(const GraphBuilder& build, std::span<const Tensor> inputs, double h = 1e-5);

}  // namespace m2cnn
