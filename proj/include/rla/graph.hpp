#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rla/param_store.hpp"
#include "rla/tensor.hpp"

namespace rla {

enum class OpKind {
  input,
  parameter,
  conv2d,
  batchnorm2d,
  relu,
  tanh,
  add,
  concat_channels,
  avgpool2d,
  maxpool2d,
  global_avgpool,
  linear,
  softmax_xent,
  weighted_sum,
};

const char* to_string(OpKind kind);

struct ConvAttrs {
  int stride = 1;
  int padding = 0;
};

struct BatchNormAttrs {
  double eps = 1e-5;
  double momentum = 0.1;
};

struct PoolAttrs {
  int kernel = 2;
  int stride = 2;
  int padding = 0;
};

using OpAttrs = std::variant<std::monostate, ConvAttrs, BatchNormAttrs, PoolAttrs>;

// Output shape of an op from its input shapes alone. Throws ShapeError
// naming the offending dimensions.
Shape infer_shape(OpKind kind, std::span<const Shape> inputs, const OpAttrs& attrs);

// Multiply-accumulates of conv2d / linear; zero for every other kind.
std::int64_t op_macs(OpKind kind, std::span<const Shape> inputs, const Shape& output);
// Per-element work of the remaining kinds (BN, activations, pools, adds).
std::int64_t op_elementwise(OpKind kind, std::span<const Shape> inputs, const Shape& output);

// Handle to a node of a Graph.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
  friend bool operator==(Var, Var) = default;
};

enum class GraphMode {
  train,  // BN uses batch statistics and updates running statistics
  eval,   // BN uses running statistics
  trace,  // shapes only, no arithmetic; used for accounting
};

// Define-by-run tape for reverse-mode differentiation. Nodes are appended
// in execution order, so creation order is a topological order.
// Parameters are read from (and their gradients accumulated into) the
// bound ParamStore.
template <typename T>
class Graph {
 public:
  struct Node {
    OpKind kind = OpKind::input;
    std::vector<Var> inputs;
    OpAttrs attrs;
    Shape shape;
    Tensor<T> value;  // empty for parameter nodes and in trace mode
    ParamId param;
    Tensor<T>* running_mean = nullptr;
    Tensor<T>* running_var = nullptr;
    std::vector<T> saved;
    std::vector<std::int64_t> indices;
    Tensor<T> constant;
    std::string label;
    bool requires_grad = false;
  };

  explicit Graph(GraphMode mode = GraphMode::train, ParamStore<T>* params = nullptr)
      : mode_(mode), params_(params) {}

  GraphMode mode() const { return mode_; }
  bool tracing() const { return mode_ == GraphMode::trace; }
  ParamStore<T>* params() const { return params_; }

  Var input(Tensor<T> value, bool requires_grad = false, std::string label = "input");
  // Trace-mode input: shape without data.
  Var input_shape(Shape shape, std::string label = "input");
  Var parameter(ParamId id);

  const Node& node(Var v) const;
  Node& node(Var v);
  std::size_t size() const { return nodes_.size(); }
  const Shape& shape(Var v) const { return node(v).shape; }
  OpKind kind(Var v) const { return node(v).kind; }

  // Value of any node; parameters resolve to their store buffer.
  const Tensor<T>& value(Var v) const;
  Tensor<T>& tensor(Var v);
  // Gradient after backward(); zeros if the node received none.
  Tensor<T> grad(Var v) const;
  // Gradient accumulator of v, allocated on demand. Parameters resolve to
  // their share group's buffer.
  std::span<T> grad_buffer(Var v);

  // Appends a node; computes its value unless tracing. Used by ops.
  Var record(Node node);

  // Reverse sweep from a scalar node. With release set, intermediate
  // values and gradients are freed as soon as they are consumed.
  void backward(Var loss, bool release = false);
  bool backward_done() const { return backward_done_; }

  // First node (in execution order) holding a non-finite value.
  std::optional<Var> first_nonfinite() const;

  // Label scopes, joined with '.'.
  void push_scope(const std::string& name) { scopes_.push_back(name); }
  void pop_scope() { scopes_.pop_back(); }
  std::string scoped(const std::string& leaf) const;

 private:
  GraphMode mode_;
  ParamStore<T>* params_;
  std::deque<Node> nodes_;  // stable references across appends
  std::vector<std::string> scopes_;
  bool backward_done_ = false;
};

template <typename T>
class ScopeGuard {
 public:
  ScopeGuard(Graph<T>& g, const std::string& name) : g_(g) { g_.push_scope(name); }
  ~ScopeGuard() { g_.pop_scope(); }
  ScopeGuard(const ScopeGuard&) = delete;
  ScopeGuard& operator=(const ScopeGuard&) = delete;

 private:
  Graph<T>& g_;
};

}  // namespace rla
