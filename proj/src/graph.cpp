#include "rla/graph.hpp"

#include "op_dispatch.hpp"
#include "rla/error.hpp"

namespace rla {

const char* to_string(OpKind kind) {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::parameter: return "parameter";
    case OpKind::conv2d: return "conv2d";
    case OpKind::batchnorm2d: return "batchnorm2d";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::add: return "add";
    case OpKind::concat_channels: return "concat_channels";
    case OpKind::avgpool2d: return "avgpool2d";
    case OpKind::maxpool2d: return "maxpool2d";
    case OpKind::global_avgpool: return "global_avgpool";
    case OpKind::linear: return "linear";
    case OpKind::softmax_xent: return "softmax_xent";
    case OpKind::weighted_sum: return "weighted_sum";
  }
  return "?";
}

template <typename T>
Var Graph<T>::input(Tensor<T> value, bool requires_grad, std::string label) {
  if (tracing()) throw StateError("use input_shape() on a trace graph");
  Node n;
  n.kind = OpKind::input;
  n.shape = value.shape();
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.label = scoped(label);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::input_shape(Shape shape, std::string label) {
  if (!tracing()) return input(Tensor<T>(shape), false, std::move(label));
  Node n;
  n.kind = OpKind::input;
  n.shape = shape;
  n.label = scoped(label);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Graph<T>::parameter(ParamId id) {
  if (params_ == nullptr) throw StateError("graph has no parameter store bound");
  Node n;
  n.kind = OpKind::parameter;
  n.param = id;
  n.shape = params_->tensor(id).shape();
  n.requires_grad = is_learnable(params_->role(id));
  n.label = params_->name(id);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw StateError("invalid graph variable " + std::to_string(v.id));
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
typename Graph<T>::Node& Graph<T>::node(Var v) {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw StateError("invalid graph variable " + std::to_string(v.id));
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
const Tensor<T>& Graph<T>::value(Var v) const {
  const Node& n = node(v);
  if (n.kind == OpKind::parameter) return params_->tensor(n.param);
  if (tracing()) throw StateError("trace graphs carry shapes only");
  if (n.value.empty()) throw StateError("value of node '" + n.label + "' was released");
  return n.value;
}

template <typename T>
Tensor<T>& Graph<T>::tensor(Var v) {
  return const_cast<Tensor<T>&>(static_cast<const Graph&>(*this).value(v));
}

template <typename T>
Tensor<T> Graph<T>::grad(Var v) const {
  const Node& n = node(v);
  const Tensor<T>& t = n.kind == OpKind::parameter ? params_->tensor(n.param) : n.value;
  Tensor<T> out(n.shape);
  if (t.has_grad()) {
    const auto gs = t.grad();
    std::copy(gs.begin(), gs.end(), out.data().begin());
  }
  return out;
}

template <typename T>
std::span<T> Graph<T>::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.kind == OpKind::parameter) return params_->tensor(n.param).grad();
  return n.value.grad();
}

template <typename T>
std::string Graph<T>::scoped(const std::string& leaf) const {
  std::string out;
  for (const auto& s : scopes_) {
    out += s;
    out += '.';
  }
  out += leaf;
  return out;
}

template <typename T>
Var Graph<T>::record(Node n) {
  for (const Var in : n.inputs) {
    if (node(in).requires_grad) n.requires_grad = true;
  }
  if (!tracing()) n.value = Tensor<T>(n.shape);
  nodes_.push_back(std::move(n));
  const Var v{static_cast<std::int32_t>(nodes_.size() - 1)};
  if (!tracing()) detail::forward_node(*this, v);
  return v;
}

template <typename T>
void Graph<T>::backward(Var loss, bool release) {
  if (tracing()) throw StateError("backward on a trace graph");
  if (!loss.valid() || static_cast<std::size_t>(loss.id) >= nodes_.size()) {
    throw StateError("backward before forward: loss node does not exist");
  }
  if (backward_done_) throw StateError("backward already ran on this graph");
  Node& ln = node(loss);
  if (ln.shape.numel() != 1) {
    throw ShapeError("backward needs a scalar loss, got " + ln.shape.str());
  }
  if (ln.kind != OpKind::parameter && ln.value.empty()) {
    throw StateError("backward before forward: loss has no value");
  }
  grad_buffer(loss)[0] = T(1);
  for (std::int32_t i = loss.id; i >= 0; --i) {
    const Var v{i};
    Node& n = node(v);
    if (n.kind == OpKind::input || n.kind == OpKind::parameter) continue;
    if (n.requires_grad && n.value.has_grad()) {
      // The span stays valid: backward_node only touches input nodes.
      detail::backward_node(*this, v, std::span<const T>(n.value.grad()));
    }
    if (release) n.value = Tensor<T>();
  }
  backward_done_ = true;
}

template <typename T>
std::optional<Var> Graph<T>::first_nonfinite() const {
  if (tracing()) return std::nullopt;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    const Tensor<T>& t = n.kind == OpKind::parameter ? params_->tensor(n.param) : n.value;
    if (!t.empty() && !t.all_finite()) return Var{static_cast<std::int32_t>(i)};
  }
  return std::nullopt;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace rla
