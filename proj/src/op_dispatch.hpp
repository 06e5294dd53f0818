#pragma once

#include <span>

#include "rla/graph.hpp"

namespace rla::detail {

// Computes node.value from its inputs (the node is already appended).
template <typename T>
void forward_node(Graph<T>& g, Var v);

// Propagates the gradient held by v to its inputs.
template <typename T>
void backward_node(Graph<T>& g, Var v, std::span<const T> gout);

}  // namespace rla::detail
