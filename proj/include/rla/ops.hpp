#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rla/graph.hpp"

namespace rla {

// Zero-padded 2-D cross-correlation. weight is (Cout, Cin, Kh, Kw); the
// optional bias is (Cout, 1, 1, 1).
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var weight, ConvAttrs attrs = {},
           std::optional<Var> bias = std::nullopt, std::string label = "");

// Per-channel normalization. In train mode the batch statistics are used
// and, when running statistics are supplied, they are updated in place
// (the only state mutation of any op).
template <typename T>
Var batchnorm2d(Graph<T>& g, Var x, Var gamma, Var beta, Tensor<T>* running_mean,
                Tensor<T>* running_var, BatchNormAttrs attrs = {}, std::string label = "");

template <typename T>
Var relu(Graph<T>& g, Var x);

template <typename T>
Var tanh(Graph<T>& g, Var x);

template <typename T>
Var add(Graph<T>& g, Var a, Var b);

// Concatenation along the channel axis; N, H and W must agree.
template <typename T>
Var concat_channels(Graph<T>& g, std::span<const Var> parts);

template <typename T>
Var avgpool2d(Graph<T>& g, Var x, PoolAttrs attrs = {});

template <typename T>
Var maxpool2d(Graph<T>& g, Var x, PoolAttrs attrs = {});

template <typename T>
Var global_avgpool(Graph<T>& g, Var x);

// x is flattened to (N, C*H*W); weight is (out, in, 1, 1); bias (out,1,1,1).
template <typename T>
Var linear(Graph<T>& g, Var x, Var weight, std::optional<Var> bias = std::nullopt,
           std::string label = "");

// Mean cross-entropy of logits (N, K, 1, 1) against integer labels.
template <typename T>
Var softmax_xent(Graph<T>& g, Var logits, std::span<const std::int64_t> labels);

// sum(x * weights), or sum(x) when weights is empty; scalar (1,1,1,1).
template <typename T>
Var weighted_sum(Graph<T>& g, Var x, Tensor<T> weights = {});

}  // namespace rla
