#pragma once

// Parameter-creation and application helpers shared by the aggregation
// mechanisms and the model builders.

#include <cstdint>
#include <random>
#include <string>

#include "rla/graph.hpp"
#include "rla/param_store.hpp"

namespace rla {

// Handles of one batch-norm layer: learnable scale/shift plus running state.
struct BnIds {
  ParamId gamma;
  ParamId beta;
  ParamId mean;
  ParamId var;
};

// He-normal initialization with fan_out = Cout * Kh * Kw.
template <typename T>
Tensor<T> he_normal(Shape weight_shape, std::mt19937_64& rng);

// Registers `<name>.weight` with He-normal values.
template <typename T>
ParamId add_conv(ParamStore<T>& store, const std::string& name, Shape weight_shape,
                 std::mt19937_64& rng);

// Registers `<name>.{weight,bias,running_mean,running_var}`: gamma 1,
// beta 0, running mean 0, running variance 1.
template <typename T>
BnIds add_batchnorm(ParamStore<T>& store, const std::string& name, std::int64_t channels);

// Applies a registered BN layer; the graph must be bound to the store.
template <typename T>
Var apply_batchnorm(Graph<T>& g, const BnIds& bn, Var x);

template <typename T>
Var bn_relu(Graph<T>& g, const BnIds& bn, Var x);

template <typename T>
Var apply_conv(Graph<T>& g, ParamId weight, Var x, int stride = 1, int padding = 0);

}  // namespace rla
