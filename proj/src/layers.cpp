#include "rla/layers.hpp"

#include <cmath>

#include "rla/error.hpp"
#include "rla/ops.hpp"

namespace rla {

template <typename T>
Tensor<T> he_normal(Shape weight_shape, std::mt19937_64& rng) {
  const double fan_out = static_cast<double>(weight_shape.n * weight_shape.h * weight_shape.w);
  return Tensor<T>::randn(weight_shape, rng, static_cast<T>(std::sqrt(2.0 / fan_out)));
}

template <typename T>
ParamId add_conv(ParamStore<T>& store, const std::string& name, Shape weight_shape,
                 std::mt19937_64& rng) {
  return store.create(name + ".weight", he_normal<T>(weight_shape, rng), ParamRole::conv_weight);
}

template <typename T>
BnIds add_batchnorm(ParamStore<T>& store, const std::string& name, std::int64_t channels) {
  const Shape s{channels, 1, 1, 1};
  BnIds ids;
  ids.gamma = store.create(name + ".weight", Tensor<T>(s, T(1)), ParamRole::bn_scale);
  ids.beta = store.create(name + ".bias", Tensor<T>(s, T(0)), ParamRole::bn_shift);
  ids.mean = store.create(name + ".running_mean", Tensor<T>(s, T(0)), ParamRole::running_mean);
  ids.var = store.create(name + ".running_var", Tensor<T>(s, T(1)), ParamRole::running_var);
  return ids;
}

template <typename T>
Var apply_batchnorm(Graph<T>& g, const BnIds& bn, Var x) {
  ParamStore<T>* store = g.params();
  if (store == nullptr) throw StateError("apply_batchnorm: graph has no parameter store bound");
  return batchnorm2d(g, x, g.parameter(bn.gamma), g.parameter(bn.beta), &store->tensor(bn.mean),
                     &store->tensor(bn.var));
}

template <typename T>
Var bn_relu(Graph<T>& g, const BnIds& bn, Var x) {
  return relu(g, apply_batchnorm(g, bn, x));
}

template <typename T>
Var apply_conv(Graph<T>& g, ParamId weight, Var x, int stride, int padding) {
  return conv2d(g, x, g.parameter(weight), ConvAttrs{stride, padding});
}

#define RLA_INSTANTIATE_LAYERS(T)                                                           \
  template Tensor<T> he_normal<T>(Shape, std::mt19937_64&);                                 \
  template ParamId add_conv(ParamStore<T>&, const std::string&, Shape, std::mt19937_64&);   \
  template BnIds add_batchnorm(ParamStore<T>&, const std::string&, std::int64_t);           \
  template Var apply_batchnorm(Graph<T>&, const BnIds&, Var);                               \
  template Var bn_relu(Graph<T>&, const BnIds&, Var);                                       \
  template Var apply_conv(Graph<T>&, ParamId, Var, int, int);

RLA_INSTANTIATE_LAYERS(float)
RLA_INSTANTIATE_LAYERS(double)

#undef RLA_INSTANTIATE_LAYERS

}  // namespace rla
