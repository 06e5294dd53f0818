#pragma once

// Raw numeric kernels behind the graph ops. All buffers are dense NCHW.

#include <cstdint>
#include <span>

#include "rla/tensor.hpp"

namespace rla::kernels {

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride,
                    int padding, Tensor<T>& out);

// Accumulates into gx / gw / gbias when non-null.
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> gout,
                     const Shape& out_shape, int stride, int padding, std::span<T> gx,
                     std::span<T> gw, std::span<T> gbias);

// Train-mode BN. Writes per-channel mean and inverse std to `saved`
// (2*C entries) for the backward pass.
template <typename T>
void batchnorm_train_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             double eps, Tensor<T>& out, std::span<T> saved,
                             std::span<T> batch_var_unbiased);

template <typename T>
void batchnorm_eval_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            const Tensor<T>& running_mean, const Tensor<T>& running_var,
                            double eps, Tensor<T>& out, std::span<T> saved);

// `train` selects whether gradients flow through the batch statistics.
template <typename T>
void batchnorm_backward(const Tensor<T>& x, const Tensor<T>& gamma, std::span<const T> saved,
                        std::span<const T> gout, bool train, std::span<T> gx,
                        std::span<T> ggamma, std::span<T> gbeta);

template <typename T>
void avgpool_forward(const Tensor<T>& x, int kernel, int stride, int padding, Tensor<T>& out);

template <typename T>
void avgpool_backward(const Shape& in_shape, const Shape& out_shape, int kernel, int stride,
                      int padding, std::span<const T> gout, std::span<T> gx);

// Writes the flat input index of each maximum into argmax.
template <typename T>
void maxpool_forward(const Tensor<T>& x, int kernel, int stride, int padding, Tensor<T>& out,
                     std::span<std::int64_t> argmax);

}  // namespace rla::kernels
