#include "rla/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "kernels.hpp"
#include "op_dispatch.hpp"
#include "rla/error.hpp"

namespace rla {
namespace {

[[noreturn]] void shape_fail(OpKind kind, const std::string& what) {
  throw ShapeError(std::string(to_string(kind)) + ": " + what);
}

std::int64_t pooled(std::int64_t in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

void expect_arity(OpKind kind, std::span<const Shape> in, std::size_t lo, std::size_t hi) {
  if (in.size() < lo || in.size() > hi) {
    shape_fail(kind, "expected " + std::to_string(lo) + ".." + std::to_string(hi) +
                         " inputs, got " + std::to_string(in.size()));
  }
}

}  // namespace

Shape infer_shape(OpKind kind, std::span<const Shape> in, const OpAttrs& attrs) {
  switch (kind) {
    case OpKind::input:
    case OpKind::parameter:
      shape_fail(kind, "leaf nodes have no inferred shape");
    case OpKind::conv2d: {
      expect_arity(kind, in, 2, 3);
      const auto& a = std::get<ConvAttrs>(attrs);
      const Shape& x = in[0];
      const Shape& w = in[1];
      if (a.stride < 1) shape_fail(kind, "stride must be >= 1, got " + std::to_string(a.stride));
      if (a.padding < 0) shape_fail(kind, "padding must be >= 0, got " + std::to_string(a.padding));
      if (x.c != w.c) {
        shape_fail(kind, "input channels C=" + std::to_string(x.c) + " of " + x.str() +
                             " != kernel Cin=" + std::to_string(w.c) + " of " + w.str());
      }
      if (in.size() == 3 && (in[2].n != w.n || in[2].c * in[2].h * in[2].w != 1)) {
        shape_fail(kind, "bias " + in[2].str() + " does not match Cout=" + std::to_string(w.n));
      }
      const std::int64_t ho = (x.h + 2 * a.padding - w.h) / a.stride + 1;
      const std::int64_t wo = (x.w + 2 * a.padding - w.w) / a.stride + 1;
      if (x.h + 2 * a.padding < w.h || x.w + 2 * a.padding < w.w) {
        shape_fail(kind, "kernel " + std::to_string(w.h) + "x" + std::to_string(w.w) +
                             " larger than padded input " + x.str());
      }
      return Shape{x.n, w.n, ho, wo};
    }
    case OpKind::batchnorm2d: {
      expect_arity(kind, in, 3, 3);
      for (int i = 1; i < 3; ++i) {
        if (in[i].numel() != in[0].c) {
          shape_fail(kind, "parameter " + in[i].str() + " does not match C=" +
                               std::to_string(in[0].c));
        }
      }
      return in[0];
    }
    case OpKind::relu:
    case OpKind::tanh:
      expect_arity(kind, in, 1, 1);
      return in[0];
    case OpKind::add:
      expect_arity(kind, in, 2, 2);
      if (!(in[0] == in[1])) shape_fail(kind, in[0].str() + " vs " + in[1].str());
      return in[0];
    case OpKind::concat_channels: {
      if (in.empty()) shape_fail(kind, "no inputs");
      Shape out = in[0];
      for (std::size_t i = 1; i < in.size(); ++i) {
        if (in[i].n != out.n || in[i].h != out.h || in[i].w != out.w) {
          shape_fail(kind, "part " + std::to_string(i) + " " + in[i].str() +
                               " differs from part 0 " + in[0].str() + " in N, H or W");
        }
        out.c += in[i].c;
      }
      return out;
    }
    case OpKind::avgpool2d:
    case OpKind::maxpool2d: {
      expect_arity(kind, in, 1, 1);
      const auto& a = std::get<PoolAttrs>(attrs);
      if (a.kernel < 1 || a.stride < 1 || a.padding < 0 || 2 * a.padding > a.kernel) {
        shape_fail(kind, "invalid pooling window");
      }
      const Shape& x = in[0];
      if (x.h + 2 * a.padding < a.kernel || x.w + 2 * a.padding < a.kernel) {
        shape_fail(kind, "window larger than input " + x.str());
      }
      return Shape{x.n, x.c, pooled(x.h, a.kernel, a.stride, a.padding),
                   pooled(x.w, a.kernel, a.stride, a.padding)};
    }
    case OpKind::global_avgpool:
      expect_arity(kind, in, 1, 1);
      return Shape{in[0].n, in[0].c, 1, 1};
    case OpKind::linear: {
      expect_arity(kind, in, 2, 3);
      const Shape& x = in[0];
      const Shape& w = in[1];
      const std::int64_t features = x.c * x.h * x.w;
      if (w.h != 1 || w.w != 1 || w.c != features) {
        shape_fail(kind, "input features " + std::to_string(features) + " of " + x.str() +
                             " do not match weight " + w.str());
      }
      if (in.size() == 3 && in[2].numel() != w.n) {
        shape_fail(kind, "bias " + in[2].str() + " does not match out=" + std::to_string(w.n));
      }
      return Shape{x.n, w.n, 1, 1};
    }
    case OpKind::softmax_xent:
      expect_arity(kind, in, 1, 1);
      if (in[0].h != 1 || in[0].w != 1) shape_fail(kind, "logits must be (N,K,1,1), got " + in[0].str());
      return Shape{1, 1, 1, 1};
    case OpKind::weighted_sum:
      expect_arity(kind, in, 1, 1);
      return Shape{1, 1, 1, 1};
  }
  shape_fail(kind, "unknown op");
}

std::int64_t op_macs(OpKind kind, std::span<const Shape> in, const Shape& out) {
  switch (kind) {
    case OpKind::conv2d:
      return out.numel() * in[1].c * in[1].h * in[1].w;
    case OpKind::linear:
      return out.n * in[1].n * in[1].c;
    default:
      return 0;
  }
}

std::int64_t op_elementwise(OpKind kind, std::span<const Shape> in, const Shape& out) {
  switch (kind) {
    case OpKind::batchnorm2d:
    case OpKind::relu:
    case OpKind::tanh:
    case OpKind::add:
    case OpKind::avgpool2d:
    case OpKind::maxpool2d:
      return out.numel();
    case OpKind::global_avgpool:
    case OpKind::softmax_xent:
    case OpKind::weighted_sum:
      return in[0].numel();
    default:
      return 0;
  }
}

namespace {

template <typename T>
Var make_op(Graph<T>& g, OpKind kind, std::vector<Var> inputs, OpAttrs attrs, std::string label,
            typename Graph<T>::Node proto = {}) {
  std::vector<Shape> shapes;
  shapes.reserve(inputs.size());
  for (const Var v : inputs) shapes.push_back(g.shape(v));
  proto.kind = kind;
  proto.shape = infer_shape(kind, shapes, attrs);
  proto.inputs = std::move(inputs);
  proto.attrs = attrs;
  proto.label = label.empty() ? g.scoped(to_string(kind)) : std::move(label);
  return g.record(std::move(proto));
}

// Label of a weighted op: the owning layer's name (weight name minus the
// trailing ".weight").
template <typename T>
std::string layer_label(const Graph<T>& g, Var weight, OpKind kind) {
  const auto& n = g.node(weight);
  if (n.kind == OpKind::parameter) {
    std::string name = n.label;
    const auto dot = name.rfind('.');
    if (dot != std::string::npos) name.resize(dot);
    return name;
  }
  return g.scoped(to_string(kind));
}

}  // namespace

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var weight, ConvAttrs attrs, std::optional<Var> bias,
           std::string label) {
  std::vector<Var> in{x, weight};
  if (bias) in.push_back(*bias);
  if (label.empty()) label = layer_label(g, weight, OpKind::conv2d);
  return make_op(g, OpKind::conv2d, std::move(in), attrs, std::move(label));
}

template <typename T>
Var batchnorm2d(Graph<T>& g, Var x, Var gamma, Var beta, Tensor<T>* running_mean,
                Tensor<T>* running_var, BatchNormAttrs attrs, std::string label) {
  const Shape& s = g.shape(x);
  if (g.mode() == GraphMode::train && s.n < 2) {
    throw ValueError("batchnorm2d: train mode needs batch N >= 2 (variance undefined), got N=" +
                     std::to_string(s.n));
  }
  if (g.mode() == GraphMode::eval && (running_mean == nullptr || running_var == nullptr)) {
    throw StateError("batchnorm2d: eval mode needs running statistics");
  }
  typename Graph<T>::Node proto;
  proto.running_mean = running_mean;
  proto.running_var = running_var;
  if (label.empty()) label = layer_label(g, gamma, OpKind::batchnorm2d);
  return make_op(g, OpKind::batchnorm2d, {x, gamma, beta}, attrs, std::move(label),
                 std::move(proto));
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  return make_op(g, OpKind::relu, {x}, {}, "");
}

template <typename T>
Var tanh(Graph<T>& g, Var x) {
  return make_op(g, OpKind::tanh, {x}, {}, "");
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  return make_op(g, OpKind::add, {a, b}, {}, "");
}

template <typename T>
Var concat_channels(Graph<T>& g, std::span<const Var> parts) {
  return make_op(g, OpKind::concat_channels, std::vector<Var>(parts.begin(), parts.end()), {},
                 "");
}

template <typename T>
Var avgpool2d(Graph<T>& g, Var x, PoolAttrs attrs) {
  return make_op(g, OpKind::avgpool2d, {x}, attrs, "");
}

template <typename T>
Var maxpool2d(Graph<T>& g, Var x, PoolAttrs attrs) {
  return make_op(g, OpKind::maxpool2d, {x}, attrs, "");
}

template <typename T>
Var global_avgpool(Graph<T>& g, Var x) {
  return make_op(g, OpKind::global_avgpool, {x}, {}, "");
}

template <typename T>
Var linear(Graph<T>& g, Var x, Var weight, std::optional<Var> bias, std::string label) {
  std::vector<Var> in{x, weight};
  if (bias) in.push_back(*bias);
  if (label.empty()) label = layer_label(g, weight, OpKind::linear);
  return make_op(g, OpKind::linear, std::move(in), {}, std::move(label));
}

template <typename T>
Var softmax_xent(Graph<T>& g, Var logits, std::span<const std::int64_t> labels) {
  const Shape& s = g.shape(logits);
  if (static_cast<std::int64_t>(labels.size()) != s.n) {
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for batch N=" +
                     std::to_string(s.n));
  }
  for (const auto l : labels) {
    if (l < 0 || l >= s.c) {
      throw ValueError("softmax_xent: label " + std::to_string(l) + " out of range [0," +
                       std::to_string(s.c) + ")");
    }
  }
  typename Graph<T>::Node proto;
  proto.indices.assign(labels.begin(), labels.end());
  return make_op(g, OpKind::softmax_xent, {logits}, {}, "", std::move(proto));
}

template <typename T>
Var weighted_sum(Graph<T>& g, Var x, Tensor<T> weights) {
  if (!weights.empty() && !(weights.shape() == g.shape(x))) {
    throw ShapeError("weighted_sum: weights " + weights.shape().str() + " vs input " +
                     g.shape(x).str());
  }
  typename Graph<T>::Node proto;
  proto.constant = std::move(weights);
  return make_op(g, OpKind::weighted_sum, {x}, {}, "", std::move(proto));
}

namespace detail {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
void concat_forward(Graph<T>& g, typename Graph<T>::Node& node) {
  Tensor<T>& out = node.value;
  const Shape& os = out.shape();
  std::int64_t offset = 0;
  for (const Var part : node.inputs) {
    const Tensor<T>& p = g.value(part);
    const Shape& ps = p.shape();
    const std::int64_t block = ps.c * ps.plane();
    for (std::int64_t n = 0; n < os.n; ++n) {
      std::copy_n(p.ptr() + n * block, block, out.ptr() + (n * os.c + offset) * os.plane());
    }
    offset += ps.c;
  }
}

}  // namespace

template <typename T>
void forward_node(Graph<T>& g, Var v) {
  auto& node = g.node(v);
  Tensor<T>& out = node.value;
  switch (node.kind) {
    case OpKind::input:
    case OpKind::parameter:
      return;
    case OpKind::conv2d: {
      const auto& a = std::get<ConvAttrs>(node.attrs);
      const Tensor<T>* bias = node.inputs.size() == 3 ? &g.value(node.inputs[2]) : nullptr;
      kernels::conv2d_forward(g.value(node.inputs[0]), g.value(node.inputs[1]), bias, a.stride,
                              a.padding, out);
      return;
    }
    case OpKind::batchnorm2d: {
      const auto& a = std::get<BatchNormAttrs>(node.attrs);
      const Tensor<T>& x = g.value(node.inputs[0]);
      const Tensor<T>& gamma = g.value(node.inputs[1]);
      const Tensor<T>& beta = g.value(node.inputs[2]);
      const auto c = static_cast<std::size_t>(x.shape().c);
      node.saved.assign(2 * c, T(0));
      if (g.mode() == GraphMode::train) {
        std::vector<T> unbiased(c);
        kernels::batchnorm_train_forward(x, gamma, beta, a.eps, out, std::span<T>(node.saved),
                                         std::span<T>(unbiased));
        if (node.running_mean != nullptr && node.running_var != nullptr) {
          const T m = static_cast<T>(a.momentum);
          for (std::size_t i = 0; i < c; ++i) {
            auto& rm = (*node.running_mean)[static_cast<std::int64_t>(i)];
            auto& rv = (*node.running_var)[static_cast<std::int64_t>(i)];
            rm = (T(1) - m) * rm + m * node.saved[i];
            rv = (T(1) - m) * rv + m * unbiased[i];
          }
        }
      } else {
        kernels::batchnorm_eval_forward(x, gamma, beta, *node.running_mean, *node.running_var,
                                        a.eps, out, std::span<T>(node.saved));
      }
      return;
    }
    case OpKind::relu: {
      const Tensor<T>& x = g.value(node.inputs[0]);
      // NaN passes through so non-finite diagnostics can see it.
      for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] < T(0) ? T(0) : x[i];
      return;
    }
    case OpKind::tanh: {
      const Tensor<T>& x = g.value(node.inputs[0]);
      for (std::int64_t i = 0; i < x.numel(); ++i) out[i] = std::tanh(x[i]);
      return;
    }
    case OpKind::add: {
      const Tensor<T>& a = g.value(node.inputs[0]);
      const Tensor<T>& b = g.value(node.inputs[1]);
      for (std::int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
      return;
    }
    case OpKind::concat_channels:
      concat_forward(g, node);
      return;
    case OpKind::avgpool2d: {
      const auto& a = std::get<PoolAttrs>(node.attrs);
      kernels::avgpool_forward(g.value(node.inputs[0]), a.kernel, a.stride, a.padding, out);
      return;
    }
    case OpKind::maxpool2d: {
      const auto& a = std::get<PoolAttrs>(node.attrs);
      node.indices.assign(static_cast<std::size_t>(out.numel()), 0);
      kernels::maxpool_forward(g.value(node.inputs[0]), a.kernel, a.stride, a.padding, out,
                               std::span<std::int64_t>(node.indices));
      return;
    }
    case OpKind::global_avgpool: {
      const Tensor<T>& x = g.value(node.inputs[0]);
      const std::int64_t plane = x.shape().plane();
      for (std::int64_t nc = 0; nc < x.shape().n * x.shape().c; ++nc) {
        T acc = 0;
        for (std::int64_t i = 0; i < plane; ++i) acc += x[nc * plane + i];
        out[nc] = acc / static_cast<T>(plane);
      }
      return;
    }
    case OpKind::linear: {
      const Tensor<T>& x = g.value(node.inputs[0]);
      const Tensor<T>& w = g.value(node.inputs[1]);
      const std::int64_t n = x.shape().n;
      const std::int64_t in = w.shape().c;
      const std::int64_t o = w.shape().n;
      Eigen::Map<const RowMat<T>> xm(x.ptr(), n, in);
      Eigen::Map<const RowMat<T>> wm(w.ptr(), o, in);
      Eigen::Map<RowMat<T>> om(out.ptr(), n, o);
      om.noalias() = xm * wm.transpose();
      if (node.inputs.size() == 3) {
        const Tensor<T>& b = g.value(node.inputs[2]);
        for (std::int64_t r = 0; r < n; ++r) {
          for (std::int64_t c = 0; c < o; ++c) om(r, c) += b[c];
        }
      }
      return;
    }
    case OpKind::softmax_xent: {
      const Tensor<T>& z = g.value(node.inputs[0]);
      const std::int64_t n = z.shape().n;
      const std::int64_t k = z.shape().c;
      node.saved.assign(static_cast<std::size_t>(n * k), T(0));
      double loss = 0.0;
      for (std::int64_t r = 0; r < n; ++r) {
        const T* row = z.ptr() + r * k;
        const double mx = static_cast<double>(*std::max_element(row, row + k));
        double denom = 0.0;
        for (std::int64_t c = 0; c < k; ++c) denom += std::exp(static_cast<double>(row[c]) - mx);
        const double lse = mx + std::log(denom);
        for (std::int64_t c = 0; c < k; ++c) {
          node.saved[static_cast<std::size_t>(r * k + c)] =
              static_cast<T>(std::exp(static_cast<double>(row[c]) - lse));
        }
        loss += lse - static_cast<double>(row[node.indices[static_cast<std::size_t>(r)]]);
      }
      out[0] = static_cast<T>(loss / static_cast<double>(n));
      return;
    }
    case OpKind::weighted_sum: {
      const Tensor<T>& x = g.value(node.inputs[0]);
      double acc = 0.0;
      if (node.constant.empty()) {
        for (std::int64_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x[i]);
      } else {
        for (std::int64_t i = 0; i < x.numel(); ++i) {
          acc += static_cast<double>(x[i]) * static_cast<double>(node.constant[i]);
        }
      }
      out[0] = static_cast<T>(acc);
      return;
    }
  }
}

template <typename T>
void backward_node(Graph<T>& g, Var v, std::span<const T> gout) {
  auto& node = g.node(v);
  const auto wants = [&](std::size_t i) { return g.node(node.inputs[i]).requires_grad; };
  const auto buf = [&](std::size_t i) {
    return wants(i) ? g.grad_buffer(node.inputs[i]) : std::span<T>();
  };
  switch (node.kind) {
    case OpKind::input:
    case OpKind::parameter:
      return;
    case OpKind::conv2d: {
      const auto& a = std::get<ConvAttrs>(node.attrs);
      const std::span<T> gx = buf(0);
      const std::span<T> gw = buf(1);
      const std::span<T> gb = node.inputs.size() == 3 ? buf(2) : std::span<T>();
      kernels::conv2d_backward(g.value(node.inputs[0]), g.value(node.inputs[1]), gout,
                               node.shape, a.stride, a.padding, gx, gw, gb);
      return;
    }
    case OpKind::batchnorm2d: {
      kernels::batchnorm_backward(g.value(node.inputs[0]), g.value(node.inputs[1]),
                                  std::span<const T>(node.saved), gout,
                                  g.mode() == GraphMode::train, buf(0), buf(1), buf(2));
      return;
    }
    case OpKind::relu: {
      if (!wants(0)) return;
      const std::span<T> gx = buf(0);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (node.value.data()[i] > T(0)) gx[i] += gout[i];
      }
      return;
    }
    case OpKind::tanh: {
      if (!wants(0)) return;
      const std::span<T> gx = buf(0);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        const T y = node.value.data()[i];
        gx[i] += gout[i] * (T(1) - y * y);
      }
      return;
    }
    case OpKind::add: {
      for (std::size_t k = 0; k < 2; ++k) {
        if (!wants(k)) continue;
        const std::span<T> gx = buf(k);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gout[i];
      }
      return;
    }
    case OpKind::concat_channels: {
      const Shape& os = node.shape;
      std::int64_t offset = 0;
      for (std::size_t k = 0; k < node.inputs.size(); ++k) {
        const Shape& ps = g.shape(node.inputs[k]);
        if (wants(k)) {
          const std::span<T> gx = buf(k);
          const std::int64_t block = ps.c * ps.plane();
          for (std::int64_t n = 0; n < os.n; ++n) {
            const T* src = gout.data() + (n * os.c + offset) * os.plane();
            T* dst = gx.data() + n * block;
            for (std::int64_t i = 0; i < block; ++i) dst[i] += src[i];
          }
        }
        offset += ps.c;
      }
      return;
    }
    case OpKind::avgpool2d: {
      if (!wants(0)) return;
      const auto& a = std::get<PoolAttrs>(node.attrs);
      kernels::avgpool_backward(g.shape(node.inputs[0]), node.shape, a.kernel, a.stride,
                                a.padding, gout, buf(0));
      return;
    }
    case OpKind::maxpool2d: {
      if (!wants(0)) return;
      const std::span<T> gx = buf(0);
      for (std::size_t i = 0; i < gout.size(); ++i) {
        gx[static_cast<std::size_t>(node.indices[i])] += gout[i];
      }
      return;
    }
    case OpKind::global_avgpool: {
      if (!wants(0)) return;
      const std::span<T> gx = buf(0);
      const std::int64_t plane = g.shape(node.inputs[0]).plane();
      const T inv = T(1) / static_cast<T>(plane);
      for (std::size_t nc = 0; nc < gout.size(); ++nc) {
        for (std::int64_t i = 0; i < plane; ++i) {
          gx[nc * static_cast<std::size_t>(plane) + static_cast<std::size_t>(i)] += gout[nc] * inv;
        }
      }
      return;
    }
    case OpKind::linear: {
      const Tensor<T>& x = g.value(node.inputs[0]);
      const Tensor<T>& w = g.value(node.inputs[1]);
      const std::int64_t n = x.shape().n;
      const std::int64_t in = w.shape().c;
      const std::int64_t o = w.shape().n;
      Eigen::Map<const RowMat<T>> gom(gout.data(), n, o);
      if (wants(0)) {
        Eigen::Map<const RowMat<T>> wm(w.ptr(), o, in);
        Eigen::Map<RowMat<T>> gxm(buf(0).data(), n, in);
        gxm.noalias() += gom * wm;
      }
      if (wants(1)) {
        Eigen::Map<const RowMat<T>> xm(x.ptr(), n, in);
        Eigen::Map<RowMat<T>> gwm(buf(1).data(), o, in);
        gwm.noalias() += gom.transpose() * xm;
      }
      if (node.inputs.size() == 3 && wants(2)) {
        const std::span<T> gb = buf(2);
        for (std::int64_t c = 0; c < o; ++c) gb[static_cast<std::size_t>(c)] += gom.col(c).sum();
      }
      return;
    }
    case OpKind::softmax_xent: {
      if (!wants(0)) return;
      const std::span<T> gz = buf(0);
      const Shape& zs = g.shape(node.inputs[0]);
      const T scale = gout[0] / static_cast<T>(zs.n);
      for (std::int64_t r = 0; r < zs.n; ++r) {
        for (std::int64_t c = 0; c < zs.c; ++c) {
          const auto i = static_cast<std::size_t>(r * zs.c + c);
          const T onehot = node.indices[static_cast<std::size_t>(r)] == c ? T(1) : T(0);
          gz[i] += scale * (node.saved[i] - onehot);
        }
      }
      return;
    }
    case OpKind::weighted_sum: {
      if (!wants(0)) return;
      const std::span<T> gx = buf(0);
      for (std::size_t i = 0; i < gx.size(); ++i) {
        gx[i] += node.constant.empty() ? gout[0]
                                       : gout[0] * node.constant[static_cast<std::int64_t>(i)];
      }
      return;
    }
  }
}

template void forward_node(Graph<float>&, Var);
template void forward_node(Graph<double>&, Var);
template void backward_node(Graph<float>&, Var, std::span<const float>);
template void backward_node(Graph<double>&, Var, std::span<const double>);

}  // namespace detail

#define RLA_INSTANTIATE_OPS(T)                                                                 \
  template Var conv2d(Graph<T>&, Var, Var, ConvAttrs, std::optional<Var>, std::string);       \
  template Var batchnorm2d(Graph<T>&, Var, Var, Var, Tensor<T>*, Tensor<T>*, BatchNormAttrs,  \
                           std::string);                                                      \
  template Var relu(Graph<T>&, Var);                                                          \
  template Var tanh(Graph<T>&, Var);                                                          \
  template Var add(Graph<T>&, Var, Var);                                                      \
  template Var concat_channels(Graph<T>&, std::span<const Var>);                              \
  template Var avgpool2d(Graph<T>&, Var, PoolAttrs);                                          \
  template Var maxpool2d(Graph<T>&, Var, PoolAttrs);                                          \
  template Var global_avgpool(Graph<T>&, Var);                                                \
  template Var linear(Graph<T>&, Var, Var, std::optional<Var>, std::string);                  \
  template Var softmax_xent(Graph<T>&, Var, std::span<const std::int64_t>);                   \
  template Var weighted_sum(Graph<T>&, Var, Tensor<T>);

RLA_INSTANTIATE_OPS(float)
RLA_INSTANTIATE_OPS(double)

#undef RLA_INSTANTIATE_OPS

}  // namespace rla
