#include "kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace rla::kernels {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
  std::int64_t cin, h, w, kh, kw, ho, wo;
  int stride, padding;

  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && padding == 0; }
  std::int64_t col_rows() const { return cin * kh * kw; }
  std::int64_t col_cols() const { return ho * wo; }
};

// col[(c*kh + i)*kw + j][oh*wo + ow] = x[c][oh*s - p + i][ow*s - p + j]
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  for (std::int64_t c = 0; c < g.cin; ++c) {
    const T* xc = x + c * g.h * g.w;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        T* row = col + ((c * g.kh + i) * g.kw + j) * g.ho * g.wo;
        for (std::int64_t oh = 0; oh < g.ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + i;
          T* dst = row + oh * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = xc + ih * g.w;
          for (std::int64_t ow = 0; ow < g.wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.padding + j;
            dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeom& g, T* x) {
  for (std::int64_t c = 0; c < g.cin; ++c) {
    T* xc = x + c * g.h * g.w;
    for (std::int64_t i = 0; i < g.kh; ++i) {
      for (std::int64_t j = 0; j < g.kw; ++j) {
        const T* row = col + ((c * g.kh + i) * g.kw + j) * g.ho * g.wo;
        for (std::int64_t oh = 0; oh < g.ho; ++oh) {
          const std::int64_t ih = oh * g.stride - g.padding + i;
          if (ih < 0 || ih >= g.h) continue;
          const T* src = row + oh * g.wo;
          T* dst = xc + ih * g.w;
          for (std::int64_t ow = 0; ow < g.wo; ++ow) {
            const std::int64_t iw = ow * g.stride - g.padding + j;
            if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

ConvGeom geometry(const Shape& xs, const Shape& ws, const Shape& os, int stride, int padding) {
  return ConvGeom{xs.c, xs.h, xs.w, ws.h, ws.w, os.h, os.w, stride, padding};
}

}  // namespace

template <typename T>
void conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int stride,
                    int padding, Tensor<T>& out) {
  const Shape& xs = x.shape();
  const Shape& os = out.shape();
  const ConvGeom g = geometry(xs, w.shape(), os, stride, padding);
  const std::int64_t cout = w.shape().n;
  CMapMat<T> wm(w.ptr(), cout, g.col_rows());
  std::vector<T> col;
  if (!g.pointwise()) col.resize(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
  for (std::int64_t n = 0; n < xs.n; ++n) {
    const T* xn = x.ptr() + n * xs.c * xs.h * xs.w;
    const T* colp = xn;
    if (!g.pointwise()) {
      im2col(xn, g, col.data());
      colp = col.data();
    }
    CMapMat<T> cm(colp, g.col_rows(), g.col_cols());
    MapMat<T> om(out.ptr() + n * cout * g.col_cols(), cout, g.col_cols());
    om.noalias() = wm * cm;
    if (bias != nullptr) {
      for (std::int64_t o = 0; o < cout; ++o) om.row(o).array() += (*bias)[o];
    }
  }
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, std::span<const T> gout,
                     const Shape& out_shape, int stride, int padding, std::span<T> gx,
                     std::span<T> gw, std::span<T> gbias) {
  const Shape& xs = x.shape();
  const ConvGeom g = geometry(xs, w.shape(), out_shape, stride, padding);
  const std::int64_t cout = w.shape().n;
  CMapMat<T> wm(w.ptr(), cout, g.col_rows());
  std::vector<T> col;
  std::vector<T> gcol;
  if (!g.pointwise()) {
    col.resize(static_cast<std::size_t>(g.col_rows() * g.col_cols()));
    gcol.resize(col.size());
  }
  for (std::int64_t n = 0; n < xs.n; ++n) {
    CMapMat<T> gom(gout.data() + n * cout * g.col_cols(), cout, g.col_cols());
    const T* xn = x.ptr() + n * xs.c * xs.h * xs.w;
    if (!gw.empty()) {
      const T* colp = xn;
      if (!g.pointwise()) {
        im2col(xn, g, col.data());
        colp = col.data();
      }
      CMapMat<T> cm(colp, g.col_rows(), g.col_cols());
      MapMat<T> gwm(gw.data(), cout, g.col_rows());
      gwm.noalias() += gom * cm.transpose();
    }
    if (!gx.empty()) {
      T* gxn = gx.data() + n * xs.c * xs.h * xs.w;
      if (g.pointwise()) {
        MapMat<T> gxm(gxn, g.col_rows(), g.col_cols());
        gxm.noalias() += wm.transpose() * gom;
      } else {
        MapMat<T> gcm(gcol.data(), g.col_rows(), g.col_cols());
        gcm.noalias() = wm.transpose() * gom;
        col2im_add(gcol.data(), g, gxn);
      }
    }
    if (!gbias.empty()) {
      for (std::int64_t o = 0; o < cout; ++o) gbias[static_cast<std::size_t>(o)] += gom.row(o).sum();
    }
  }
}

template <typename T>
void batchnorm_train_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             double eps, Tensor<T>& out, std::span<T> saved,
                             std::span<T> batch_var_unbiased) {
  const Shape& s = x.shape();
  const std::int64_t plane = s.plane();
  const double count = static_cast<double>(s.n * plane);
  for (std::int64_t c = 0; c < s.c; ++c) {
    double sum = 0.0;
    for (std::int64_t n = 0; n < s.n; ++n) {
      const T* p = x.ptr() + (n * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) sum += static_cast<double>(p[i]);
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (std::int64_t n = 0; n < s.n; ++n) {
      const T* p = x.ptr() + (n * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double d = static_cast<double>(p[i]) - mean;
        sq += d * d;
      }
    }
    const double var = sq / count;
    const double invstd = 1.0 / std::sqrt(var + eps);
    saved[static_cast<std::size_t>(c)] = static_cast<T>(mean);
    saved[static_cast<std::size_t>(s.c + c)] = static_cast<T>(invstd);
    batch_var_unbiased[static_cast<std::size_t>(c)] =
        static_cast<T>(count > 1.0 ? sq / (count - 1.0) : 0.0);
    const T scale = static_cast<T>(static_cast<double>(gamma[c]) * invstd);
    const T m = static_cast<T>(mean);
    const T shift = beta[c];
    for (std::int64_t n = 0; n < s.n; ++n) {
      const T* p = x.ptr() + (n * s.c + c) * plane;
      T* q = out.ptr() + (n * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) q[i] = (p[i] - m) * scale + shift;
    }
  }
}

template <typename T>
void batchnorm_eval_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                            const Tensor<T>& running_mean, const Tensor<T>& running_var,
                            double eps, Tensor<T>& out, std::span<T> saved) {
  const Shape& s = x.shape();
  const std::int64_t plane = s.plane();
  for (std::int64_t c = 0; c < s.c; ++c) {
    const double mean = static_cast<double>(running_mean[c]);
    const double invstd = 1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps);
    saved[static_cast<std::size_t>(c)] = static_cast<T>(mean);
    saved[static_cast<std::size_t>(s.c + c)] = static_cast<T>(invstd);
    const T scale = static_cast<T>(static_cast<double>(gamma[c]) * invstd);
    const T m = static_cast<T>(mean);
    const T shift = beta[c];
    for (std::int64_t n = 0; n < s.n; ++n) {
      const T* p = x.ptr() + (n * s.c + c) * plane;
      T* q = out.ptr() + (n * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) q[i] = (p[i] - m) * scale + shift;
    }
  }
}

template <typename T>
void batchnorm_backward(const Tensor<T>& x, const Tensor<T>& gamma, std::span<const T> saved,
                        std::span<const T> gout, bool train, std::span<T> gx,
                        std::span<T> ggamma, std::span<T> gbeta) {
  const Shape& s = x.shape();
  const std::int64_t plane = s.plane();
  const double count = static_cast<double>(s.n * plane);
  for (std::int64_t c = 0; c < s.c; ++c) {
    const double mean = static_cast<double>(saved[static_cast<std::size_t>(c)]);
    const double invstd = static_cast<double>(saved[static_cast<std::size_t>(s.c + c)]);
    double sum_g = 0.0;
    double sum_gx = 0.0;
    for (std::int64_t n = 0; n < s.n; ++n) {
      const T* p = x.ptr() + (n * s.c + c) * plane;
      const T* go = gout.data() + (n * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        const double xhat = (static_cast<double>(p[i]) - mean) * invstd;
        sum_g += static_cast<double>(go[i]);
        sum_gx += static_cast<double>(go[i]) * xhat;
      }
    }
    if (!ggamma.empty()) ggamma[static_cast<std::size_t>(c)] += static_cast<T>(sum_gx);
    if (!gbeta.empty()) gbeta[static_cast<std::size_t>(c)] += static_cast<T>(sum_g);
    if (gx.empty()) continue;
    const double gm = static_cast<double>(gamma[c]);
    for (std::int64_t n = 0; n < s.n; ++n) {
      const T* p = x.ptr() + (n * s.c + c) * plane;
      const T* go = gout.data() + (n * s.c + c) * plane;
      T* gi = gx.data() + (n * s.c + c) * plane;
      for (std::int64_t i = 0; i < plane; ++i) {
        if (train) {
          const double xhat = (static_cast<double>(p[i]) - mean) * invstd;
          const double v = gm * invstd *
                           (static_cast<double>(go[i]) - sum_g / count - xhat * sum_gx / count);
          gi[i] += static_cast<T>(v);
        } else {
          gi[i] += static_cast<T>(gm * invstd * static_cast<double>(go[i]));
        }
      }
    }
  }
}

template <typename T>
void avgpool_forward(const Tensor<T>& x, int kernel, int stride, int padding, Tensor<T>& out) {
  const Shape& s = x.shape();
  const Shape& o = out.shape();
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* p = x.ptr() + nc * s.plane();
    T* q = out.ptr() + nc * o.plane();
    for (std::int64_t oh = 0; oh < o.h; ++oh) {
      for (std::int64_t ow = 0; ow < o.w; ++ow) {
        T acc = 0;
        for (int i = 0; i < kernel; ++i) {
          const std::int64_t ih = oh * stride - padding + i;
          if (ih < 0 || ih >= s.h) continue;
          for (int j = 0; j < kernel; ++j) {
            const std::int64_t iw = ow * stride - padding + j;
            if (iw < 0 || iw >= s.w) continue;
            acc += p[ih * s.w + iw];
          }
        }
        q[oh * o.w + ow] = acc * inv;
      }
    }
  }
}

template <typename T>
void avgpool_backward(const Shape& s, const Shape& o, int kernel, int stride, int padding,
                      std::span<const T> gout, std::span<T> gx) {
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
    T* p = gx.data() + nc * s.plane();
    const T* q = gout.data() + nc * o.plane();
    for (std::int64_t oh = 0; oh < o.h; ++oh) {
      for (std::int64_t ow = 0; ow < o.w; ++ow) {
        const T g = q[oh * o.w + ow] * inv;
        for (int i = 0; i < kernel; ++i) {
          const std::int64_t ih = oh * stride - padding + i;
          if (ih < 0 || ih >= s.h) continue;
          for (int j = 0; j < kernel; ++j) {
            const std::int64_t iw = ow * stride - padding + j;
            if (iw < 0 || iw >= s.w) continue;
            p[ih * s.w + iw] += g;
          }
        }
      }
    }
  }
}

template <typename T>
void maxpool_forward(const Tensor<T>& x, int kernel, int stride, int padding, Tensor<T>& out,
                     std::span<std::int64_t> argmax) {
  const Shape& s = x.shape();
  const Shape& o = out.shape();
  for (std::int64_t nc = 0; nc < s.n * s.c; ++nc) {
    const T* p = x.ptr() + nc * s.plane();
    T* q = out.ptr() + nc * o.plane();
    std::int64_t* a = argmax.data() + nc * o.plane();
    for (std::int64_t oh = 0; oh < o.h; ++oh) {
      for (std::int64_t ow = 0; ow < o.w; ++ow) {
        T best = -std::numeric_limits<T>::infinity();
        std::int64_t at = -1;
        for (int i = 0; i < kernel; ++i) {
          const std::int64_t ih = oh * stride - padding + i;
          if (ih < 0 || ih >= s.h) continue;
          for (int j = 0; j < kernel; ++j) {
            const std::int64_t iw = ow * stride - padding + j;
            if (iw < 0 || iw >= s.w) continue;
            const T v = p[ih * s.w + iw];
            if (at < 0 || v > best) {
              best = v;
              at = nc * s.plane() + ih * s.w + iw;
            }
          }
        }
        q[oh * o.w + ow] = best;
        a[oh * o.w + ow] = at;
      }
    }
  }
}

#define RLA_INSTANTIATE(T)                                                                      \
  template void conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int, int, \
                               Tensor<T>&);                                                    \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, std::span<const T>,        \
                                const Shape&, int, int, std::span<T>, std::span<T>,            \
                                std::span<T>);                                                 \
  template void batchnorm_train_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                        double, Tensor<T>&, std::span<T>, std::span<T>);       \
  template void batchnorm_eval_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                       const Tensor<T>&, const Tensor<T>&, double, Tensor<T>&, \
                                       std::span<T>);                                          \
  template void batchnorm_backward(const Tensor<T>&, const Tensor<T>&, std::span<const T>,     \
                                   std::span<const T>, bool, std::span<T>, std::span<T>,       \
                                   std::span<T>);                                              \
  template void avgpool_forward(const Tensor<T>&, int, int, int, Tensor<T>&);                  \
  template void avgpool_backward(const Shape&, const Shape&, int, int, int,                    \
                                 std::span<const T>, std::span<T>);                            \
  template void maxpool_forward(const Tensor<T>&, int, int, int, Tensor<T>&,                   \
                                std::span<std::int64_t>);

RLA_INSTANTIATE(float)
RLA_INSTANTIATE(double)

#undef RLA_INSTANTIATE

}  // namespace rla::kernels
