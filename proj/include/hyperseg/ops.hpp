#pragma once

// Forward operators and their backprop closures. Activation tensors are
// [batch, channels, height, width]. "Convolution" is cross-correlation (no
// kernel flip), the deep-learning convention; the naive oracles in the test
// suite match that definition.
//
// Kernels are partitioned over disjoint output ranges (parallel_for), and
// every per-element reduction runs in a fixed order with a 64-bit
// accumulator, so results are bit-identical regardless of thread count.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hyperseg/hypercube.hpp"
#include "hyperseg/parallel.hpp"
#include "hyperseg/tensor.hpp"

namespace hyperseg {

enum class Padding { valid, same };

namespace detail {

inline long div_ceil(long a, long b) { return a > 0 ? (a + b - 1) / b : a / b; }
inline long div_floor(long a, long b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// symmetric zero padding, extra pixel on the high side when the total is odd
inline int pad_low(int k) { return (k - 1) / 2; }
inline int pad_high(int k) { return (k - 1) - pad_low(k); }

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xp = x.data();
  T* op = out.data();
  const long n = x.size();
  for (long i = 0; i < n; ++i) op[i] = xp[i] > T(0) ? xp[i] : T(0);
  detail::record(out, {x}, [xn = x.node()](detail::TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (xn->data[i] > T(0)) xn->grad[i] += self.grad[i];
  });
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& x, const Tensor<T>& y) {
  detail::require(x.shape() == y.shape(),
                  "add: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xp = x.data();
  const T* yp = y.data();
  T* op = out.data();
  const long n = x.size();
  for (long i = 0; i < n; ++i) op[i] = xp[i] + yp[i];
  detail::record(out, {x, y}, [xn = x.node(), yn = y.node()](detail::TensorNode<T>& self) {
    if (xn->requires_grad) detail::accumulate(*xn, self.grad);
    if (yn->requires_grad) detail::accumulate(*yn, self.grad);
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& x, const Tensor<T>& y) {
  detail::require(x.shape() == y.shape(),
                  "mul: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  const T* xp = x.data();
  const T* yp = y.data();
  T* op = out.data();
  const long n = x.size();
  for (long i = 0; i < n; ++i) op[i] = xp[i] * yp[i];
  detail::record(out, {x, y}, [xn = x.node(), yn = y.node()](detail::TensorNode<T>& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * yn->data[i];
    }
    if (yn->requires_grad) {
      yn->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) yn->grad[i] += self.grad[i] * xn->data[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  double acc = 0.0;
  const T* xp = x.data();
  const long n = x.size();
  for (long i = 0; i < n; ++i) acc += static_cast<double>(xp[i]);
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(acc));
  detail::record(out, {x}, [xn = x.node()](detail::TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const T g = self.grad[0];
    for (auto& v : xn->grad) v += g;
  });
  return out;
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& x, const Tensor<T>& y) {
  detail::require(x.ndim() == 4 && y.ndim() == 4, "concat_channels: inputs must be [N,C,H,W]");
  detail::require(x.dim(0) == y.dim(0) && x.dim(2) == y.dim(2) && x.dim(3) == y.dim(3),
                  "concat_channels: batch/spatial mismatch " + shape_str(x.shape()) + " vs " +
                      shape_str(y.shape()));
  const int N = x.dim(0), Cx = x.dim(1), Cy = y.dim(1), H = x.dim(2), W = x.dim(3);
  const long plane = static_cast<long>(H) * W;
  Tensor<T> out = Tensor<T>::zeros({N, Cx + Cy, H, W});
  for (int n = 0; n < N; ++n) {
    std::copy(x.data() + n * Cx * plane, x.data() + (n + 1) * Cx * plane,
              out.data() + static_cast<long>(n) * (Cx + Cy) * plane);
    std::copy(y.data() + n * Cy * plane, y.data() + (n + 1) * Cy * plane,
              out.data() + static_cast<long>(n) * (Cx + Cy) * plane + Cx * plane);
  }
  detail::record(out, {x, y},
                 [xn = x.node(), yn = y.node(), N, Cx, Cy, plane](detail::TensorNode<T>& self) {
                   for (int n = 0; n < N; ++n) {
                     const T* g = self.grad.data() + static_cast<long>(n) * (Cx + Cy) * plane;
                     if (xn->requires_grad) {
                       xn->ensure_grad();
                       T* dx = xn->grad.data() + static_cast<long>(n) * Cx * plane;
                       for (long i = 0; i < Cx * plane; ++i) dx[i] += g[i];
                     }
                     if (yn->requires_grad) {
                       yn->ensure_grad();
                       T* dy = yn->grad.data() + static_cast<long>(n) * Cy * plane;
                       for (long i = 0; i < Cy * plane; ++i) dy[i] += g[Cx * plane + i];
                     }
                   }
                 });
  return out;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int factor) {
  detail::require(x.ndim() == 4, "upsample_nearest: input must be [N,C,H,W]");
  detail::require(factor >= 1, "upsample_nearest: factor must be >= 1");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Ho = H * factor, Wo = W * factor;
  Tensor<T> out = Tensor<T>::zeros({N, C, Ho, Wo});
  const T* xp = x.data();
  T* op = out.data();
  for (long nc = 0; nc < static_cast<long>(N) * C; ++nc) {
    const T* xplane = xp + nc * H * W;
    T* oplane = op + nc * static_cast<long>(Ho) * Wo;
    for (int oh = 0; oh < Ho; ++oh) {
      const T* xrow = xplane + (oh / factor) * W;
      T* orow = oplane + static_cast<long>(oh) * Wo;
      for (int ow = 0; ow < Wo; ++ow) orow[ow] = xrow[ow / factor];
    }
  }
  detail::record(out, {x}, [xn = x.node(), N, C, H, W, factor](detail::TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const int Ho = H * factor, Wo = W * factor;
    for (long nc = 0; nc < static_cast<long>(N) * C; ++nc) {
      const T* gplane = self.grad.data() + nc * static_cast<long>(Ho) * Wo;
      T* dxplane = xn->grad.data() + nc * H * W;
      for (int oh = 0; oh < Ho; ++oh)
        for (int ow = 0; ow < Wo; ++ow)
          dxplane[(oh / factor) * W + ow / factor] += gplane[static_cast<long>(oh) * Wo + ow];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// maxpool2d — ties route the gradient to the first maximizer in row-major order
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x, int window = 2, int stride = 2) {
  detail::require(x.ndim() == 4, "maxpool2d: input must be [N,C,H,W]");
  detail::require(window >= 1 && stride >= 1, "maxpool2d: window and stride must be >= 1");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  detail::require(H >= window && W >= window,
                  "maxpool2d: input " + std::to_string(H) + "x" + std::to_string(W) +
                      " smaller than window " + std::to_string(window));
  const int Ho = (H - window) / stride + 1;
  const int Wo = (W - window) / stride + 1;
  Tensor<T> out = Tensor<T>::zeros({N, C, Ho, Wo});
  auto argmax = std::make_shared<std::vector<long>>(static_cast<std::size_t>(out.size()));
  const T* xp = x.data();
  T* op = out.data();
  for (long nc = 0; nc < static_cast<long>(N) * C; ++nc) {
    const T* xplane = xp + nc * H * W;
    const long obase = nc * static_cast<long>(Ho) * Wo;
    for (int oh = 0; oh < Ho; ++oh) {
      for (int ow = 0; ow < Wo; ++ow) {
        long best_idx = -1;
        T best = T(0);
        for (int kh = 0; kh < window; ++kh) {
          const int ih = oh * stride + kh;
          for (int kw = 0; kw < window; ++kw) {
            const int iw = ow * stride + kw;
            const T v = xplane[static_cast<long>(ih) * W + iw];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = static_cast<long>(ih) * W + iw;
            }
          }
        }
        op[obase + static_cast<long>(oh) * Wo + ow] = best;
        (*argmax)[static_cast<std::size_t>(obase + static_cast<long>(oh) * Wo + ow)] =
            nc * static_cast<long>(H) * W + best_idx;
      }
    }
  }
  detail::record(out, {x}, [xn = x.node(), argmax](detail::TensorNode<T>& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      xn->grad[static_cast<std::size_t>((*argmax)[i])] += self.grad[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// conv2d — cross-correlation, weight [out_c, in_c, kh, kw], bias [out_c]
// ---------------------------------------------------------------------------
namespace detail {

struct ConvDims {
  int N, Ci, H, W, Co, KH, KW, stride, pt, pl, Ho, Wo;
};

template <typename T>
ConvDims conv2d_dims(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                     Padding padding) {
  require(x.ndim() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(x.shape()));
  require(w.ndim() == 4, "conv2d: weight must be [out_c,in_c,kh,kw], got " + shape_str(w.shape()));
  require(stride >= 1, "conv2d: stride must be >= 1");
  ConvDims d{};
  d.N = x.dim(0);
  d.Ci = x.dim(1);
  d.H = x.dim(2);
  d.W = x.dim(3);
  d.Co = w.dim(0);
  d.KH = w.dim(2);
  d.KW = w.dim(3);
  d.stride = stride;
  require(w.dim(1) == d.Ci, "conv2d: weight expects " + std::to_string(w.dim(1)) +
                                " input channels, input has " + std::to_string(d.Ci));
  if (b.defined())
    require(b.ndim() == 1 && b.dim(0) == d.Co,
            "conv2d: bias must be [" + std::to_string(d.Co) + "], got " + shape_str(b.shape()));
  d.pt = padding == Padding::same ? pad_low(d.KH) : 0;
  d.pl = padding == Padding::same ? pad_low(d.KW) : 0;
  const int pb = padding == Padding::same ? pad_high(d.KH) : 0;
  const int pr = padding == Padding::same ? pad_high(d.KW) : 0;
  d.Ho = (d.H + d.pt + pb - d.KH) / stride + 1;
  d.Wo = (d.W + d.pl + pr - d.KW) / stride + 1;
  require(d.H + d.pt + pb >= d.KH && d.W + d.pl + pr >= d.KW && d.Ho > 0 && d.Wo > 0,
          "conv2d: non-positive output dims for input " + shape_str(x.shape()) + " kernel " +
              shape_str(w.shape()));
  return d;
}

// inclusive-exclusive range of ow with 0 <= ow*stride + k - pad < limit
inline void conv_col_range(int k, int pad, int stride, int limit, int out_limit, long& lo,
                           long& hi) {
  lo = std::max(0L, div_ceil(pad - k, stride));
  hi = std::min(static_cast<long>(out_limit), div_floor(limit - 1 - k + pad, stride) + 1);
}

}  // namespace detail

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                 Padding padding = Padding::valid) {
  const auto d = detail::conv2d_dims(x, w, b, stride, padding);
  Tensor<T> out = Tensor<T>::zeros({d.N, d.Co, d.Ho, d.Wo});
  const T* xp = x.data();
  const T* wp = w.data();
  const T* bp = b.defined() ? b.data() : nullptr;
  T* op = out.data();
  const long oplane = static_cast<long>(d.Ho) * d.Wo;

  parallel_for(static_cast<long>(d.N) * d.Co, [&](long lo_idx, long hi_idx) {
    std::vector<double> acc(static_cast<std::size_t>(oplane));
    for (long idx = lo_idx; idx < hi_idx; ++idx) {
      const int n = static_cast<int>(idx / d.Co);
      const int co = static_cast<int>(idx % d.Co);
      std::fill(acc.begin(), acc.end(), bp ? static_cast<double>(bp[co]) : 0.0);
      for (int ci = 0; ci < d.Ci; ++ci) {
        const T* xchan = xp + (static_cast<long>(n) * d.Ci + ci) * d.H * d.W;
        for (int kh = 0; kh < d.KH; ++kh) {
          for (int kw = 0; kw < d.KW; ++kw) {
            const double wv = static_cast<double>(
                wp[((static_cast<long>(co) * d.Ci + ci) * d.KH + kh) * d.KW + kw]);
            long ow_lo, ow_hi;
            detail::conv_col_range(kw, d.pl, d.stride, d.W, d.Wo, ow_lo, ow_hi);
            for (int oh = 0; oh < d.Ho; ++oh) {
              const int ih = oh * d.stride + kh - d.pt;
              if (ih < 0 || ih >= d.H) continue;
              const T* xrow = xchan + static_cast<long>(ih) * d.W;
              double* arow = acc.data() + static_cast<long>(oh) * d.Wo;
              if (d.stride == 1) {
                const T* xs = xrow + kw - d.pl;
                for (long ow = ow_lo; ow < ow_hi; ++ow)
                  arow[ow] += wv * static_cast<double>(xs[ow]);
              } else {
                for (long ow = ow_lo; ow < ow_hi; ++ow)
                  arow[ow] += wv * static_cast<double>(xrow[ow * d.stride + kw - d.pl]);
              }
            }
          }
        }
      }
      T* orow = op + idx * oplane;
      for (long i = 0; i < oplane; ++i) orow[i] = static_cast<T>(acc[static_cast<std::size_t>(i)]);
    }
  });

  auto backprop = [xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr,
                   d](detail::TensorNode<T>& self) {
    const T* gy = self.grad.data();
    const long oplane = static_cast<long>(d.Ho) * d.Wo;
    if (xn->requires_grad) {
      xn->ensure_grad();
      T* dx = xn->grad.data();
      const T* wp = wn->data.data();
      parallel_for(static_cast<long>(d.N) * d.Ci, [&](long lo_idx, long hi_idx) {
        for (long idx = lo_idx; idx < hi_idx; ++idx) {
          const int n = static_cast<int>(idx / d.Ci);
          const int ci = static_cast<int>(idx % d.Ci);
          T* dxchan = dx + (static_cast<long>(n) * d.Ci + ci) * d.H * d.W;
          for (int co = 0; co < d.Co; ++co) {
            const T* gplane = gy + (static_cast<long>(n) * d.Co + co) * oplane;
            for (int kh = 0; kh < d.KH; ++kh) {
              for (int kw = 0; kw < d.KW; ++kw) {
                const T wv = wp[((static_cast<long>(co) * d.Ci + ci) * d.KH + kh) * d.KW + kw];
                long ow_lo, ow_hi;
                detail::conv_col_range(kw, d.pl, d.stride, d.W, d.Wo, ow_lo, ow_hi);
                for (int oh = 0; oh < d.Ho; ++oh) {
                  const int ih = oh * d.stride + kh - d.pt;
                  if (ih < 0 || ih >= d.H) continue;
                  T* dxrow = dxchan + static_cast<long>(ih) * d.W;
                  const T* grow = gplane + static_cast<long>(oh) * d.Wo;
                  if (d.stride == 1) {
                    T* dxs = dxrow + kw - d.pl;
                    for (long ow = ow_lo; ow < ow_hi; ++ow) dxs[ow] += wv * grow[ow];
                  } else {
                    for (long ow = ow_lo; ow < ow_hi; ++ow)
                      dxrow[ow * d.stride + kw - d.pl] += wv * grow[ow];
                  }
                }
              }
            }
          }
        }
      });
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      T* dw = wn->grad.data();
      const T* xp = xn->data.data();
      parallel_for(d.Co, [&](long co_lo, long co_hi) {
        for (long co = co_lo; co < co_hi; ++co) {
          for (int ci = 0; ci < d.Ci; ++ci) {
            for (int kh = 0; kh < d.KH; ++kh) {
              for (int kw = 0; kw < d.KW; ++kw) {
                double acc = 0.0;
                long ow_lo, ow_hi;
                detail::conv_col_range(kw, d.pl, d.stride, d.W, d.Wo, ow_lo, ow_hi);
                for (int n = 0; n < d.N; ++n) {
                  const T* gplane = gy + (static_cast<long>(n) * d.Co + co) * oplane;
                  const T* xchan = xp + (static_cast<long>(n) * d.Ci + ci) * d.H * d.W;
                  for (int oh = 0; oh < d.Ho; ++oh) {
                    const int ih = oh * d.stride + kh - d.pt;
                    if (ih < 0 || ih >= d.H) continue;
                    const T* grow = gplane + static_cast<long>(oh) * d.Wo;
                    const T* xrow = xchan + static_cast<long>(ih) * d.W;
                    if (d.stride == 1) {
                      const T* xs = xrow + kw - d.pl;
                      for (long ow = ow_lo; ow < ow_hi; ++ow)
                        acc += static_cast<double>(grow[ow]) * static_cast<double>(xs[ow]);
                    } else {
                      for (long ow = ow_lo; ow < ow_hi; ++ow)
                        acc += static_cast<double>(grow[ow]) *
                               static_cast<double>(xrow[ow * d.stride + kw - d.pl]);
                    }
                  }
                }
                dw[((co * d.Ci + ci) * d.KH + kh) * d.KW + kw] += static_cast<T>(acc);
              }
            }
          }
        }
      });
    }
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      for (int co = 0; co < d.Co; ++co) {
        double acc = 0.0;
        for (int n = 0; n < d.N; ++n) {
          const T* gplane = gy + (static_cast<long>(n) * d.Co + co) * oplane;
          for (long i = 0; i < oplane; ++i) acc += static_cast<double>(gplane[i]);
        }
        bn->grad[static_cast<std::size_t>(co)] += static_cast<T>(acc);
      }
    }
  };
  if (b.defined())
    detail::record(out, {x, w, b}, std::move(backprop));
  else
    detail::record(out, {x, w}, std::move(backprop));
  return out;
}

// ---------------------------------------------------------------------------
// conv1x1 — per-pixel linear map across channels, weight [out_c, in_c]
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> conv1x1(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  detail::require(x.ndim() == 4, "conv1x1: input must be [N,C,H,W]");
  detail::require(w.ndim() == 2, "conv1x1: weight must be [out_c,in_c]");
  const int N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Co = w.dim(0);
  detail::require(w.dim(1) == Ci, "conv1x1: weight expects " + std::to_string(w.dim(1)) +
                                      " input channels, input has " + std::to_string(Ci));
  if (b.defined())
    detail::require(b.ndim() == 1 && b.dim(0) == Co,
                    "conv1x1: bias must be [" + std::to_string(Co) + "]");
  const long plane = static_cast<long>(H) * W;
  Tensor<T> out = Tensor<T>::zeros({N, Co, H, W});
  const T* xp = x.data();
  const T* wp = w.data();
  const T* bp = b.defined() ? b.data() : nullptr;
  T* op = out.data();

  parallel_for(static_cast<long>(N) * Co, [&](long lo_idx, long hi_idx) {
    std::vector<double> acc(static_cast<std::size_t>(plane));
    for (long idx = lo_idx; idx < hi_idx; ++idx) {
      const int n = static_cast<int>(idx / Co);
      const int co = static_cast<int>(idx % Co);
      std::fill(acc.begin(), acc.end(), bp ? static_cast<double>(bp[co]) : 0.0);
      for (int ci = 0; ci < Ci; ++ci) {
        const double wv = static_cast<double>(wp[static_cast<long>(co) * Ci + ci]);
        const T* xplane = xp + (static_cast<long>(n) * Ci + ci) * plane;
        for (long i = 0; i < plane; ++i) acc[static_cast<std::size_t>(i)] += wv * static_cast<double>(xplane[i]);
      }
      T* oplane = op + idx * plane;
      for (long i = 0; i < plane; ++i) oplane[i] = static_cast<T>(acc[static_cast<std::size_t>(i)]);
    }
  });

  auto backprop = [xn = x.node(), wn = w.node(), bn = b.defined() ? b.node() : nullptr, N, Ci, Co,
                   plane](detail::TensorNode<T>& self) {
    const T* gy = self.grad.data();
    if (xn->requires_grad) {
      xn->ensure_grad();
      T* dx = xn->grad.data();
      const T* wp = wn->data.data();
      parallel_for(static_cast<long>(N) * Ci, [&](long lo_idx, long hi_idx) {
        for (long idx = lo_idx; idx < hi_idx; ++idx) {
          const int n = static_cast<int>(idx / Ci);
          const int ci = static_cast<int>(idx % Ci);
          T* dxplane = dx + (static_cast<long>(n) * Ci + ci) * plane;
          for (int co = 0; co < Co; ++co) {
            const T wv = wp[static_cast<long>(co) * Ci + ci];
            const T* gplane = gy + (static_cast<long>(n) * Co + co) * plane;
            for (long i = 0; i < plane; ++i) dxplane[i] += wv * gplane[i];
          }
        }
      });
    }
    if (wn->requires_grad) {
      wn->ensure_grad();
      T* dw = wn->grad.data();
      const T* xp = xn->data.data();
      parallel_for(Co, [&](long co_lo, long co_hi) {
        for (long co = co_lo; co < co_hi; ++co) {
          for (int ci = 0; ci < Ci; ++ci) {
            double acc = 0.0;
            for (int n = 0; n < N; ++n) {
              const T* gplane = gy + (static_cast<long>(n) * Co + co) * plane;
              const T* xplane = xp + (static_cast<long>(n) * Ci + ci) * plane;
              for (long i = 0; i < plane; ++i)
                acc += static_cast<double>(gplane[i]) * static_cast<double>(xplane[i]);
            }
            dw[co * Ci + ci] += static_cast<T>(acc);
          }
        }
      });
    }
    if (bn && bn->requires_grad) {
      bn->ensure_grad();
      for (int co = 0; co < Co; ++co) {
        double acc = 0.0;
        for (int n = 0; n < N; ++n) {
          const T* gplane = gy + (static_cast<long>(n) * Co + co) * plane;
          for (long i = 0; i < plane; ++i) acc += static_cast<double>(gplane[i]);
        }
        bn->grad[static_cast<std::size_t>(co)] += static_cast<T>(acc);
      }
    }
  };
  if (b.defined())
    detail::record(out, {x, w, b}, std::move(backprop));
  else
    detail::record(out, {x, w}, std::move(backprop));
  return out;
}

// ---------------------------------------------------------------------------
// conv_transpose2d — adjoint of conv2d, weight [in_c, out_c, kh, kw].
// Output spatial dim = (H-1)*stride + kh, no padding.
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, int stride = 1) {
  detail::require(x.ndim() == 4, "conv_transpose2d: input must be [N,C,H,W]");
  detail::require(w.ndim() == 4, "conv_transpose2d: weight must be [in_c,out_c,kh,kw]");
  detail::require(stride >= 1, "conv_transpose2d: stride must be >= 1");
  const int N = x.dim(0), Ci = x.dim(1), Hi = x.dim(2), Wi = x.dim(3);
  const int Co = w.dim(1), KH = w.dim(2), KW = w.dim(3);
  detail::require(w.dim(0) == Ci, "conv_transpose2d: weight expects " + std::to_string(w.dim(0)) +
                                      " input channels, input has " + std::to_string(Ci));
  const int Ho = (Hi - 1) * stride + KH;
  const int Wo = (Wi - 1) * stride + KW;
  const long oplane = static_cast<long>(Ho) * Wo;
  Tensor<T> out = Tensor<T>::zeros({N, Co, Ho, Wo});
  const T* xp = x.data();
  const T* wp = w.data();
  T* op = out.data();

  parallel_for(static_cast<long>(N) * Co, [&](long lo_idx, long hi_idx) {
    std::vector<double> acc(static_cast<std::size_t>(oplane));
    for (long idx = lo_idx; idx < hi_idx; ++idx) {
      const int n = static_cast<int>(idx / Co);
      const int co = static_cast<int>(idx % Co);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int ci = 0; ci < Ci; ++ci) {
        const T* xchan = xp + (static_cast<long>(n) * Ci + ci) * Hi * Wi;
        for (int kh = 0; kh < KH; ++kh) {
          for (int kw = 0; kw < KW; ++kw) {
            const double wv = static_cast<double>(
                wp[((static_cast<long>(ci) * Co + co) * KH + kh) * KW + kw]);
            for (int ih = 0; ih < Hi; ++ih) {
              const T* xrow = xchan + static_cast<long>(ih) * Wi;
              double* arow = acc.data() + static_cast<long>(ih * stride + kh) * Wo + kw;
              for (int iw = 0; iw < Wi; ++iw)
                arow[static_cast<long>(iw) * stride] += wv * static_cast<double>(xrow[iw]);
            }
          }
        }
      }
      T* orow = op + idx * oplane;
      for (long i = 0; i < oplane; ++i) orow[i] = static_cast<T>(acc[static_cast<std::size_t>(i)]);
    }
  });

  detail::record(out, {x, w},
                 [xn = x.node(), wn = w.node(), N, Ci, Hi, Wi, Co, KH, KW, Ho, Wo,
                  stride](detail::TensorNode<T>& self) {
                   const T* gy = self.grad.data();
                   const long oplane = static_cast<long>(Ho) * Wo;
                   if (xn->requires_grad) {
                     xn->ensure_grad();
                     T* dx = xn->grad.data();
                     const T* wp = wn->data.data();
                     parallel_for(static_cast<long>(N) * Ci, [&](long lo_idx, long hi_idx) {
                       for (long idx = lo_idx; idx < hi_idx; ++idx) {
                         const int n = static_cast<int>(idx / Ci);
                         const int ci = static_cast<int>(idx % Ci);
                         T* dxchan = dx + (static_cast<long>(n) * Ci + ci) * Hi * Wi;
                         for (int co = 0; co < Co; ++co) {
                           const T* gplane = gy + (static_cast<long>(n) * Co + co) * oplane;
                           for (int kh = 0; kh < KH; ++kh) {
                             for (int kw = 0; kw < KW; ++kw) {
                               const T wv =
                                   wp[((static_cast<long>(ci) * Co + co) * KH + kh) * KW + kw];
                               for (int ih = 0; ih < Hi; ++ih) {
                                 T* dxrow = dxchan + static_cast<long>(ih) * Wi;
                                 const T* grow =
                                     gplane + static_cast<long>(ih * stride + kh) * Wo + kw;
                                 for (int iw = 0; iw < Wi; ++iw)
                                   dxrow[iw] += wv * grow[static_cast<long>(iw) * stride];
                               }
                             }
                           }
                         }
                       }
                     });
                   }
                   if (wn->requires_grad) {
                     wn->ensure_grad();
                     T* dw = wn->grad.data();
                     const T* xp = xn->data.data();
                     parallel_for(static_cast<long>(Ci) * Co, [&](long lo_idx, long hi_idx) {
                       for (long idx = lo_idx; idx < hi_idx; ++idx) {
                         const int ci = static_cast<int>(idx / Co);
                         const int co = static_cast<int>(idx % Co);
                         for (int kh = 0; kh < KH; ++kh) {
                           for (int kw = 0; kw < KW; ++kw) {
                             double acc = 0.0;
                             for (int n = 0; n < N; ++n) {
                               const T* xchan = xp + (static_cast<long>(n) * Ci + ci) * Hi * Wi;
                               const T* gplane = gy + (static_cast<long>(n) * Co + co) * oplane;
                               for (int ih = 0; ih < Hi; ++ih) {
                                 const T* xrow = xchan + static_cast<long>(ih) * Wi;
                                 const T* grow =
                                     gplane + static_cast<long>(ih * stride + kh) * Wo + kw;
                                 for (int iw = 0; iw < Wi; ++iw)
                                   acc += static_cast<double>(xrow[iw]) *
                                          static_cast<double>(grow[static_cast<long>(iw) * stride]);
                               }
                             }
                             dw[(idx * KH + kh) * KW + kw] += static_cast<T>(acc);
                           }
                         }
                       }
                     });
                   }
                 });
  return out;
}

// ---------------------------------------------------------------------------
// softmax_ce_loss — mean over non-ignored pixels of -log softmax(logits)[target]
// ---------------------------------------------------------------------------
template <typename T>
Tensor<T> softmax_ce_loss(const Tensor<T>& logits, const LabelMask& target,
                          int ignore_index = -1) {
  detail::require(logits.ndim() == 4, "softmax_ce_loss: logits must be [batch,classes,H,W]");
  detail::require(logits.dim(0) == 1,
                  "softmax_ce_loss: one target mask implies batch 1, got batch " +
                      std::to_string(logits.dim(0)));
  const int C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  detail::require(H == target.height && W == target.width,
                  "softmax_ce_loss: logits are " + std::to_string(H) + "x" + std::to_string(W) +
                      ", target is " + std::to_string(target.height) + "x" +
                      std::to_string(target.width));
  const long plane = static_cast<long>(H) * W;
  const T* lp = logits.data();

  // softmax probabilities saved for the backward pass
  auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(C) * plane);
  auto labels = std::make_shared<std::vector<std::uint8_t>>(target.labels);
  double total = 0.0;
  long valid = 0;
  for (long p = 0; p < plane; ++p) {
    const int t = (*labels)[static_cast<std::size_t>(p)];
    double mx = static_cast<double>(lp[p]);
    for (int c = 1; c < C; ++c)
      mx = std::max(mx, static_cast<double>(lp[static_cast<long>(c) * plane + p]));
    double se = 0.0;
    for (int c = 0; c < C; ++c)
      se += std::exp(static_cast<double>(lp[static_cast<long>(c) * plane + p]) - mx);
    const double lse = mx + std::log(se);
    for (int c = 0; c < C; ++c)
      (*probs)[static_cast<std::size_t>(static_cast<long>(c) * plane + p)] =
          std::exp(static_cast<double>(lp[static_cast<long>(c) * plane + p]) - lse);
    if (t == ignore_index) continue;
    detail::require(t < C, "softmax_ce_loss: target class " + std::to_string(t) +
                               " >= logit classes " + std::to_string(C));
    total += lse - static_cast<double>(lp[static_cast<long>(t) * plane + p]);
    ++valid;
  }
  detail::require(valid > 0, "softmax_ce_loss: every pixel is ignored");

  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(valid)));
  detail::record(out, {logits},
                 [ln = logits.node(), probs, labels, C, plane, valid,
                  ignore_index](detail::TensorNode<T>& self) {
                   if (!ln->requires_grad) return;
                   ln->ensure_grad();
                   const double g = static_cast<double>(self.grad[0]) / static_cast<double>(valid);
                   for (long p = 0; p < plane; ++p) {
                     const int t = (*labels)[static_cast<std::size_t>(p)];
                     if (t == ignore_index) continue;
                     for (int c = 0; c < C; ++c) {
                       const double soft =
                           (*probs)[static_cast<std::size_t>(static_cast<long>(c) * plane + p)];
                       const double delta = (c == t) ? soft - 1.0 : soft;
                       ln->grad[static_cast<std::size_t>(static_cast<long>(c) * plane + p)] +=
                           static_cast<T>(g * delta);
                     }
                   }
                 });
  return out;
}

}  // namespace hyperseg
