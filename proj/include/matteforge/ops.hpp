// Differentiable operations over Tensor<T>.
//
// Every op computes its forward value eagerly and, when the graph is
// recording and an input requires a gradient, appends a backward rule that
// accumulates into the inputs' gradient buffers.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "matteforge/tensor.hpp"

namespace matteforge {

enum class Resample { nearest, bilinear };

namespace detail {

template <class T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw shape_error(op, a.shape(), b.shape());
}

inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * (n - 1) - i;
  }
  return i;
}

// Output column range [lo, hi) for which ox*stride + kx - pad lies in [0, width).
inline std::pair<std::ptrdiff_t, std::ptrdiff_t> valid_range(std::ptrdiff_t out, std::ptrdiff_t width,
                                                             std::ptrdiff_t k, std::ptrdiff_t stride,
                                                             std::ptrdiff_t pad) {
  std::ptrdiff_t lo = 0;
  while (lo < out && lo * stride + k - pad < 0) ++lo;
  std::ptrdiff_t hi = out;
  while (hi > lo && (hi - 1) * stride + k - pad >= width) --hi;
  return {lo, hi};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace detail {

struct ConvGeometry {
  std::ptrdiff_t cin, ih, iw, k, stride, pad, oh, ow;

  [[nodiscard]] std::ptrdiff_t rows() const { return cin * k * k; }
  [[nodiscard]] std::ptrdiff_t cols() const { return oh * ow; }
  [[nodiscard]] bool is_pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Unfolds one image (cin, ih, iw) into a (cin*k*k, oh*ow) matrix; padding reads as 0.
template <class T>
void im2col(const T* x, const ConvGeometry& g, T* cols) {
  const std::ptrdiff_t P = g.cols();
  for (std::ptrdiff_t ci = 0; ci < g.cin; ++ci) {
    const T* xp = x + ci * g.ih * g.iw;
    for (std::ptrdiff_t ky = 0; ky < g.k; ++ky) {
      const auto [ylo, yhi] = valid_range(g.oh, g.ih, ky, g.stride, g.pad);
      for (std::ptrdiff_t kx = 0; kx < g.k; ++kx) {
        const auto [xlo, xhi] = valid_range(g.ow, g.iw, kx, g.stride, g.pad);
        T* row = cols + ((ci * g.k + ky) * g.k + kx) * P;
        std::fill(row, row + P, T(0));
        for (std::ptrdiff_t oy = ylo; oy < yhi; ++oy) {
          const T* xrow = xp + (oy * g.stride + ky - g.pad) * g.iw + kx - g.pad;
          T* dst = row + oy * g.ow;
          if (g.stride == 1) {
            std::copy(xrow + xlo, xrow + xhi, dst + xlo);
          } else {
            for (std::ptrdiff_t ox = xlo; ox < xhi; ++ox) dst[ox] = xrow[ox * g.stride];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters a column matrix back into an image gradient.
template <class T>
void col2im_add(const T* cols, const ConvGeometry& g, T* gx) {
  const std::ptrdiff_t P = g.cols();
  for (std::ptrdiff_t ci = 0; ci < g.cin; ++ci) {
    T* gp = gx + ci * g.ih * g.iw;
    for (std::ptrdiff_t ky = 0; ky < g.k; ++ky) {
      const auto [ylo, yhi] = valid_range(g.oh, g.ih, ky, g.stride, g.pad);
      for (std::ptrdiff_t kx = 0; kx < g.k; ++kx) {
        const auto [xlo, xhi] = valid_range(g.ow, g.iw, kx, g.stride, g.pad);
        const T* row = cols + ((ci * g.k + ky) * g.k + kx) * P;
        for (std::ptrdiff_t oy = ylo; oy < yhi; ++oy) {
          T* grow = gp + (oy * g.stride + ky - g.pad) * g.iw + kx - g.pad;
          const T* src = row + oy * g.ow;
          for (std::ptrdiff_t ox = xlo; ox < xhi; ++ox) grow[ox * g.stride] += src[ox];
        }
      }
    }
  }
}

inline constexpr std::ptrdiff_t kConvTile = 256;

// y(M,P) += a(M,K) * b(K,P), tiled over P so a K-by-tile slab of b stays cached.
template <class T>
void gemm_nn_add(const T* a, const T* b, T* y, std::ptrdiff_t M, std::ptrdiff_t K, std::ptrdiff_t P) {
  for (std::ptrdiff_t p0 = 0; p0 < P; p0 += kConvTile) {
    const std::ptrdiff_t len = std::min(kConvTile, P - p0);
    for (std::ptrdiff_t m = 0; m < M; ++m) {
      T* yr = y + m * P + p0;
      for (std::ptrdiff_t kk = 0; kk < K; ++kk) {
        const T av = a[m * K + kk];
        const T* br = b + kk * P + p0;
        for (std::ptrdiff_t i = 0; i < len; ++i) yr[i] += av * br[i];
      }
    }
  }
}

// y(K,P) += a(M,K)^T * b(M,P)
template <class T>
void gemm_tn_add(const T* a, const T* b, T* y, std::ptrdiff_t M, std::ptrdiff_t K, std::ptrdiff_t P) {
  for (std::ptrdiff_t p0 = 0; p0 < P; p0 += kConvTile) {
    const std::ptrdiff_t len = std::min(kConvTile, P - p0);
    for (std::ptrdiff_t kk = 0; kk < K; ++kk) {
      T* yr = y + kk * P + p0;
      for (std::ptrdiff_t m = 0; m < M; ++m) {
        const T av = a[m * K + kk];
        const T* br = b + m * P + p0;
        for (std::ptrdiff_t i = 0; i < len; ++i) yr[i] += av * br[i];
      }
    }
  }
}

// y(M,K) += a(M,P) * b(K,P)^T. Four rows of b share each pass over a row of
// a; per-lane partial sums fix the summation order.
template <class T>
void gemm_nt_add(const T* a, const T* b, T* y, std::ptrdiff_t M, std::ptrdiff_t K, std::ptrdiff_t P) {
  constexpr std::ptrdiff_t L = 8;
  constexpr std::ptrdiff_t R = 4;
  const std::ptrdiff_t body = P - P % L;
  for (std::ptrdiff_t m = 0; m < M; ++m) {
    const T* ar = a + m * P;
    std::ptrdiff_t kk = 0;
    for (; kk + R <= K; kk += R) {
      T lanes[R][L] = {};
      for (std::ptrdiff_t i = 0; i < body; i += L) {
        for (std::ptrdiff_t r = 0; r < R; ++r) {
          const T* br = b + (kk + r) * P + i;
          for (std::ptrdiff_t l = 0; l < L; ++l) lanes[r][l] += ar[i + l] * br[l];
        }
      }
      for (std::ptrdiff_t r = 0; r < R; ++r) {
        const T* br = b + (kk + r) * P;
        T acc = 0;
        for (std::ptrdiff_t i = body; i < P; ++i) acc += ar[i] * br[i];
        for (std::ptrdiff_t l = 0; l < L; ++l) acc += lanes[r][l];
        y[m * K + kk + r] += acc;
      }
    }
    for (; kk < K; ++kk) {
      const T* br = b + kk * P;
      T lanes[L] = {};
      for (std::ptrdiff_t i = 0; i < body; i += L) {
        for (std::ptrdiff_t l = 0; l < L; ++l) lanes[l] += ar[i + l] * br[i + l];
      }
      T acc = 0;
      for (std::ptrdiff_t i = body; i < P; ++i) acc += ar[i] * br[i];
      for (std::ptrdiff_t l = 0; l < L; ++l) acc += lanes[l];
      y[m * K + kk] += acc;
    }
  }
}

}  // namespace detail

/// 2-D cross-correlation. weight is (c_out, c_in, k, k); bias, when
/// defined, is (1, c_out, 1, 1).
template <class T>
Tensor<T> conv2d(Graph<T>& g, const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding) {
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  if (ws.h != ws.w || ws.c != is.c) throw shape_error("conv2d(input, weight)", is, ws);
  if (bias.defined() && bias.numel() != ws.n) throw shape_error("conv2d(weight, bias)", ws, bias.shape());
  const auto k = static_cast<std::ptrdiff_t>(ws.h);
  const auto ih = static_cast<std::ptrdiff_t>(is.h);
  const auto iw = static_cast<std::ptrdiff_t>(is.w);
  if (ih + 2 * padding < k || iw + 2 * padding < k) throw shape_error("conv2d: kernel larger than input", is, ws);
  const detail::ConvGeometry geo{static_cast<std::ptrdiff_t>(is.c), ih, iw, k, stride, padding,
                                 (ih + 2 * padding - k) / stride + 1, (iw + 2 * padding - k) / stride + 1};
  const auto cout = static_cast<std::ptrdiff_t>(ws.n);
  const std::size_t batch = is.n;
  const std::ptrdiff_t K = geo.rows();
  const std::ptrdiff_t P = geo.cols();
  const std::ptrdiff_t in_plane = geo.cin * ih * iw;

  Tensor<T> out(Shape{batch, ws.n, static_cast<std::size_t>(geo.oh), static_cast<std::size_t>(geo.ow)});
  const T* x = input.data().data();
  const T* wt = weight.data().data();
  T* y = out.data().data();
  std::vector<T> cols(geo.is_pointwise() ? 0 : static_cast<std::size_t>(K * P));

  for (std::size_t n = 0; n < batch; ++n) {
    T* yn = y + static_cast<std::ptrdiff_t>(n) * cout * P;
    if (bias.defined()) {
      for (std::ptrdiff_t co = 0; co < cout; ++co) std::fill(yn + co * P, yn + (co + 1) * P, bias.data()[co]);
    }
    const T* xn = x + static_cast<std::ptrdiff_t>(n) * in_plane;
    const T* b = xn;
    if (!geo.is_pointwise()) {
      detail::im2col(xn, geo, cols.data());
      b = cols.data();
    }
    detail::gemm_nn_add(wt, b, yn, cout, K, P);
  }

  if (g.tracks({&input, &weight, &bias})) {
    g.record("conv2d", {input, weight, bias}, out, [input, weight, bias, out, geo, cout, batch]() {
      const std::ptrdiff_t K = geo.rows();
      const std::ptrdiff_t P = geo.cols();
      const std::ptrdiff_t in_plane = geo.cin * geo.ih * geo.iw;
      const T* gy = out.grad().data();
      if (bias.defined() && bias.requires_grad()) {
        T* gb = bias.ensure_grad().data();
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::ptrdiff_t co = 0; co < cout; ++co) {
            const T* gp = gy + (static_cast<std::ptrdiff_t>(n) * cout + co) * P;
            T acc = 0;
            for (std::ptrdiff_t i = 0; i < P; ++i) acc += gp[i];
            gb[co] += acc;
          }
        }
      }
      const bool gx_on = input.requires_grad();
      const bool gw_on = weight.requires_grad();
      if (!gx_on && !gw_on) return;
      T* gx = gx_on ? input.ensure_grad().data() : nullptr;
      T* gw = gw_on ? weight.ensure_grad().data() : nullptr;
      const T* xv = input.data().data();
      const T* wv = weight.data().data();
      const bool direct = geo.is_pointwise();
      std::vector<T> cols(direct ? 0 : static_cast<std::size_t>(K * P));
      for (std::size_t n = 0; n < batch; ++n) {
        const T* gyn = gy + static_cast<std::ptrdiff_t>(n) * cout * P;
        const T* xn = xv + static_cast<std::ptrdiff_t>(n) * in_plane;
        if (gw_on) {
          const T* b = xn;
          if (!direct) {
            detail::im2col(xn, geo, cols.data());
            b = cols.data();
          }
          detail::gemm_nt_add(gyn, b, gw, cout, K, P);
        }
        if (gx_on) {
          T* gxn = gx + static_cast<std::ptrdiff_t>(n) * in_plane;
          if (direct) {
            detail::gemm_tn_add(wv, gyn, gxn, cout, K, P);
          } else {
            std::fill(cols.begin(), cols.end(), T(0));
            detail::gemm_tn_add(wv, gyn, cols.data(), cout, K, P);
            detail::col2im_add(cols.data(), geo, gxn);
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise activations
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> relu(Graph<T>& g, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto xv = x.data();
  auto yv = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = xv[i] > T(0) ? xv[i] : T(0);
  if (g.tracks({&x})) {
    g.record("relu", {x}, out, [x, out]() mutable {
      auto gx = x.ensure_grad();
      auto gy = out.grad();
      auto xv = x.data();
      for (std::size_t i = 0; i < gx.size(); ++i) {
        if (xv[i] > T(0)) gx[i] += gy[i];
      }
    });
  }
  return out;
}

template <class T>
T sigmoid_value(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <class T>
Tensor<T> sigmoid(Graph<T>& g, const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  auto xv = x.data();
  auto yv = out.data();
  for (std::size_t i = 0; i < xv.size(); ++i) yv[i] = sigmoid_value(xv[i]);
  if (g.tracks({&x})) {
    g.record("sigmoid", {x}, out, [x, out]() mutable {
      auto gx = x.ensure_grad();
      auto gy = out.grad();
      auto yv = out.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * yv[i] * (T(1) - yv[i]);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

namespace detail {

// Source taps for bilinear upsampling with half-pixel centres, clamped at the edges.
struct LinearTap {
  std::size_t i0;
  std::size_t i1;
  double t;
};

inline std::vector<LinearTap> bilinear_taps(std::size_t in, std::size_t factor) {
  std::vector<LinearTap> taps(in * factor);
  for (std::size_t o = 0; o < taps.size(); ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    if (src < 0) src = 0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace detail

template <class T>
Tensor<T> upsample(Graph<T>& g, const Tensor<T>& x, int factor, Resample mode) {
  if (factor < 1) throw ShapeError("upsample: factor must be >= 1, got " + std::to_string(factor));
  const Shape& s = x.shape();
  const auto f = static_cast<std::size_t>(factor);
  const Shape os{s.n, s.c, s.h * f, s.w * f};
  Tensor<T> out(os);
  const std::size_t planes = s.n * s.c;
  auto xv = x.data();
  auto yv = out.data();

  if (mode == Resample::nearest) {
    for (std::size_t pl = 0; pl < planes; ++pl) {
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t xx = 0; xx < os.w; ++xx) {
          yv[pl * os.plane() + y * os.w + xx] = xv[pl * s.plane() + (y / f) * s.w + xx / f];
        }
      }
    }
    if (g.tracks({&x})) {
      g.record("upsample_nearest", {x}, out, [x, out, f, planes, s, os]() mutable {
        auto gx = x.ensure_grad();
        auto gy = out.grad();
        for (std::size_t pl = 0; pl < planes; ++pl) {
          for (std::size_t y = 0; y < os.h; ++y) {
            for (std::size_t xx = 0; xx < os.w; ++xx) {
              gx[pl * s.plane() + (y / f) * s.w + xx / f] += gy[pl * os.plane() + y * os.w + xx];
            }
          }
        }
      });
    }
    return out;
  }

  const auto ty = detail::bilinear_taps(s.h, f);
  const auto tx = detail::bilinear_taps(s.w, f);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = xv.data() + pl * s.plane();
    T* dst = yv.data() + pl * os.plane();
    for (std::size_t y = 0; y < os.h; ++y) {
      const auto& a = ty[y];
      const T wy = static_cast<T>(a.t);
      for (std::size_t xx = 0; xx < os.w; ++xx) {
        const auto& b = tx[xx];
        const T wx = static_cast<T>(b.t);
        const T top = src[a.i0 * s.w + b.i0] * (T(1) - wx) + src[a.i0 * s.w + b.i1] * wx;
        const T bot = src[a.i1 * s.w + b.i0] * (T(1) - wx) + src[a.i1 * s.w + b.i1] * wx;
        dst[y * os.w + xx] = top * (T(1) - wy) + bot * wy;
      }
    }
  }
  if (g.tracks({&x})) {
    g.record("upsample_bilinear", {x}, out, [x, out, ty, tx, planes, s, os]() mutable {
      auto gx = x.ensure_grad();
      auto gy = out.grad();
      for (std::size_t pl = 0; pl < planes; ++pl) {
        T* dst = gx.data() + pl * s.plane();
        const T* src = gy.data() + pl * os.plane();
        for (std::size_t y = 0; y < os.h; ++y) {
          const auto& a = ty[y];
          const T wy = static_cast<T>(a.t);
          for (std::size_t xx = 0; xx < os.w; ++xx) {
            const auto& b = tx[xx];
            const T wx = static_cast<T>(b.t);
            const T gv = src[y * os.w + xx];
            dst[a.i0 * s.w + b.i0] += gv * (T(1) - wy) * (T(1) - wx);
            dst[a.i0 * s.w + b.i1] += gv * (T(1) - wy) * wx;
            dst[a.i1 * s.w + b.i0] += gv * wy * (T(1) - wx);
            dst[a.i1 * s.w + b.i1] += gv * wy * wx;
          }
        }
      }
    });
  }
  return out;
}

/// Non-overlapping factor x factor mean pooling.
template <class T>
Tensor<T> downsample_avg(Graph<T>& g, const Tensor<T>& x, int factor) {
  if (factor < 1) throw ShapeError("downsample_avg: factor must be >= 1, got " + std::to_string(factor));
  const Shape& s = x.shape();
  const auto f = static_cast<std::size_t>(factor);
  if (s.h % f != 0 || s.w % f != 0) {
    throw ShapeError("downsample_avg: spatial dims of " + s.str() + " not divisible by " + std::to_string(f));
  }
  const Shape os{s.n, s.c, s.h / f, s.w / f};
  Tensor<T> out(os);
  const std::size_t planes = s.n * s.c;
  const T inv = T(1) / static_cast<T>(f * f);
  auto xv = x.data();
  auto yv = out.data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    for (std::size_t y = 0; y < os.h; ++y) {
      for (std::size_t xx = 0; xx < os.w; ++xx) {
        T acc = 0;
        for (std::size_t dy = 0; dy < f; ++dy) {
          for (std::size_t dx = 0; dx < f; ++dx) acc += xv[pl * s.plane() + (y * f + dy) * s.w + xx * f + dx];
        }
        yv[pl * os.plane() + y * os.w + xx] = acc * inv;
      }
    }
  }
  if (g.tracks({&x})) {
    g.record("downsample_avg", {x}, out, [x, out, f, planes, s, os, inv]() mutable {
      auto gx = x.ensure_grad();
      auto gy = out.grad();
      for (std::size_t pl = 0; pl < planes; ++pl) {
        for (std::size_t y = 0; y < s.h; ++y) {
          for (std::size_t xx = 0; xx < s.w; ++xx) {
            gx[pl * s.plane() + y * s.w + xx] += gy[pl * os.plane() + (y / f) * os.w + xx / f] * inv;
          }
        }
      }
    });
  }
  return out;
}

/// Same-size 2-D filtering with a square odd kernel and reflect padding
/// (edge pixel not repeated). kernel is row-major k*k.
template <class T>
Tensor<T> blur2d(Graph<T>& g, const Tensor<T>& x, const std::vector<T>& kernel) {
  const auto k = static_cast<std::ptrdiff_t>(std::lround(std::sqrt(static_cast<double>(kernel.size()))));
  if (k * k != static_cast<std::ptrdiff_t>(kernel.size()) || k % 2 == 0) {
    throw ShapeError("blur2d: kernel must be a square of odd size, got " + std::to_string(kernel.size()) +
                     " taps");
  }
  const Shape& s = x.shape();
  const auto h = static_cast<std::ptrdiff_t>(s.h);
  const auto w = static_cast<std::ptrdiff_t>(s.w);
  const std::ptrdiff_t r = k / 2;
  Tensor<T> out(s);
  const std::size_t planes = s.n * s.c;
  auto xv = x.data();
  auto yv = out.data();
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = xv.data() + pl * s.plane();
    T* dst = yv.data() + pl * s.plane();
    for (std::ptrdiff_t y = 0; y < h; ++y) {
      for (std::ptrdiff_t xx = 0; xx < w; ++xx) {
        T acc = 0;
        for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
          const std::ptrdiff_t sy = detail::reflect_index(y + dy, h);
          for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
            const std::ptrdiff_t sx = detail::reflect_index(xx + dx, w);
            acc += kernel[static_cast<std::size_t>((dy + r) * k + dx + r)] * src[sy * w + sx];
          }
        }
        dst[y * w + xx] = acc;
      }
    }
  }
  if (g.tracks({&x})) {
    g.record("blur2d", {x}, out, [x, out, kernel, k, r, h, w, planes, s]() mutable {
      auto gx = x.ensure_grad();
      auto gy = out.grad();
      for (std::size_t pl = 0; pl < planes; ++pl) {
        T* dst = gx.data() + pl * s.plane();
        const T* src = gy.data() + pl * s.plane();
        for (std::ptrdiff_t y = 0; y < h; ++y) {
          for (std::ptrdiff_t xx = 0; xx < w; ++xx) {
            const T gv = src[y * w + xx];
            for (std::ptrdiff_t dy = -r; dy <= r; ++dy) {
              const std::ptrdiff_t sy = detail::reflect_index(y + dy, h);
              for (std::ptrdiff_t dx = -r; dx <= r; ++dx) {
                const std::ptrdiff_t sx = detail::reflect_index(xx + dx, w);
                dst[sy * w + sx] += kernel[static_cast<std::size_t>((dy + r) * k + dx + r)] * gv;
              }
            }
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> global_avg_pool(Graph<T>& g, const Tensor<T>& x) {
  const Shape& s = x.shape();
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  const std::size_t planes = s.n * s.c;
  const T inv = T(1) / static_cast<T>(s.plane());
  for (std::size_t pl = 0; pl < planes; ++pl) {
    T acc = 0;
    for (std::size_t i = 0; i < s.plane(); ++i) acc += x.data()[pl * s.plane() + i];
    out.data()[pl] = acc * inv;
  }
  if (g.tracks({&x})) {
    g.record("global_avg_pool", {x}, out, [x, out, planes, s, inv]() mutable {
      auto gx = x.ensure_grad();
      auto gy = out.grad();
      for (std::size_t pl = 0; pl < planes; ++pl) {
        const T gv = gy[pl] * inv;
        for (std::size_t i = 0; i < s.plane(); ++i) gx[pl * s.plane() + i] += gv;
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_channels(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) throw shape_error("concat_channels", sa, sb);
  const Shape os{sa.n, sa.c + sb.c, sa.h, sa.w};
  Tensor<T> out(os);
  const std::size_t pa = sa.c * sa.plane();
  const std::size_t pb = sb.c * sb.plane();
  for (std::size_t n = 0; n < sa.n; ++n) {
    std::copy_n(a.data().data() + n * pa, pa, out.data().data() + n * (pa + pb));
    std::copy_n(b.data().data() + n * pb, pb, out.data().data() + n * (pa + pb) + pa);
  }
  if (g.tracks({&a, &b})) {
    g.record("concat_channels", {a, b}, out, [a, b, out, pa, pb, sa]() mutable {
      auto gy = out.grad();
      for (std::size_t n = 0; n < sa.n; ++n) {
        if (a.requires_grad()) {
          auto ga = a.ensure_grad();
          for (std::size_t i = 0; i < pa; ++i) ga[n * pa + i] += gy[n * (pa + pb) + i];
        }
        if (b.requires_grad()) {
          auto gb = b.ensure_grad();
          for (std::size_t i = 0; i < pb; ++i) gb[n * pb + i] += gy[n * (pa + pb) + pa + i];
        }
      }
    });
  }
  return out;
}

/// Concatenates any number of tensors along the channel axis.
template <class T>
Tensor<T> concat_channels(Graph<T>& g, const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  Tensor<T> acc = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) acc = concat_channels(g, acc, parts[i]);
  return acc;
}

// ---------------------------------------------------------------------------
// arithmetic
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> add(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("add", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (g.tracks({&a, &b})) {
    g.record("add", {a, b}, out, [a, b, out]() mutable {
      auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sub(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("sub", a, b);
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (g.tracks({&a, &b})) {
    g.record("sub", {a, b}, out, [a, b, out]() mutable {
      auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.ensure_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i];
      }
      if (b.requires_grad()) {
        auto gb = b.ensure_grad();
        for (std::size_t i = 0; i < gy.size(); ++i) gb[i] -= gy[i];
      }
    });
  }
  return out;
}

/// Elementwise product. Each dimension of b must equal a's or be 1, in which
/// case b is broadcast along it (e.g. (n,c,1,1) gates or (n,1,h,w) mattes).
template <class T>
Tensor<T> mul(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  auto fits = [](std::size_t da, std::size_t db) { return db == da || db == 1; };
  if (!fits(sa.n, sb.n) || !fits(sa.c, sb.c) || !fits(sa.h, sb.h) || !fits(sa.w, sb.w)) {
    throw shape_error("mul", sa, sb);
  }
  // Strides of b in a's index space; zero along broadcast axes.
  const std::size_t bw = sb.w == 1 ? 0 : 1;
  const std::size_t bh = sb.h == 1 ? 0 : sb.w;
  const std::size_t bc = sb.c == 1 ? 0 : sb.h * sb.w;
  const std::size_t bn = sb.n == 1 ? 0 : sb.c * sb.h * sb.w;
  auto bidx = [=](std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return n * bn + c * bc + y * bh + x * bw;
  };
  Tensor<T> out(sa);
  {
    std::size_t i = 0;
    for (std::size_t n = 0; n < sa.n; ++n)
      for (std::size_t c = 0; c < sa.c; ++c)
        for (std::size_t y = 0; y < sa.h; ++y)
          for (std::size_t x = 0; x < sa.w; ++x, ++i) out.data()[i] = a.data()[i] * b.data()[bidx(n, c, y, x)];
  }
  if (g.tracks({&a, &b})) {
    g.record("mul", {a, b}, out, [a, b, out, sa, bidx]() mutable {
      auto gy = out.grad();
      const bool ga_on = a.requires_grad();
      const bool gb_on = b.requires_grad();
      T* ga = ga_on ? a.ensure_grad().data() : nullptr;
      T* gb = gb_on ? b.ensure_grad().data() : nullptr;
      std::size_t i = 0;
      for (std::size_t n = 0; n < sa.n; ++n)
        for (std::size_t c = 0; c < sa.c; ++c)
          for (std::size_t y = 0; y < sa.h; ++y)
            for (std::size_t x = 0; x < sa.w; ++x, ++i) {
              const std::size_t j = bidx(n, c, y, x);
              if (ga_on) ga[i] += gy[i] * b.data()[j];
              if (gb_on) gb[j] += gy[i] * a.data()[i];
            }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(Graph<T>& g, const Tensor<T>& x, T factor) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out.data()[i] = x.data()[i] * factor;
  if (g.tracks({&x})) {
    g.record("scale", {x}, out, [x, out, factor]() mutable {
      auto gx = x.ensure_grad();
      auto gy = out.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy[i] * factor;
    });
  }
  return out;
}

/// sum_i x_i * weights_i as a scalar; weights are constants.
template <class T>
Tensor<T> weighted_sum(Graph<T>& g, const Tensor<T>& x, const std::vector<T>& weights) {
  if (weights.size() != x.numel()) throw ShapeError("weighted_sum: weight count does not match " + x.shape().str());
  T acc = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) acc += x.data()[i] * weights[i];
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (g.tracks({&x})) {
    g.record("weighted_sum", {x}, out, [x, out, weights]() mutable {
      auto gx = x.ensure_grad();
      const T gv = out.grad()[0];
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gv * weights[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions used as losses
// ---------------------------------------------------------------------------

template <class T>
T sign_of(T v) {
  return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0));
}

/// mean(|a - b|)
template <class T>
Tensor<T> l1_mean(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("l1_mean", a, b);
  const auto count = static_cast<T>(a.numel());
  T acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += std::abs(a.data()[i] - b.data()[i]);
  Tensor<T> out = Tensor<T>::scalar(acc / count);
  if (g.tracks({&a, &b})) {
    g.record("l1_mean", {a, b}, out, [a, b, out, count]() mutable {
      const T gv = out.grad()[0] / count;
      for (std::size_t i = 0; i < a.numel(); ++i) {
        const T s = sign_of(a.data()[i] - b.data()[i]) * gv;
        if (a.requires_grad()) a.ensure_grad()[i] += s;
        if (b.requires_grad()) b.ensure_grad()[i] -= s;
      }
    });
  }
  return out;
}

/// (1/2) * mean((a - b)^2)
template <class T>
Tensor<T> l2_mean_half(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same("l2_mean_half", a, b);
  const auto count = static_cast<T>(a.numel());
  T acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const T d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  Tensor<T> out = Tensor<T>::scalar(T(0.5) * acc / count);
  if (g.tracks({&a, &b})) {
    g.record("l2_mean_half", {a, b}, out, [a, b, out, count]() mutable {
      const T gv = out.grad()[0] / count;
      for (std::size_t i = 0; i < a.numel(); ++i) {
        const T d = (a.data()[i] - b.data()[i]) * gv;
        if (a.requires_grad()) a.ensure_grad()[i] += d;
        if (b.requires_grad()) b.ensure_grad()[i] -= d;
      }
    });
  }
  return out;
}

/// sum(mask * |a - b|) / sum(mask), or 0 when the mask is empty. The mask is
/// a constant of the same shape as a with values in {0, 1}.
template <class T>
Tensor<T> masked_l1_mean(Graph<T>& g, const Tensor<T>& a, const Tensor<T>& b, const Tensor<T>& mask) {
  detail::require_same("masked_l1_mean", a, b);
  detail::require_same("masked_l1_mean(mask)", a, mask);
  T count = 0;
  T acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (mask.data()[i] != T(0)) {
      count += T(1);
      acc += std::abs(a.data()[i] - b.data()[i]);
    }
  }
  Tensor<T> out = Tensor<T>::scalar(count > T(0) ? acc / count : T(0));
  if (count > T(0) && g.tracks({&a, &b})) {
    g.record("masked_l1_mean", {a, b}, out, [a, b, mask, out, count]() mutable {
      const T gv = out.grad()[0] / count;
      for (std::size_t i = 0; i < a.numel(); ++i) {
        if (mask.data()[i] == T(0)) continue;
        const T s = sign_of(a.data()[i] - b.data()[i]) * gv;
        if (a.requires_grad()) a.ensure_grad()[i] += s;
        if (b.requires_grad()) b.ensure_grad()[i] -= s;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

/// Per-channel normalization with learned affine (gamma, beta of shape
/// (1,c,1,1)). With use_batch_stats the batch mean/variance normalize the
/// input and, when update_running is set, the running statistics are blended
/// with the given momentum. Otherwise the running statistics are used as
/// constants and left untouched.
template <class T>
Tensor<T> batch_norm(Graph<T>& g, const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool use_batch_stats,
                     bool update_running, T momentum = T(0.1), T eps = T(1e-5)) {
  const Shape& s = x.shape();
  if (gamma.numel() != s.c || beta.numel() != s.c || running_mean.numel() != s.c ||
      running_var.numel() != s.c) {
    throw shape_error("batch_norm", s, gamma.shape());
  }
  const std::size_t per = s.n * s.plane();
  std::vector<T> mean(s.c), invstd(s.c);
  for (std::size_t c = 0; c < s.c; ++c) {
    if (use_batch_stats) {
      T m = 0;
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < s.plane(); ++i) m += x.data()[x.index(n, c, 0, 0) + i];
      m /= static_cast<T>(per);
      T v = 0;
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t i = 0; i < s.plane(); ++i) {
          const T d = x.data()[x.index(n, c, 0, 0) + i] - m;
          v += d * d;
        }
      v /= static_cast<T>(per);
      mean[c] = m;
      invstd[c] = T(1) / std::sqrt(v + eps);
      if (update_running) {
        running_mean.data()[c] = (T(1) - momentum) * running_mean.data()[c] + momentum * m;
        running_var.data()[c] = (T(1) - momentum) * running_var.data()[c] + momentum * v;
      }
    } else {
      mean[c] = running_mean.data()[c];
      invstd[c] = T(1) / std::sqrt(running_var.data()[c] + eps);
    }
  }
  Tensor<T> out(s);
  Tensor<T> xhat(s);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c) {
      const std::size_t off = x.index(n, c, 0, 0);
      for (std::size_t i = 0; i < s.plane(); ++i) {
        const T h = (x.data()[off + i] - mean[c]) * invstd[c];
        xhat.data()[off + i] = h;
        out.data()[off + i] = gamma.data()[c] * h + beta.data()[c];
      }
    }
  if (g.tracks({&x, &gamma, &beta})) {
    g.record("batch_norm", {x, gamma, beta}, out,
             [x, gamma, beta, out, xhat, invstd, per, s, use_batch_stats]() mutable {
               auto gy = out.grad();
               for (std::size_t c = 0; c < s.c; ++c) {
                 T sum_g = 0;
                 T sum_gh = 0;
                 for (std::size_t n = 0; n < s.n; ++n) {
                   const std::size_t off = x.index(n, c, 0, 0);
                   for (std::size_t i = 0; i < s.plane(); ++i) {
                     sum_g += gy[off + i];
                     sum_gh += gy[off + i] * xhat.data()[off + i];
                   }
                 }
                 if (gamma.requires_grad()) gamma.ensure_grad()[c] += sum_gh;
                 if (beta.requires_grad()) beta.ensure_grad()[c] += sum_g;
                 if (!x.requires_grad()) continue;
                 auto gx = x.ensure_grad();
                 const T gmul = gamma.data()[c] * invstd[c];
                 const T inv_per = T(1) / static_cast<T>(per);
                 for (std::size_t n = 0; n < s.n; ++n) {
                   const std::size_t off = x.index(n, c, 0, 0);
                   for (std::size_t i = 0; i < s.plane(); ++i) {
                     if (use_batch_stats) {
                       gx[off + i] += gmul * (gy[off + i] - sum_g * inv_per - xhat.data()[off + i] * sum_gh * inv_per);
                     } else {
                       gx[off + i] += gmul * gy[off + i];
                     }
                   }
                 }
               }
             });
  }
  return out;
}

}  // namespace matteforge
