// Shared helpers for the test suites: random inputs and brute-force oracles
// written independently of the library implementations.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "matteforge/image.hpp"
#include "matteforge/tensor.hpp"

namespace mft {

using namespace matteforge;

template <class T = double>
Tensor<T> random_tensor(std::mt19937_64& rng, Shape s, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<T> v(s.numel());
  for (T& x : v) x = static_cast<T>(d(rng));
  return Tensor<T>::from(s, std::move(v), requires_grad);
}

inline Matte random_matte(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  Matte m(h, w);
  for (double& v : m.values) v = d(rng);
  return m;
}

inline Mask random_binary(std::mt19937_64& rng, int h, int w, double p = 0.5) {
  std::bernoulli_distribution d(p);
  Mask m(h, w);
  for (double& v : m.values) v = d(rng) ? 1.0 : 0.0;
  return m;
}

/// Blobby binary image: a few random rectangles and discs, so that the
/// morphology has real interiors and edges rather than salt-and-pepper.
inline Mask random_shapes(std::mt19937_64& rng, int h, int w) {
  Mask m(h, w);
  std::uniform_int_distribution<int> count(1, 6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = count(rng);
  for (int i = 0; i < n; ++i) {
    const double cy = u(rng) * h, cx = u(rng) * w, r = 1.0 + u(rng) * std::min(h, w) / 3.0;
    const bool disc = u(rng) < 0.5;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        const bool inside = disc ? dy * dy + dx * dx <= r * r : std::abs(dy) <= r && std::abs(dx) <= 0.6 * r;
        if (inside) m.at(y, x) = 1.0;
      }
    }
  }
  return m;
}

/// One pass of a full (non-separable) square window max or min; pixels
/// outside the image are not part of the window.
inline Mask brute_window(const Mask& in, int kernel, bool take_max) {
  const int r = kernel / 2;
  Mask out(in.height, in.width);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      double v = take_max ? 0.0 : 1.0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          const int yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= in.height || xx < 0 || xx >= in.width) continue;
          v = take_max ? std::max(v, in.at(yy, xx)) : std::min(v, in.at(yy, xx));
        }
      }
      out.at(y, x) = v;
    }
  }
  return out;
}

inline Mask brute_dilate(Mask m, int kernel, int iterations) {
  for (int i = 0; i < iterations; ++i) m = brute_window(m, kernel, true);
  return m;
}

inline Mask brute_erode(Mask m, int kernel, int iterations) {
  for (int i = 0; i < iterations; ++i) m = brute_window(m, kernel, false);
  return m;
}

inline Mask brute_transition(const Matte& a, int kernel, int iterations) {
  Mask bin(a.height, a.width);
  for (std::size_t i = 0; i < a.size(); ++i) bin.values[i] = a.values[i] >= 0.5 ? 1.0 : 0.0;
  const Mask d = brute_dilate(bin, kernel, iterations);
  const Mask e = brute_erode(bin, kernel, iterations);
  Mask out(a.height, a.width);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool band = d.values[i] == 1.0 && e.values[i] == 0.0;
    const bool fractional = a.values[i] > 0.0 && a.values[i] < 1.0;
    out.values[i] = band || fractional ? 1.0 : 0.0;
  }
  return out;
}

inline Trimap brute_trimap(const DepthMap& depth, double threshold, int kernel, int iterations, double far_plane) {
  Mask fg(depth.height, depth.width);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    fg.values[i] = std::max(0.0, far_plane - depth.values[i]) >= threshold ? 1.0 : 0.0;
  }
  const Mask e = brute_erode(fg, kernel, iterations);
  const Mask d = brute_dilate(fg, kernel, iterations);
  Trimap t(depth.height, depth.width);
  for (std::size_t i = 0; i < t.size(); ++i) t.values[i] = e.values[i] == 1.0 ? 1.0 : (d.values[i] == 0.0 ? 0.0 : 0.5);
  return t;
}

/// Per-pixel application of the flicker conditions and the neighbour
/// average, reading only the original frames.
inline std::vector<Matte> brute_ofd(const std::vector<Matte>& frames, double xi) {
  std::vector<Matte> out = frames;
  for (std::size_t t = 1; t + 1 < frames.size(); ++t) {
    for (int y = 0; y < frames[t].height; ++y) {
      for (int x = 0; x < frames[t].width; ++x) {
        const double p = frames[t - 1].at(y, x), c = frames[t].at(y, x), n = frames[t + 1].at(y, x);
        const bool neighbours_agree = std::fabs(p - n) <= xi;
        const bool jumps_from_prev = std::fabs(c - p) > xi;
        const bool jumps_to_next = std::fabs(c - n) > xi;
        if (neighbours_agree && jumps_from_prev && jumps_to_next) out[t].at(y, x) = (p + n) / 2.0;
      }
    }
  }
  return out;
}

/// Textbook six-loop cross-correlation with zero padding.
template <class T>
std::vector<T> brute_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b, int stride, int pad) {
  const Shape xs = x.shape(), ws = w.shape();
  const int k = static_cast<int>(ws.h);
  const int oh = (static_cast<int>(xs.h) + 2 * pad - k) / stride + 1;
  const int ow = (static_cast<int>(xs.w) + 2 * pad - k) / stride + 1;
  std::vector<T> out(xs.n * ws.n * static_cast<std::size_t>(oh * ow));
  std::size_t idx = 0;
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t co = 0; co < ws.n; ++co) {
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double acc = b != nullptr ? static_cast<double>(b->data()[co]) : 0.0;
          for (std::size_t ci = 0; ci < xs.c; ++ci) {
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride + ky - pad, ix = ox * stride + kx - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<int>(xs.h) || ix >= static_cast<int>(xs.w)) continue;
                acc += static_cast<double>(x.at(n, ci, iy, ix)) * static_cast<double>(w.at(co, ci, ky, kx));
              }
            }
          }
          out[idx++] = static_cast<T>(acc);
        }
      }
    }
  }
  return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace mft
