// Binary morphology on masks with square structuring elements.
//
// Pixels outside the image are excluded from the window, so an all-foreground
// mask is a fixed point of both dilation and erosion.
#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "matteforge/image.hpp"

namespace matteforge {

inline void check_kernel(int kernel) {
  if (kernel < 1 || kernel % 2 == 0) {
    throw ConfigError("morphology kernel must be odd and positive, got " + std::to_string(kernel));
  }
}

namespace detail {

// One pass of a separable window max (dilate) or min (erode).
inline Mask window_extreme(const Mask& in, int kernel, bool take_max) {
  const int r = kernel / 2;
  const int h = in.height;
  const int w = in.width;
  Mask rows(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = in.at(y, x);
      for (int dx = std::max(0, x - r); dx <= std::min(w - 1, x + r); ++dx) {
        v = take_max ? std::max(v, in.at(y, dx)) : std::min(v, in.at(y, dx));
      }
      rows.at(y, x) = v;
    }
  }
  Mask out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double v = rows.at(y, x);
      for (int dy = std::max(0, y - r); dy <= std::min(h - 1, y + r); ++dy) {
        v = take_max ? std::max(v, rows.at(dy, x)) : std::min(v, rows.at(dy, x));
      }
      out.at(y, x) = v;
    }
  }
  return out;
}

}  // namespace detail

inline Mask dilate(const Mask& m, int kernel, int iterations = 1) {
  check_kernel(kernel);
  Mask out = m;
  for (int i = 0; i < iterations; ++i) out = detail::window_extreme(out, kernel, true);
  return out;
}

inline Mask erode(const Mask& m, int kernel, int iterations = 1) {
  check_kernel(kernel);
  Mask out = m;
  for (int i = 0; i < iterations; ++i) out = detail::window_extreme(out, kernel, false);
  return out;
}

/// 1 where value >= threshold.
template <class Tag>
Mask binarize(const Grid<Tag>& g, double threshold = 0.5) {
  Mask m(g.height, g.width);
  for (std::size_t i = 0; i < g.size(); ++i) m.values[i] = g.values[i] >= threshold ? 1.0 : 0.0;
  return m;
}

/// dilate(m) AND NOT erode(m).
inline Mask morphological_band(const Mask& m, int kernel, int iterations) {
  const Mask d = dilate(m, kernel, iterations);
  const Mask e = erode(m, kernel, iterations);
  Mask band(m.height, m.width);
  for (std::size_t i = 0; i < m.size(); ++i) band.values[i] = (d.values[i] > 0.0 && e.values[i] == 0.0) ? 1.0 : 0.0;
  return band;
}

}  // namespace matteforge
