// Planar images and single-channel grids (mattes, trimaps, depth maps, masks).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "matteforge/tensor.hpp"

namespace matteforge {

/// Planar (channel-major) image with values nominally in [0,1].
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int c, int h, int w, double fill = 0.0)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  [[nodiscard]] std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  double& at(int c, int y, int x) { return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] double at(int c, int y, int x) const {
    return data[static_cast<std::size_t>(c) * plane() + static_cast<std::size_t>(y) * width + x];
  }
  [[nodiscard]] bool same_dims(const Image& o) const { return height == o.height && width == o.width; }

  friend bool operator==(const Image&, const Image&) = default;
};

struct MatteTag {};
struct TrimapTag {};
struct DepthTag {};
struct MaskTag {};

/// Single-channel grid; Tag distinguishes mattes, trimaps, depth maps and
/// binary masks at the type level.
template <class Tag>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(int h, int w, double fill = 0.0) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  [[nodiscard]] std::size_t size() const { return values.size(); }
  double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

  template <class Other>
  [[nodiscard]] bool same_dims(const Grid<Other>& o) const {
    return height == o.height && width == o.width;
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using Matte = Grid<MatteTag>;        // alpha in [0,1]
using Trimap = Grid<TrimapTag>;      // {0, 0.5, 1}
using DepthMap = Grid<DepthTag>;     // >= 0, smaller is closer
using Mask = Grid<MaskTag>;          // {0, 1}

template <class To, class From>
Grid<To> retag(const Grid<From>& g) {
  Grid<To> out;
  out.height = g.height;
  out.width = g.width;
  out.values = g.values;
  return out;
}

inline void validate(const Matte& m) {
  for (double v : m.values) {
    if (!(v >= 0.0 && v <= 1.0)) throw ShapeError("matte value " + std::to_string(v) + " outside [0,1]");
  }
}

inline void validate(const Trimap& t) {
  for (double v : t.values) {
    if (v != 0.0 && v != 0.5 && v != 1.0) throw ShapeError("trimap value " + std::to_string(v) + " not in {0,0.5,1}");
  }
}

inline void validate(const DepthMap& d) {
  for (double v : d.values) {
    if (!(v >= 0.0)) throw ShapeError("depth value " + std::to_string(v) + " is negative or NaN");
  }
}

inline Matte clamp01(Matte m) {
  for (double& v : m.values) v = std::clamp(v, 0.0, 1.0);
  return m;
}

// ---------------------------------------------------------------------------
// tensor conversion
// ---------------------------------------------------------------------------

template <class T, class Tag>
Tensor<T> to_tensor(const std::vector<Grid<Tag>>& grids) {
  if (grids.empty()) throw ShapeError("to_tensor: empty batch");
  const auto h = static_cast<std::size_t>(grids.front().height);
  const auto w = static_cast<std::size_t>(grids.front().width);
  Tensor<T> t(Shape{grids.size(), 1, h, w});
  for (std::size_t n = 0; n < grids.size(); ++n) {
    if (static_cast<std::size_t>(grids[n].height) != h || static_cast<std::size_t>(grids[n].width) != w) {
      throw ShapeError("to_tensor: grids of different sizes in one batch");
    }
    std::transform(grids[n].values.begin(), grids[n].values.end(), t.data().begin() + n * h * w,
                   [](double v) { return static_cast<T>(v); });
  }
  return t;
}

template <class T, class Tag>
Tensor<T> to_tensor(const Grid<Tag>& grid) {
  return to_tensor<T>(std::vector<Grid<Tag>>{grid});
}

template <class T>
Tensor<T> to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw ShapeError("to_tensor: empty batch");
  const Image& f = images.front();
  const Shape s{images.size(), static_cast<std::size_t>(f.channels), static_cast<std::size_t>(f.height),
                static_cast<std::size_t>(f.width)};
  Tensor<T> t(s);
  const std::size_t per = s.c * s.plane();
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n].channels != f.channels || !images[n].same_dims(f)) {
      throw ShapeError("to_tensor: images of different sizes in one batch");
    }
    std::transform(images[n].data.begin(), images[n].data.end(), t.data().begin() + n * per,
                   [](double v) { return static_cast<T>(v); });
  }
  return t;
}

template <class T>
Tensor<T> to_tensor(const Image& image) {
  return to_tensor<T>(std::vector<Image>{image});
}

/// Extracts channel 0 of sample n as a grid.
template <class Tag = MatteTag, class T>
Grid<Tag> to_grid(const Tensor<T>& t, std::size_t n = 0, std::size_t c = 0) {
  const Shape& s = t.shape();
  Grid<Tag> g(static_cast<int>(s.h), static_cast<int>(s.w));
  const std::size_t off = t.index(n, c, 0, 0);
  for (std::size_t i = 0; i < s.plane(); ++i) g.values[i] = static_cast<double>(t.data()[off + i]);
  return g;
}

template <class T>
Image to_image(const Tensor<T>& t, std::size_t n = 0) {
  const Shape& s = t.shape();
  Image img(static_cast<int>(s.c), static_cast<int>(s.h), static_cast<int>(s.w));
  const std::size_t off = t.index(n, 0, 0, 0);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<double>(t.data()[off + i]);
  return img;
}

}  // namespace matteforge
