// Procedural training data: portrait-like foregrounds with soft boundaries
// and hair filaments, textured backgrounds, background-replacement
// augmentation, a label-preserving domain shift, and depth-to-trimap
// conversion.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "matteforge/image.hpp"
#include "matteforge/mattemath.hpp"
#include "matteforge/morphology.hpp"

namespace matteforge {

enum class DomainTag { source, shifted };

inline const char* to_string(DomainTag t) { return t == DomainTag::source ? "source" : "shifted"; }

/// image == composite(alpha_g, fg, bg) by construction.
struct SyntheticSample {
  Image image;
  Matte alpha_g;
  Image fg;
  Image bg;
  DomainTag domain_tag = DomainTag::source;
};

struct ForegroundConfig {
  double feather = 2.5;       // width in pixels of the soft body edge
  int hair_strands = 14;
  double hair_width = 1.1;    // filament half-width in pixels
  double hair_opacity_min = 0.35;
  double hair_opacity_max = 0.85;
};

struct Foreground {
  Image fg;
  Matte alpha_g;
};

namespace detail {

using Rgb = std::array<double, 3>;

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Approximate signed distance (pixels) to an axis-aligned ellipse.
inline double ellipse_distance(double x, double y, double cx, double cy, double ax, double ay) {
  const double dx = (x - cx) / ax;
  const double dy = (y - cy) / ay;
  return (std::sqrt(dx * dx + dy * dy) - 1.0) * std::min(ax, ay);
}

inline double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax;
  const double vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = px - (ax + t * vx);
  const double dy = py - (ay + t * vy);
  return std::sqrt(dx * dx + dy * dy);
}

/// Smooth lattice noise in [0,1], summed over octaves.
class ValueNoise {
 public:
  ValueNoise(std::mt19937_64& rng, int cells) : cells_(std::max(1, cells)) {
    lattice_.resize(static_cast<std::size_t>(cells_ + 1) * (cells_ + 1));
    for (double& v : lattice_) v = uniform(rng, 0.0, 1.0);
  }

  /// u, v in [0,1].
  [[nodiscard]] double at(double u, double v) const {
    const double fx = std::clamp(u, 0.0, 1.0) * cells_;
    const double fy = std::clamp(v, 0.0, 1.0) * cells_;
    const int x0 = std::min(static_cast<int>(fx), cells_ - 1);
    const int y0 = std::min(static_cast<int>(fy), cells_ - 1);
    const double tx = smooth(fx - x0);
    const double ty = smooth(fy - y0);
    auto l = [&](int x, int y) { return lattice_[static_cast<std::size_t>(y) * (cells_ + 1) + x]; };
    const double top = l(x0, y0) * (1 - tx) + l(x0 + 1, y0) * tx;
    const double bot = l(x0, y0 + 1) * (1 - tx) + l(x0 + 1, y0 + 1) * tx;
    return top * (1 - ty) + bot * ty;
  }

 private:
  static double smooth(double t) { return t * t * (3 - 2 * t); }
  int cells_;
  std::vector<double> lattice_;
};

inline double octave_noise(const std::vector<ValueNoise>& octaves, double u, double v) {
  double acc = 0;
  double amp = 1;
  double total = 0;
  for (const auto& o : octaves) {
    acc += amp * o.at(u, v);
    total += amp;
    amp *= 0.5;
  }
  return acc / total;
}

inline std::vector<ValueNoise> make_octaves(std::mt19937_64& rng, int base_cells, int count) {
  std::vector<ValueNoise> o;
  for (int i = 0; i < count; ++i) o.emplace_back(rng, base_cells << i);
  return o;
}

inline Rgb random_color(std::mt19937_64& rng, double lo = 0.0, double hi = 1.0) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

// Bilinear sample of plane c at continuous pixel coordinates (centres at +0.5).
inline double sample_bilinear(const std::vector<double>& plane, int h, int w, double y, double x) {
  y = std::clamp(y - 0.5, 0.0, static_cast<double>(h - 1));
  x = std::clamp(x - 0.5, 0.0, static_cast<double>(w - 1));
  const int y0 = static_cast<int>(y);
  const int x0 = static_cast<int>(x);
  const int y1 = std::min(y0 + 1, h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const double ty = y - y0;
  const double tx = x - x0;
  auto p = [&](int yy, int xx) { return plane[static_cast<std::size_t>(yy) * w + xx]; };
  return (p(y0, x0) * (1 - tx) + p(y0, x1) * tx) * (1 - ty) + (p(y1, x0) * (1 - tx) + p(y1, x1) * tx) * ty;
}

}  // namespace detail

/// Procedural portrait: union of a head and a torso ellipse with a feathered
/// edge, plus thin semi-transparent filaments growing from the top of the
/// head. Deterministic in (seed, size, cfg).
inline Foreground gen_foreground(std::uint64_t seed, int size, const ForegroundConfig& cfg = {}) {
  if (size <= 0 || size % 16 != 0) throw ConfigError("gen_foreground: size must be a positive multiple of 16");
  using detail::uniform;
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
  const double s = size;

  const double head_cx = s * uniform(rng, 0.38, 0.62);
  const double head_cy = s * uniform(rng, 0.27, 0.38);
  const double head_ax = s * uniform(rng, 0.12, 0.17);
  const double head_ay = head_ax * uniform(rng, 1.1, 1.3);
  const double torso_cx = head_cx + s * uniform(rng, -0.06, 0.06);
  const double torso_cy = s * uniform(rng, 0.88, 1.0);
  const double torso_ax = s * uniform(rng, 0.26, 0.38);
  const double torso_ay = s * uniform(rng, 0.30, 0.40);

  struct Strand {
    std::vector<std::pair<double, double>> pts;
    double opacity;
  };
  std::vector<Strand> strands;
  for (int i = 0; i < cfg.hair_strands; ++i) {
    const double theta = uniform(rng, -0.92 * std::numbers::pi, -0.08 * std::numbers::pi);
    double x = head_cx + head_ax * std::cos(theta);
    double y = head_cy + head_ay * std::sin(theta);
    double dir = theta + uniform(rng, -0.4, 0.4);
    const double curl = uniform(rng, -0.25, 0.25);
    const double length = s * uniform(rng, 0.07, 0.16);
    const int segments = 10;
    Strand st;
    st.opacity = uniform(rng, cfg.hair_opacity_min, cfg.hair_opacity_max);
    st.pts.emplace_back(x, y);
    for (int k = 0; k < segments; ++k) {
      x += std::cos(dir) * length / segments;
      y += std::sin(dir) * length / segments;
      dir += curl;
      st.pts.emplace_back(x, y);
    }
    strands.push_back(std::move(st));
  }

  const detail::Rgb skin = {uniform(rng, 0.55, 0.95), uniform(rng, 0.4, 0.75), uniform(rng, 0.3, 0.6)};
  const double hair_l = uniform(rng, 0.05, 0.6);
  const detail::Rgb hair = {hair_l * uniform(rng, 0.9, 1.3), hair_l * uniform(rng, 0.7, 1.0), hair_l * uniform(rng, 0.4, 0.8)};
  const detail::Rgb cloth = detail::random_color(rng, 0.05, 0.95);
  const auto texture = detail::make_octaves(rng, 4, 3);

  Foreground out{Image(3, size, size), Matte(size, size)};
  const double neck_y = head_cy + 0.85 * head_ay;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double px = x + 0.5;
      const double py = y + 0.5;
      const double d_head = detail::ellipse_distance(px, py, head_cx, head_cy, head_ax, head_ay);
      const double d_torso = detail::ellipse_distance(px, py, torso_cx, torso_cy, torso_ax, torso_ay);
      const double d = std::min(d_head, d_torso);
      double a = std::clamp(0.5 - d / cfg.feather, 0.0, 1.0);
      double hair_a = 0.0;
      for (const auto& st : strands) {
        double best = 1e9;
        for (std::size_t k = 0; k + 1 < st.pts.size(); ++k) {
          best = std::min(best, detail::segment_distance(px, py, st.pts[k].first, st.pts[k].second,
                                                         st.pts[k + 1].first, st.pts[k + 1].second));
        }
        hair_a = std::max(hair_a, st.opacity * std::max(0.0, 1.0 - best / cfg.hair_width));
      }
      a = std::max(a, hair_a);
      out.alpha_g.at(y, x) = a;

      detail::Rgb base;
      if (py > neck_y && d_torso < d_head) base = cloth;
      else if (d_head < -1.5 && py > head_cy - 0.45 * head_ay) base = skin;
      else base = hair;
      const double t = detail::octave_noise(texture, px / s, py / s) - 0.5;
      for (int c = 0; c < 3; ++c) out.fg.at(c, y, x) = detail::clamp01(base[static_cast<std::size_t>(c)] + 0.25 * t);
    }
  }
  return out;
}

/// Procedural background: a colour gradient, octave noise and random
/// rectangles/discs. Values in [0,1].
inline Image gen_background(std::uint64_t seed, int height, int width) {
  using detail::uniform;
  std::mt19937_64 rng(seed ^ 0xD1B54A32D192ED03ULL);
  const detail::Rgb c0 = detail::random_color(rng);
  const detail::Rgb c1 = detail::random_color(rng);
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const auto noise = detail::make_octaves(rng, static_cast<int>(uniform(rng, 2, 6)), 4);
  const double noise_amp = uniform(rng, 0.1, 0.5);
  const detail::Rgb tint = detail::random_color(rng, 0.3, 1.0);

  struct Shape2D {
    bool disc;
    double cx, cy, rx, ry;
    detail::Rgb color;
  };
  std::vector<Shape2D> clutter;
  const int n_shapes = static_cast<int>(uniform(rng, 0, 7));
  for (int i = 0; i < n_shapes; ++i) {
    clutter.push_back({uniform(rng, 0, 1) < 0.5, uniform(rng, 0, width), uniform(rng, 0, height),
                       uniform(rng, 0.04, 0.25) * width, uniform(rng, 0.04, 0.25) * height, detail::random_color(rng)});
  }

  Image bg(3, height, width);
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double u = (x + 0.5) / width;
      const double v = (y + 0.5) / height;
      const double t = std::clamp(0.5 + (u - 0.5) * ca + (v - 0.5) * sa, 0.0, 1.0);
      const double n = detail::octave_noise(noise, u, v) - 0.5;
      detail::Rgb col;
      for (std::size_t c = 0; c < 3; ++c) col[c] = c0[c] * (1 - t) + c1[c] * t + noise_amp * n * tint[c];
      for (const auto& sh : clutter) {
        const double dx = (x + 0.5 - sh.cx) / sh.rx;
        const double dy = (y + 0.5 - sh.cy) / sh.ry;
        const bool inside = sh.disc ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (inside) col = sh.color;
      }
      for (int c = 0; c < 3; ++c) bg.at(c, y, x) = detail::clamp01(col[static_cast<std::size_t>(c)]);
    }
  }
  return bg;
}

inline SyntheticSample make_sample(const Matte& alpha, const Image& fg, const Image& bg,
                                   DomainTag tag = DomainTag::source) {
  return SyntheticSample{composite(alpha, fg, bg), alpha, fg, bg, tag};
}

inline constexpr int kDefaultCrops = 5;
inline constexpr int kDefaultComposites = 10;

/// Background-replacement augmentation of one foreground: n_crops random
/// crops (resized back, over the first background of the pool) followed by
/// n_composites composites over randomly drawn pool backgrounds. With both
/// counts zero a single sample over the first background is returned.
inline std::vector<SyntheticSample> augment(const Image& fg, const Matte& alpha_g, const std::vector<Image>& backgrounds,
                                            int n_crops, int n_composites, std::uint64_t seed) {
  if (n_crops < 0 || n_composites < 0) throw ConfigError("augment: counts must be non-negative");
  if (n_composites > 0 && backgrounds.empty()) throw ConfigError("augment: background pool is empty");
  for (const Image& b : backgrounds) {
    if (!b.same_dims(fg) || b.channels != fg.channels) throw ShapeError("augment: background size differs from foreground");
  }
  const int h = fg.height;
  const int w = fg.width;
  const Image base_bg = backgrounds.empty() ? Image(fg.channels, h, w, 0.0) : backgrounds.front();
  std::mt19937_64 rng(seed ^ 0x2545F4914F6CDD1DULL);
  std::vector<SyntheticSample> out;

  if (n_crops == 0 && n_composites == 0) {
    out.push_back(make_sample(alpha_g, fg, base_bg));
    return out;
  }

  for (int i = 0; i < n_crops; ++i) {
    const double scale = detail::uniform(rng, 0.75, 1.0);
    const double ch = scale * h;
    const double cw = scale * w;
    const double oy = detail::uniform(rng, 0.0, h - ch);
    const double ox = detail::uniform(rng, 0.0, w - cw);
    Image cfg_fg(fg.channels, h, w);
    Image cbg(fg.channels, h, w);
    Matte calpha(h, w);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double sy = oy + (y + 0.5) * ch / h;
        const double sx = ox + (x + 0.5) * cw / w;
        calpha.at(y, x) = std::clamp(detail::sample_bilinear(alpha_g.values, h, w, sy, sx), 0.0, 1.0);
      }
    }
    for (int c = 0; c < fg.channels; ++c) {
      const auto off = static_cast<std::ptrdiff_t>(c * fg.plane());
      const std::vector<double> fplane(fg.data.begin() + off, fg.data.begin() + off + static_cast<std::ptrdiff_t>(fg.plane()));
      const std::vector<double> bplane(base_bg.data.begin() + off,
                                       base_bg.data.begin() + off + static_cast<std::ptrdiff_t>(fg.plane()));
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const double sy = oy + (y + 0.5) * ch / h;
          const double sx = ox + (x + 0.5) * cw / w;
          cfg_fg.at(c, y, x) = detail::sample_bilinear(fplane, h, w, sy, sx);
          cbg.at(c, y, x) = detail::sample_bilinear(bplane, h, w, sy, sx);
        }
      }
    }
    out.push_back(make_sample(calpha, cfg_fg, cbg));
  }
  for (int i = 0; i < n_composites; ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, backgrounds.size() - 1);
    out.push_back(make_sample(alpha_g, fg, backgrounds[pick(rng)]));
  }
  return out;
}

inline std::vector<SyntheticSample> augment(const Image& fg, const Matte& alpha_g, const std::vector<Image>& backgrounds,
                                            std::uint64_t seed) {
  return augment(fg, alpha_g, backgrounds, kDefaultCrops, kDefaultComposites, seed);
}

struct DatasetConfig {
  int count = 200;
  int size = 64;
  int crops_per_foreground = 1;
  int composites_per_foreground = 4;
  int background_pool = 64;
  std::uint64_t seed = 0;
};

inline std::vector<Image> background_pool(const DatasetConfig& cfg) {
  std::vector<Image> pool;
  for (int i = 0; i < std::max(1, cfg.background_pool); ++i) {
    pool.push_back(gen_background(cfg.seed * 1000003ULL + 7919ULL * static_cast<std::uint64_t>(i) + 1, cfg.size, cfg.size));
  }
  return pool;
}

/// `count` samples from as many foregrounds as needed, each augmented with
/// the configured crop/composite counts over a shared background pool
/// (size x size RGB images).
inline std::vector<SyntheticSample> make_dataset(const DatasetConfig& cfg, const std::vector<Image>& pool) {
  if (cfg.count <= 0) throw ConfigError("make_dataset: count must be positive");
  if (pool.empty()) throw ConfigError("make_dataset: background pool is empty");
  std::vector<SyntheticSample> out;
  std::uint64_t fg_index = 0;
  while (static_cast<int>(out.size()) < cfg.count) {
    const std::uint64_t fseed = cfg.seed * 1000003ULL + 104729ULL * fg_index + 17;
    const Foreground f = gen_foreground(fseed, cfg.size);
    // Each foreground starts from its own slice of the pool.
    std::vector<Image> local(pool.begin() + static_cast<std::ptrdiff_t>(fg_index % pool.size()), pool.end());
    local.insert(local.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(fg_index % pool.size()));
    for (auto& s : augment(f.fg, f.alpha_g, local, cfg.crops_per_foreground, cfg.composites_per_foreground, fseed)) {
      if (static_cast<int>(out.size()) == cfg.count) break;
      out.push_back(std::move(s));
    }
    ++fg_index;
  }
  return out;
}

inline std::vector<SyntheticSample> make_dataset(const DatasetConfig& cfg) {
  return make_dataset(cfg, background_pool(cfg));
}

// ---------------------------------------------------------------------------
// domain shift
// ---------------------------------------------------------------------------

/// strength 0 is the identity; 1 applies the full shift.
struct ShiftConfig {
  double strength = 1.0;
  double contrast_drop = 0.35;
  double brightness = 0.12;
  double gamma = 0.3;
  double texture_amp = 0.2;
  double blur_sigma = 1.0;
};

/// Label-preserving capture-condition shift: a global tone curve on fg and
/// bg, correlated texture and mild defocus on the background, recomposited
/// with the original matte.
inline SyntheticSample domain_shift(const SyntheticSample& sample, std::uint64_t seed, const ShiftConfig& cfg = {}) {
  SyntheticSample out = sample;
  out.domain_tag = DomainTag::shifted;
  if (cfg.strength == 0.0) return out;
  const double k = cfg.strength;
  const double contrast = 1.0 - cfg.contrast_drop * k;
  const double bright = cfg.brightness * k;
  const double gamma = 1.0 + cfg.gamma * k;
  auto curve = [&](double v) { return std::pow(detail::clamp01((v - 0.5) * contrast + 0.5 + bright), gamma); };

  std::mt19937_64 rng(seed ^ 0x94D049BB133111EBULL);
  const auto noise = detail::make_octaves(rng, 3, 3);
  const detail::Rgb tint = detail::random_color(rng, 0.5, 1.0);
  const int h = sample.bg.height;
  const int w = sample.bg.width;
  Image bg = sample.bg;
  for (int c = 0; c < bg.channels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double n = detail::octave_noise(noise, (x + 0.5) / w, (y + 0.5) / h) - 0.5;
        bg.at(c, y, x) = detail::clamp01(bg.at(c, y, x) + cfg.texture_amp * k * n * tint[static_cast<std::size_t>(c % 3)]);
      }
    }
  }
  if (cfg.blur_sigma * k > 0) {
    Graph<double> g(false);
    const Tensor<double> blurred = blur2d(g, to_tensor<double>(bg), gaussian_kernel<double>(3, cfg.blur_sigma * k));
    bg = to_image(blurred);
  }
  for (double& v : bg.data) v = curve(v);
  Image fg = sample.fg;
  for (double& v : fg.data) v = curve(v);
  out.fg = std::move(fg);
  out.bg = std::move(bg);
  out.image = composite(out.alpha_g, out.fg, out.bg);
  return out;
}

// ---------------------------------------------------------------------------
// depth -> trimap
// ---------------------------------------------------------------------------

/// Splits the reversed depth (far_plane - depth, floored at 0) at `threshold`
/// into a foreground mask fg0, then labels erode(fg0) as 1, the complement
/// of dilate(fg0) as 0 and the band between as 0.5. Everything closer than
/// the threshold is foreground, including objects in front of the subject.
inline Trimap depth_to_trimap(const DepthMap& depth, double threshold, int kernel, int iterations,
                              double far_plane = 1.0) {
  check_kernel(kernel);
  if (iterations < 1) throw ConfigError("depth_to_trimap: iterations must be >= 1");
  validate(depth);
  Mask fg0(depth.height, depth.width);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const double reversed = std::max(0.0, far_plane - depth.values[i]);
    fg0.values[i] = reversed >= threshold ? 1.0 : 0.0;
  }
  const Mask inner = erode(fg0, kernel, iterations);
  const Mask outer = dilate(fg0, kernel, iterations);
  Trimap t(depth.height, depth.width);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (inner.values[i] > 0) t.values[i] = 1.0;
    else if (outer.values[i] == 0) t.values[i] = 0.0;
    else t.values[i] = 0.5;
  }
  return t;
}

}  // namespace matteforge
