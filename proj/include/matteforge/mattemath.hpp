// Matting math: compositing, the semantic thumbnail operator G, transition
// masks, and the supervised and self-supervised loss stack.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "matteforge/image.hpp"
#include "matteforge/morphology.hpp"
#include "matteforge/ops.hpp"
#include "matteforge/outputs.hpp"

namespace matteforge {

// ---------------------------------------------------------------------------
// configuration
// ---------------------------------------------------------------------------

struct LossWeights {
  double lambda_s = 1.0;
  double lambda_d = 10.0;
  double lambda_alpha = 1.0;

  void validate() const {
    if (!(lambda_s > 0) || !(lambda_d > 0) || !(lambda_alpha > 0)) {
      throw ConfigError("loss weights must all be positive");
    }
  }
};

/// Which supervised terms contribute to the total; used for ablations.
struct LossTerms {
  bool semantic = true;
  bool detail = true;
};

/// G: average-pool by `factor`, then a normalized Gaussian blur.
struct GConfig {
  int factor = 16;
  int kernel = 3;
  double sigma = 1.0;
};

/// Transition band construction. The SOC bounds select pixels of a predicted
/// matte counted as transition regardless of the morphological band.
struct MaskConfig {
  int kernel = 3;
  int iterations = 2;
  double soc_low = 0.05;
  double soc_high = 0.95;
};

template <class T>
std::vector<T> gaussian_kernel(int size, double sigma) {
  if (size < 1 || size % 2 == 0) throw ConfigError("gaussian kernel size must be odd, got " + std::to_string(size));
  if (!(sigma > 0)) throw ConfigError("gaussian sigma must be positive");
  const int r = size / 2;
  std::vector<double> k(static_cast<std::size_t>(size) * size);
  double total = 0;
  for (int y = -r; y <= r; ++y) {
    for (int x = -r; x <= r; ++x) {
      const double v = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
      k[static_cast<std::size_t>((y + r) * size + x + r)] = v;
      total += v;
    }
  }
  std::vector<T> out(k.size());
  for (std::size_t i = 0; i < k.size(); ++i) out[i] = static_cast<T>(k[i] / total);
  return out;
}

// ---------------------------------------------------------------------------
// compositing
// ---------------------------------------------------------------------------

/// I = alpha * F + (1 - alpha) * B, per pixel and channel.
inline Image composite(const Matte& alpha, const Image& fg, const Image& bg) {
  if (alpha.height != fg.height || alpha.width != fg.width || !fg.same_dims(bg) || fg.channels != bg.channels) {
    throw ShapeError("composite: dimension mismatch between alpha, foreground and background");
  }
  Image out(fg.channels, fg.height, fg.width);
  for (int c = 0; c < fg.channels; ++c) {
    for (int y = 0; y < fg.height; ++y) {
      for (int x = 0; x < fg.width; ++x) {
        const double a = alpha.at(y, x);
        out.at(c, y, x) = a * fg.at(c, y, x) + (1.0 - a) * bg.at(c, y, x);
      }
    }
  }
  return out;
}

/// Differentiable composite: bg + alpha * (fg - bg). alpha is (n,1,h,w).
template <class T>
Tensor<T> composite(Graph<T>& g, const Tensor<T>& alpha, const Tensor<T>& fg, const Tensor<T>& bg) {
  return add(g, bg, mul(g, sub(g, fg, bg), alpha));
}

// ---------------------------------------------------------------------------
// G operator
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> g_operator(Graph<T>& g, const Tensor<T>& alpha, const GConfig& cfg = {}) {
  const Shape& s = alpha.shape();
  const auto f = static_cast<std::size_t>(cfg.factor);
  if (s.h % f != 0 || s.w % f != 0) {
    throw ShapeError("g_operator: dims " + s.str() + " not divisible by " + std::to_string(cfg.factor));
  }
  return blur2d(g, downsample_avg(g, alpha, cfg.factor), gaussian_kernel<T>(cfg.kernel, cfg.sigma));
}

inline Matte g_operator(const Matte& alpha, const GConfig& cfg = {}) {
  Graph<double> g(false);
  return to_grid<MatteTag>(g_operator(g, to_tensor<double>(alpha), cfg));
}

// ---------------------------------------------------------------------------
// transition masks
// ---------------------------------------------------------------------------

/// Band dilate(bin) - erode(bin) of the matte thresholded at 0.5, plus every
/// pixel with 0 < alpha < 1.
inline Mask transition_mask(const Matte& alpha_g, int kernel, int iterations = 1) {
  if (kernel < 3 || kernel % 2 == 0) {
    throw ConfigError("transition_mask: kernel must be odd and >= 3, got " + std::to_string(kernel));
  }
  Mask m = morphological_band(binarize(alpha_g, 0.5), kernel, iterations);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double a = alpha_g.values[i];
    if (a > 0.0 && a < 1.0) m.values[i] = 1.0;
  }
  return m;
}

/// Transition region of a predicted matte: the morphological band of its 0.5
/// threshold plus pixels strictly between the SOC bounds.
inline Mask predicted_transition_mask(const Matte& alpha_p, const MaskConfig& cfg = {}) {
  Mask m = morphological_band(binarize(alpha_p, 0.5), cfg.kernel, cfg.iterations);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double a = alpha_p.values[i];
    if (a > cfg.soc_low && a < cfg.soc_high) m.values[i] = 1.0;
  }
  return m;
}

/// Per-sample transition masks of a (n,1,h,w) ground-truth batch.
template <class T>
Tensor<T> transition_mask(const Tensor<T>& alpha_g, const MaskConfig& cfg = {}) {
  std::vector<Mask> masks;
  for (std::size_t n = 0; n < alpha_g.shape().n; ++n) {
    masks.push_back(transition_mask(to_grid<MatteTag>(alpha_g, n), cfg.kernel, cfg.iterations));
  }
  return to_tensor<T>(masks);
}

/// Per-sample transition masks of a (n,1,h,w) prediction; values only.
template <class T>
Tensor<T> predicted_transition_mask(const Tensor<T>& alpha_p, const MaskConfig& cfg = {}) {
  std::vector<Mask> masks;
  for (std::size_t n = 0; n < alpha_p.shape().n; ++n) {
    masks.push_back(predicted_transition_mask(to_grid<MatteTag>(alpha_p, n), cfg));
  }
  return to_tensor<T>(masks);
}

// ---------------------------------------------------------------------------
// supervised losses
// ---------------------------------------------------------------------------

/// Ground truth for one batch. m_d is the constant transition mask of alpha_g.
template <class T>
struct Targets {
  Tensor<T> alpha_g;
  Tensor<T> image;
  Tensor<T> fg;
  Tensor<T> bg;
  Tensor<T> m_d;
};

template <class T>
Targets<T> make_targets(Tensor<T> alpha_g, Tensor<T> image, Tensor<T> fg, Tensor<T> bg, const MaskConfig& cfg = {}) {
  Tensor<T> m_d = transition_mask(alpha_g, cfg);
  return Targets<T>{std::move(alpha_g), std::move(image), std::move(fg), std::move(bg), std::move(m_d)};
}

/// (1/2) mean((s_p - G(alpha_g))^2)
template <class T>
Tensor<T> loss_semantic(Graph<T>& g, const Tensor<T>& s_p, const Tensor<T>& alpha_g, const GConfig& cfg = {}) {
  Graph<T> constant(false);
  return l2_mean_half(g, s_p, g_operator(constant, alpha_g, cfg));
}

template <class T>
struct MaskedLoss {
  Tensor<T> value;
  bool empty_mask = false;
};

/// Mean of |d_p - alpha_g| over the pixels where m_d = 1; zero, flagged, when
/// the mask is empty.
template <class T>
MaskedLoss<T> loss_detail(Graph<T>& g, const Tensor<T>& d_p, const Tensor<T>& alpha_g, const Tensor<T>& m_d) {
  bool empty = true;
  for (T v : m_d.data()) {
    if (v != T(0)) {
      empty = false;
      break;
    }
  }
  return {masked_l1_mean(g, d_p, alpha_g, m_d), empty};
}

/// mean|alpha_p - alpha_g| + mean|composite(alpha_p, fg, bg) - image|
template <class T>
Tensor<T> loss_alpha(Graph<T>& g, const Tensor<T>& alpha_p, const Tensor<T>& alpha_g, const Tensor<T>& image,
                     const Tensor<T>& fg, const Tensor<T>& bg) {
  Tensor<T> matte_term = l1_mean(g, alpha_p, alpha_g);
  Tensor<T> comp_term = l1_mean(g, composite(g, alpha_p, fg, bg), image);
  return add(g, matte_term, comp_term);
}

template <class T>
struct LossBreakdown {
  Tensor<T> total;
  Tensor<T> semantic;  // undefined when the term is disabled
  Tensor<T> detail;
  Tensor<T> alpha;
  bool empty_mask = false;
};

/// lambda_s L_s + lambda_d L_d + lambda_alpha L_alpha
template <class T>
LossBreakdown<T> loss_total(Graph<T>& g, const ModelOutputs<T>& out, const Targets<T>& tg,
                            const LossWeights& weights = {}, const LossTerms& terms = {},
                            const GConfig& gcfg = {}) {
  LossBreakdown<T> r;
  r.alpha = loss_alpha(g, out.alpha_p, tg.alpha_g, tg.image, tg.fg, tg.bg);
  r.total = scale(g, r.alpha, static_cast<T>(weights.lambda_alpha));
  if (terms.semantic) {
    r.semantic = loss_semantic(g, out.s_p, tg.alpha_g, gcfg);
    r.total = add(g, r.total, scale(g, r.semantic, static_cast<T>(weights.lambda_s)));
  }
  if (terms.detail) {
    auto d = loss_detail(g, out.d_p, tg.alpha_g, tg.m_d);
    r.detail = d.value;
    r.empty_mask = d.empty_mask;
    r.total = add(g, r.total, scale(g, r.detail, static_cast<T>(weights.lambda_d)));
  }
  return r;
}

// ---------------------------------------------------------------------------
// self-supervised (SOC) losses
// ---------------------------------------------------------------------------

template <class T>
struct SocLoss {
  Tensor<T> total;
  Tensor<T> semantic;  // (1/2) mean((G(alpha) - s)^2)
  Tensor<T> detail;    // masked mean |alpha - d|
};

/// Consistency between the fused, semantic and detail predictions of one model
/// on unlabeled input. m_d_pred is the constant transition mask of alpha_p.
template <class T>
SocLoss<T> loss_soc(Graph<T>& g, const ModelOutputs<T>& out, const Tensor<T>& m_d_pred, const GConfig& gcfg = {}) {
  SocLoss<T> r;
  r.semantic = l2_mean_half(g, g_operator(g, out.alpha_p, gcfg), out.s_p);
  r.detail = masked_l1_mean(g, out.alpha_p, out.d_p, m_d_pred);
  r.total = add(g, r.semantic, r.detail);
  return r;
}

/// Masked mean |d_p - d_p_frozen|; the frozen side carries no gradient.
template <class T>
Tensor<T> loss_detail_anchor(Graph<T>& g, const Tensor<T>& d_p, const Tensor<T>& d_p_frozen, const Tensor<T>& m_d_pred) {
  return masked_l1_mean(g, d_p, d_p_frozen.clone(), m_d_pred);
}

}  // namespace matteforge
