// Finite-difference verification of every differentiable operation, the SE
// block, the loss stack and a full small network.
//
// Each case is a scalar function of some input tensors; non-scalar op outputs
// are projected onto fixed pseudo-random weights. Analytic gradients come from
// the tape at the requested precision; numeric gradients are central
// differences of the double-precision function.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "matteforge/data.hpp"
#include "matteforge/mattemath.hpp"
#include "matteforge/net.hpp"
#include "matteforge/ops.hpp"

namespace matteforge {

enum class Precision { single, double_ };

struct GradcheckOptions {
  int seeds = 20;
  std::uint64_t base_seed = 0;
  double step = 1e-6;
  // |analytic - numeric| / max(|analytic|, |numeric|, floor); the floor keeps
  // near-zero gradients from turning rounding noise into large ratios.
  double denominator_floor = 1e-3;
  double tolerance = 1e-5;
  Precision precision = Precision::double_;

  /// Defaults per precision: 1e-5 in double, 1e-3 in single.
  static GradcheckOptions for_precision(Precision p) {
    GradcheckOptions o;
    o.precision = p;
    o.tolerance = p == Precision::double_ ? 1e-5 : 1e-3;
    return o;
  }
};

struct GradcheckResult {
  std::string name;
  double max_rel_err = 0;
  double max_abs_err = 0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates straddling a ReLU kink (network cases only)
  bool passed = true;
};

/// Largest share of coordinates a case may skip as non-differentiable.
inline constexpr double kMaxSkippedFraction = 0.1;

using Inputs = std::vector<Tensor<double>>;

struct GradcheckCase {
  std::string name;
  std::function<Inputs(std::mt19937_64&)> inputs;
  std::function<double(const Inputs&)> value;
  // Gradients w.r.t. every input that requires one, in input order.
  std::function<std::vector<std::vector<double>>(const Inputs&, Precision)> gradient;
  std::size_t max_coords = 0;  // coordinates checked per input; 0 = all
  double step = 0;             // overrides GradcheckOptions::step when positive
  // Piecewise-linear functions have points where no derivative exists. With
  // this set, a coordinate whose central difference changes between step h
  // and h/2 by more than a quarter of the tolerance is counted as skipped
  // rather than compared.
  bool skip_kinks = false;
};

namespace detail {

template <class T>
std::vector<T> projection_weights(std::size_t n) {
  std::mt19937_64 rng(0x9E3779B97F4A7C15ULL);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<T> w(n);
  for (T& v : w) v = static_cast<T>(d(rng));
  return w;
}

template <class T>
Tensor<T> scalarize(Graph<T>& g, const Tensor<T>& out) {
  if (out.shape().is_scalar()) return out;
  return weighted_sum(g, out, projection_weights<T>(out.numel()));
}

template <class T>
std::vector<Tensor<T>> convert_inputs(const Inputs& in) {
  std::vector<Tensor<T>> out;
  for (const auto& t : in) {
    if (!t.defined()) {
      out.emplace_back();
      continue;
    }
    Tensor<T> c = t.template cast<T>();
    c.set_requires_grad(t.requires_grad());
    out.push_back(std::move(c));
  }
  return out;
}

template <class T>
std::vector<std::vector<double>> collect_grads(const std::vector<Tensor<T>>& ts) {
  std::vector<std::vector<double>> grads;
  for (const auto& t : ts) {
    if (!t.defined() || !t.requires_grad()) continue;
    if (t.has_grad()) {
      grads.emplace_back(t.grad().begin(), t.grad().end());
    } else {
      grads.emplace_back(t.numel(), 0.0);
    }
  }
  return grads;
}

inline Tensor<double> random_tensor(std::mt19937_64& rng, Shape s, double lo, double hi, bool requires_grad) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(s.numel());
  for (double& x : v) x = d(rng);
  return Tensor<double>::from(s, std::move(v), requires_grad);
}

// Values bounded away from 0 so kinks (relu, |.|) stay outside the FD stencil.
inline Tensor<double> away_from_zero(std::mt19937_64& rng, Shape s, bool requires_grad) {
  std::uniform_real_distribution<double> mag(0.05, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> v(s.numel());
  for (double& x : v) x = sign(rng) ? mag(rng) : -mag(rng);
  return Tensor<double>::from(s, std::move(v), requires_grad);
}

inline Tensor<double> random_mask(std::mt19937_64& rng, Shape s) {
  std::bernoulli_distribution on(0.5);
  std::vector<double> v(s.numel());
  for (double& x : v) x = on(rng) ? 1.0 : 0.0;
  v[0] = 1.0;
  return Tensor<double>::from(s, std::move(v));
}

// Soft matte: a disc with a linear ramp, so the transition band is non-empty.
inline Tensor<double> soft_matte(std::mt19937_64& rng, std::size_t n, std::size_t h, std::size_t w) {
  std::uniform_real_distribution<double> centre(0.35, 0.65);
  std::uniform_real_distribution<double> radius(0.2, 0.35);
  Tensor<double> t(Shape{n, 1, h, w});
  for (std::size_t b = 0; b < n; ++b) {
    const double cy = centre(rng) * static_cast<double>(h);
    const double cx = centre(rng) * static_cast<double>(w);
    const double r = radius(rng) * static_cast<double>(std::min(h, w));
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const double d = std::hypot(static_cast<double>(y) + 0.5 - cy, static_cast<double>(x) + 0.5 - cx);
        t.at(b, 0, y, x) = std::clamp((r - d) / 3.0 + 0.5, 0.0, 1.0);
      }
    }
  }
  return t;
}

}  // namespace detail

/// Wraps a generic callable `f(Graph<T>&, const std::vector<Tensor<T>>&)`
/// into a case evaluated at either precision.
template <class F>
GradcheckCase make_case(std::string name, std::function<Inputs(std::mt19937_64&)> inputs, F f,
                        std::size_t max_coords = 0) {
  GradcheckCase c;
  c.name = std::move(name);
  c.inputs = std::move(inputs);
  c.max_coords = max_coords;
  c.value = [f](const Inputs& in) {
    Graph<double> g(false);
    const Tensor<double> out = f(g, in);
    const auto w = detail::projection_weights<double>(out.numel());
    if (out.shape().is_scalar()) return out.item();
    double acc = 0;
    for (std::size_t i = 0; i < out.numel(); ++i) acc += w[i] * out.data()[i];
    return acc;
  };
  c.gradient = [f](const Inputs& in, Precision p) {
    auto run = [&](auto tag) {
      using T = decltype(tag);
      auto ts = detail::convert_inputs<T>(in);
      Graph<T> g;
      Tensor<T> loss = detail::scalarize(g, f(g, ts));
      g.backward(loss);
      return detail::collect_grads(ts);
    };
    return p == Precision::double_ ? run(double{}) : run(float{});
  };
  return c;
}

/// Runs one case for one seed and reports the worst coordinate.
inline GradcheckResult check_case(const GradcheckCase& c, std::uint64_t seed, const GradcheckOptions& opt) {
  std::mt19937_64 rng(seed * 0x2545F4914F6CDD1DULL + 0x1234567ULL);
  Inputs in = c.inputs(rng);
  const auto analytic = c.gradient(in, opt.precision);
  GradcheckResult r;
  r.name = c.name;
  std::size_t gi = 0;
  for (auto& t : in) {
    if (!t.defined() || !t.requires_grad()) continue;
    const std::vector<double>& ga = analytic.at(gi++);
    std::vector<std::size_t> coords(t.numel());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (c.max_coords > 0 && coords.size() > c.max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(c.max_coords);
    }
    auto data = t.data();
    const double h = c.step > 0 ? c.step : opt.step;
    auto central = [&](std::size_t j, double step) {
      const double orig = data[j];
      data[j] = orig + step;
      const double fp = c.value(in);
      data[j] = orig - step;
      const double fm = c.value(in);
      data[j] = orig;
      return (fp - fm) / (2 * step);
    };
    for (std::size_t j : coords) {
      const double numeric = central(j, h);
      const double scale = std::max({std::abs(ga[j]), std::abs(numeric), opt.denominator_floor});
      if (c.skip_kinks && std::abs(central(j, h / 2) - numeric) > 0.25 * opt.tolerance * scale) {
        ++r.skipped;
        continue;
      }
      const double abs_err = std::abs(ga[j] - numeric);
      r.max_abs_err = std::max(r.max_abs_err, abs_err);
      r.max_rel_err = std::max(r.max_rel_err, abs_err / scale);
      ++r.checked;
    }
  }
  r.passed = r.max_rel_err < opt.tolerance &&
             static_cast<double>(r.skipped) <= kMaxSkippedFraction * static_cast<double>(r.checked + r.skipped);
  return r;
}

/// Worst result of a case across opt.seeds seeds.
inline GradcheckResult check_case(const GradcheckCase& c, const GradcheckOptions& opt) {
  GradcheckResult worst;
  worst.name = c.name;
  for (int s = 0; s < opt.seeds; ++s) {
    const GradcheckResult r = check_case(c, opt.base_seed + static_cast<std::uint64_t>(s), opt);
    worst.max_rel_err = std::max(worst.max_rel_err, r.max_rel_err);
    worst.max_abs_err = std::max(worst.max_abs_err, r.max_abs_err);
    worst.checked += r.checked;
    worst.skipped += r.skipped;
  }
  worst.passed = worst.max_rel_err < opt.tolerance && static_cast<double>(worst.skipped) <=
                                                          kMaxSkippedFraction * static_cast<double>(worst.checked + worst.skipped);
  return worst;
}

/// Full network under the supervised loss, sampling coordinates of every
/// parameter tensor.
inline GradcheckCase network_case(std::string name, ModelConfig cfg, std::size_t coords_per_tensor) {
  struct State {
    std::optional<Model<double>> model;
    Tensor<double> image;
    Targets<double> targets;
  };
  auto st = std::make_shared<State>();
  GradcheckCase c;
  c.name = std::move(name);
  c.max_coords = coords_per_tensor;
  c.step = 1e-5;
  c.skip_kinks = true;
  c.inputs = [st, cfg](std::mt19937_64& rng) {
    st->model = Model<double>::build(cfg, rng());
    // Zero biases put many ReLU inputs exactly on the kink; move them off it.
    std::uniform_real_distribution<double> bias(-0.2, 0.2);
    for (auto& p : st->model->parameters()) {
      if (p.name.ends_with(".bias")) {
        for (double& v : p.tensor.data()) v = bias(rng);
      }
    }
    DatasetConfig dc;
    dc.count = 2;
    dc.size = cfg.input_height;
    dc.background_pool = 2;
    dc.seed = rng();
    const auto data = make_dataset(dc);
    std::vector<Matte> alphas;
    std::vector<Image> images, fgs, bgs;
    for (const auto& s : data) {
      alphas.push_back(s.alpha_g);
      images.push_back(s.image);
      fgs.push_back(s.fg);
      bgs.push_back(s.bg);
    }
    st->image = to_tensor<double>(images);
    st->targets = make_targets(to_tensor<double>(alphas), st->image, to_tensor<double>(fgs), to_tensor<double>(bgs));
    Inputs params;
    for (auto& p : st->model->parameters()) params.push_back(p.tensor);
    return params;
  };
  c.value = [st](const Inputs&) {
    Graph<double> g(false);
    return loss_total(g, st->model->forward(g, st->image, Mode::train), st->targets).total.item();
  };
  c.gradient = [st](const Inputs&, Precision p) {
    if (p == Precision::double_) {
      Model<double> m = st->model->clone();
      Graph<double> g;
      g.backward(loss_total(g, m.forward(g, st->image, Mode::train), st->targets).total);
      std::vector<Tensor<double>> ts;
      for (auto& q : m.parameters()) ts.push_back(q.tensor);
      return detail::collect_grads(ts);
    }
    Model<float> m = st->model->cast<float>();
    const Targets<double>& td = st->targets;
    const Targets<float> tf{td.alpha_g.cast<float>(), td.image.cast<float>(), td.fg.cast<float>(), td.bg.cast<float>(),
                            td.m_d.cast<float>()};
    Graph<float> g;
    g.backward(loss_total(g, m.forward(g, st->image.cast<float>(), Mode::train), tf).total);
    std::vector<Tensor<float>> ts;
    for (auto& q : m.parameters()) ts.push_back(q.tensor);
    return detail::collect_grads(ts);
  };
  return c;
}

/// The full suite: every op, the SE block, each loss and two small networks.
inline std::vector<GradcheckCase> default_gradcheck_cases() {
  using detail::away_from_zero;
  using detail::random_mask;
  using detail::random_tensor;
  using detail::soft_matte;
  using R = std::mt19937_64;
  std::vector<GradcheckCase> cases;
  auto value_type = [](const auto& in) { return typename std::decay_t<decltype(in[0])>::value_type{}; };

  cases.push_back(make_case(
      "conv2d_k3_s1_p1",
      [](R& r) {
        return Inputs{random_tensor(r, {1, 2, 6, 6}, -1, 1, true), random_tensor(r, {3, 2, 3, 3}, -1, 1, true),
                      random_tensor(r, {1, 3, 1, 1}, -1, 1, true)};
      },
      [](auto& g, const auto& in) { return conv2d(g, in[0], in[1], in[2], 1, 1); }));
  cases.push_back(make_case(
      "conv2d_k3_s2_p1",
      [](R& r) {
        return Inputs{random_tensor(r, {2, 2, 7, 7}, -1, 1, true), random_tensor(r, {2, 2, 3, 3}, -1, 1, true),
                      random_tensor(r, {1, 2, 1, 1}, -1, 1, true)};
      },
      [](auto& g, const auto& in) { return conv2d(g, in[0], in[1], in[2], 2, 1); }));
  cases.push_back(make_case(
      "conv2d_k1_nobias",
      [](R& r) {
        return Inputs{random_tensor(r, {1, 3, 5, 5}, -1, 1, true), random_tensor(r, {2, 3, 1, 1}, -1, 1, true)};
      },
      [](auto& g, const auto& in) {
        using T = typename std::decay_t<decltype(in[0])>::value_type;
        return conv2d(g, in[0], in[1], Tensor<T>{}, 1, 0);
      }));
  cases.push_back(make_case(
      "relu", [](R& r) { return Inputs{away_from_zero(r, {1, 2, 6, 6}, true)}; },
      [](auto& g, const auto& in) { return relu(g, in[0]); }));
  cases.push_back(make_case(
      "sigmoid", [](R& r) { return Inputs{random_tensor(r, {1, 2, 6, 6}, -4, 4, true)}; },
      [](auto& g, const auto& in) { return sigmoid(g, in[0]); }));
  cases.push_back(make_case(
      "upsample_nearest_x2", [](R& r) { return Inputs{random_tensor(r, {1, 2, 6, 6}, -1, 1, true)}; },
      [](auto& g, const auto& in) { return upsample(g, in[0], 2, Resample::nearest); }));
  cases.push_back(make_case(
      "upsample_bilinear_x2", [](R& r) { return Inputs{random_tensor(r, {1, 2, 6, 6}, -1, 1, true)}; },
      [](auto& g, const auto& in) { return upsample(g, in[0], 2, Resample::bilinear); }));
  cases.push_back(make_case(
      "upsample_bilinear_x4", [](R& r) { return Inputs{random_tensor(r, {1, 2, 3, 4}, -1, 1, true)}; },
      [](auto& g, const auto& in) { return upsample(g, in[0], 4, Resample::bilinear); }));
  cases.push_back(make_case(
      "downsample_avg_x2", [](R& r) { return Inputs{random_tensor(r, {1, 2, 6, 6}, -1, 1, true)}; },
      [](auto& g, const auto& in) { return downsample_avg(g, in[0], 2); }));
  cases.push_back(make_case(
      "blur2d_gaussian3", [](R& r) { return Inputs{random_tensor(r, {1, 2, 6, 6}, -1, 1, true)}; },
      [value_type](auto& g, const auto& in) {
        using T = decltype(value_type(in));
        return blur2d(g, in[0], gaussian_kernel<T>(3, 1.0));
      }));
  cases.push_back(make_case(
      "blur2d_gaussian5_reflect", [](R& r) { return Inputs{random_tensor(r, {1, 1, 4, 3}, -1, 1, true)}; },
      [value_type](auto& g, const auto& in) {
        using T = decltype(value_type(in));
        return blur2d(g, in[0], gaussian_kernel<T>(5, 1.5));
      }));
  cases.push_back(make_case(
      "global_avg_pool", [](R& r) { return Inputs{random_tensor(r, {2, 3, 4, 5}, -1, 1, true)}; },
      [](auto& g, const auto& in) { return global_avg_pool(g, in[0]); }));
  cases.push_back(make_case(
      "concat_channels",
      [](R& r) {
        return Inputs{random_tensor(r, {1, 2, 6, 6}, -1, 1, true), random_tensor(r, {1, 3, 6, 6}, -1, 1, true)};
      },
      [](auto& g, const auto& in) { return concat_channels(g, in[0], in[1]); }));
  cases.push_back(make_case(
      "add",
      [](R& r) {
        return Inputs{random_tensor(r, {1, 2, 6, 6}, -1, 1, true), random_tensor(r, {1, 2, 6, 6}, -1, 1, true)};
      },
      [](auto& g, const auto& in) { return add(g, in[0], in[1]); }));
  cases.push_back(make_case(
      "sub",
      [](R& r) {
        return Inputs{random_tensor(r, {1, 2, 6, 6}, -1, 1, true), random_tensor(r, {1, 2, 6, 6}, -1, 1, true)};
      },
      [](auto& g, const auto& in) { return sub(g, in[0], in[1]); }));
  cases.push_back(make_case(
      "mul",
      [](R& r) {
        return Inputs{random_tensor(r, {1, 2, 6, 6}, -1, 1, true), random_tensor(r, {1, 2, 6, 6}, -1, 1, true)};
      },
      [](auto& g, const auto& in) { return mul(g, in[0], in[1]); }));
  cases.push_back(make_case(
      "mul_broadcast",
      [](R& r) {
        return Inputs{random_tensor(r, {2, 3, 4, 4}, -1, 1, true), random_tensor(r, {2, 3, 1, 1}, -1, 1, true)};
      },
      [](auto& g, const auto& in) { return mul(g, in[0], in[1]); }));
  cases.push_back(make_case(
      "scale", [](R& r) { return Inputs{random_tensor(r, {1, 2, 6, 6}, -1, 1, true)}; },
      [value_type](auto& g, const auto& in) {
        using T = decltype(value_type(in));
        return scale(g, in[0], T(-1.75));
      }));
  cases.push_back(make_case(
      "weighted_sum", [](R& r) { return Inputs{random_tensor(r, {1, 2, 3, 3}, -1, 1, true)}; },
      [value_type](auto& g, const auto& in) {
        using T = decltype(value_type(in));
        std::vector<T> w(in[0].numel());
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(0.1 * static_cast<double>(i) - 0.5);
        return weighted_sum(g, in[0], w);
      }));
  cases.push_back(make_case(
      "l1_mean",
      [](R& r) {
        Tensor<double> b = random_tensor(r, {1, 2, 6, 6}, -1, 1, false);
        Tensor<double> d = away_from_zero(r, {1, 2, 6, 6}, false);
        Tensor<double> a = b.clone(true);
        for (std::size_t i = 0; i < a.numel(); ++i) a.data()[i] += d.data()[i];
        return Inputs{a, b};
      },
      [](auto& g, const auto& in) { return l1_mean(g, in[0], in[1]); }));
  cases.push_back(make_case(
      "l2_mean_half",
      [](R& r) {
        return Inputs{random_tensor(r, {1, 2, 6, 6}, -1, 1, true), random_tensor(r, {1, 2, 6, 6}, -1, 1, true)};
      },
      [](auto& g, const auto& in) { return l2_mean_half(g, in[0], in[1]); }));
  cases.push_back(make_case(
      "masked_l1_mean",
      [](R& r) {
        Tensor<double> b = random_tensor(r, {1, 1, 6, 6}, -1, 1, false);
        Tensor<double> d = away_from_zero(r, {1, 1, 6, 6}, false);
        Tensor<double> a = b.clone(true);
        for (std::size_t i = 0; i < a.numel(); ++i) a.data()[i] += d.data()[i];
        return Inputs{a, b, random_mask(r, {1, 1, 6, 6})};
      },
      [](auto& g, const auto& in) { return masked_l1_mean(g, in[0], in[1], in[2]); }));
  cases.push_back(make_case(
      "batch_norm_batch_stats",
      [](R& r) {
        return Inputs{random_tensor(r, {2, 3, 4, 4}, -1, 1, true), random_tensor(r, {1, 3, 1, 1}, 0.5, 1.5, true),
                      random_tensor(r, {1, 3, 1, 1}, -0.5, 0.5, true)};
      },
      [value_type](auto& g, const auto& in) {
        using T = decltype(value_type(in));
        Tensor<T> rm(Shape{1, 3, 1, 1}, T(0));
        Tensor<T> rv(Shape{1, 3, 1, 1}, T(1));
        return batch_norm(g, in[0], in[1], in[2], rm, rv, true, false);
      }));
  cases.push_back(make_case(
      "batch_norm_running_stats",
      [](R& r) {
        return Inputs{random_tensor(r, {2, 3, 4, 4}, -1, 1, true), random_tensor(r, {1, 3, 1, 1}, 0.5, 1.5, true),
                      random_tensor(r, {1, 3, 1, 1}, -0.5, 0.5, true), random_tensor(r, {1, 3, 1, 1}, -0.2, 0.2, false),
                      random_tensor(r, {1, 3, 1, 1}, 0.5, 1.5, false)};
      },
      [value_type](auto& g, const auto& in) {
        using T = decltype(value_type(in));
        Tensor<T> rm = in[3].clone();
        Tensor<T> rv = in[4].clone();
        return batch_norm(g, in[0], in[1], in[2], rm, rv, false, false);
      }));
  cases.push_back(make_case(
      "se_block",
      [](R& r) {
        return Inputs{random_tensor(r, {2, 8, 3, 3}, -1, 1, true), random_tensor(r, {2, 8, 1, 1}, -1, 1, true),
                      random_tensor(r, {1, 2, 1, 1}, -0.5, 0.5, true), random_tensor(r, {8, 2, 1, 1}, -1, 1, true),
                      random_tensor(r, {1, 8, 1, 1}, -0.5, 0.5, true)};
      },
      [value_type](auto& g, const auto& in) {
        using T = decltype(value_type(in));
        SeBlock<T> block{ConvLayer<T>{in[1], in[2], 1, 0, std::nullopt}, ConvLayer<T>{in[3], in[4], 1, 0, std::nullopt},
                         4};
        return se_block(g, in[0], block);
      }));
  cases.push_back(make_case(
      "g_operator", [](R& r) { return Inputs{random_tensor(r, {1, 1, 32, 32}, 0, 1, true)}; },
      [](auto& g, const auto& in) { return g_operator(g, in[0]); },
      256));
  cases.push_back(make_case(
      "composite",
      [](R& r) {
        return Inputs{random_tensor(r, {1, 1, 6, 6}, 0, 1, true), random_tensor(r, {1, 3, 6, 6}, 0, 1, true),
                      random_tensor(r, {1, 3, 6, 6}, 0, 1, true)};
      },
      [](auto& g, const auto& in) { return composite(g, in[0], in[1], in[2]); }));

  // Loss stack. Predictions are kept away from the targets so |.| terms are smooth.
  cases.push_back(make_case(
      "loss_semantic",
      [](R& r) { return Inputs{random_tensor(r, {2, 1, 2, 2}, 0.05, 0.95, true), soft_matte(r, 2, 32, 32)}; },
      [](auto& g, const auto& in) { return loss_semantic(g, in[0], in[1]); }));
  cases.push_back(make_case(
      "loss_detail",
      [](R& r) {
        Tensor<double> alpha = soft_matte(r, 1, 16, 16);
        Tensor<double> mask = transition_mask(alpha);
        Tensor<double> d = away_from_zero(r, {1, 1, 16, 16}, false);
        Tensor<double> pred = alpha.clone(true);
        for (std::size_t i = 0; i < pred.numel(); ++i) pred.data()[i] += 0.3 * d.data()[i];
        return Inputs{pred, alpha, mask};
      },
      [](auto& g, const auto& in) { return loss_detail(g, in[0], in[1], in[2]).value; }));
  cases.push_back(make_case(
      "loss_alpha",
      [](R& r) {
        Tensor<double> alpha = soft_matte(r, 1, 8, 8);
        Tensor<double> fg = random_tensor(r, {1, 3, 8, 8}, 0, 1, false);
        Tensor<double> bg = random_tensor(r, {1, 3, 8, 8}, 0, 1, false);
        Graph<double> c(false);
        Tensor<double> image = composite(c, alpha, fg, bg);
        Tensor<double> d = away_from_zero(r, {1, 1, 8, 8}, false);
        Tensor<double> pred = alpha.clone(true);
        for (std::size_t i = 0; i < pred.numel(); ++i) pred.data()[i] += 0.3 * d.data()[i];
        return Inputs{pred, alpha, image, fg, bg};
      },
      [](auto& g, const auto& in) { return loss_alpha(g, in[0], in[1], in[2], in[3], in[4]); }));

  auto heads = [](R& r, std::size_t n, std::size_t hw, Inputs extra) {
    Inputs in{random_tensor(r, {n, 1, hw / 16, hw / 16}, 0.05, 0.95, true),
              random_tensor(r, {n, 1, hw, hw}, 0.02, 0.98, true), random_tensor(r, {n, 1, hw, hw}, 0.02, 0.98, true)};
    in.insert(in.end(), extra.begin(), extra.end());
    return in;
  };
  cases.push_back(make_case(
      "loss_total",
      [heads](R& r) {
        Tensor<double> alpha = soft_matte(r, 2, 32, 32);
        Tensor<double> fg = random_tensor(r, {2, 3, 32, 32}, 0, 1, false);
        Tensor<double> bg = random_tensor(r, {2, 3, 32, 32}, 0, 1, false);
        Graph<double> c(false);
        Tensor<double> image = composite(c, alpha, fg, bg);
        return heads(r, 2, 32, Inputs{alpha, image, fg, bg, transition_mask(alpha)});
      },
      [](auto& g, const auto& in) {
        using T = typename std::decay_t<decltype(in[0])>::value_type;
        const ModelOutputs<T> out{in[0], in[1], in[2]};
        const Targets<T> tg{in[3], in[4], in[5], in[6], in[7]};
        return loss_total(g, out, tg).total;
      },
      256));
  cases.push_back(make_case(
      "loss_soc",
      [heads](R& r) { return heads(r, 2, 32, Inputs{}); },
      [](auto& g, const auto& in) {
        using T = typename std::decay_t<decltype(in[0])>::value_type;
        const ModelOutputs<T> out{in[0], in[1], in[2]};
        return loss_soc(g, out, predicted_transition_mask(in[2])).total;
      },
      256));
  cases.push_back(make_case(
      "loss_detail_anchor",
      [](R& r) {
        Tensor<double> frozen = random_tensor(r, {1, 1, 16, 16}, 0, 1, false);
        Tensor<double> d = away_from_zero(r, {1, 1, 16, 16}, false);
        Tensor<double> pred = frozen.clone(true);
        for (std::size_t i = 0; i < pred.numel(); ++i) pred.data()[i] += 0.3 * d.data()[i];
        return Inputs{pred, frozen, random_mask(r, {1, 1, 16, 16})};
      },
      [](auto& g, const auto& in) { return loss_detail_anchor(g, in[0], in[1], in[2]); }));

  ModelConfig small;
  small.base_channels = 4;
  small.d_channels = 4;
  small.f_channels = 4;
  small.d_layers = 6;
  small.input_height = small.input_width = 32;
  cases.push_back(network_case("network", small, 6));
  small.use_norm = true;
  cases.push_back(network_case("network_norm", small, 6));
  return cases;
}

inline std::vector<GradcheckResult> run_gradcheck(const GradcheckOptions& opt = {},
                                                  const std::vector<GradcheckCase>& cases = default_gradcheck_cases()) {
  std::vector<GradcheckResult> out;
  out.reserve(cases.size());
  for (const auto& c : cases) out.push_back(check_case(c, opt));
  return out;
}

}  // namespace matteforge
