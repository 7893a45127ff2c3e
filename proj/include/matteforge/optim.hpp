// First-order optimizers over named parameter lists.
#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "matteforge/net.hpp"

namespace matteforge {

/// p <- p - lr * g, optionally with heavy-ball momentum (velocity persisted
/// in `velocity`, which is sized on first use).
template <class T>
void sgd_step(std::span<T> params, std::span<const T> grads, T lr, T momentum = T(0), std::vector<T>* velocity = nullptr) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: parameter and gradient sizes differ");
  if (momentum == T(0) || velocity == nullptr) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr * grads[i];
    return;
  }
  if (velocity->size() != params.size()) velocity->assign(params.size(), T(0));
  for (std::size_t i = 0; i < params.size(); ++i) {
    (*velocity)[i] = momentum * (*velocity)[i] + grads[i];
    params[i] -= lr * (*velocity)[i];
  }
}

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Moment estimates and step count for one parameter tensor.
template <class T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  long t = 0;
};

template <class T>
void adam_step(AdamState<T>& state, std::span<T> params, std::span<const T> grads, T lr, const AdamHyper& hp = {}) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient sizes differ");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), T(0));
    state.v.assign(params.size(), T(0));
  }
  state.t += 1;
  const T b1 = static_cast<T>(hp.beta1);
  const T b2 = static_cast<T>(hp.beta2);
  const T c1 = T(1) - static_cast<T>(std::pow(hp.beta1, static_cast<double>(state.t)));
  const T c2 = T(1) - static_cast<T>(std::pow(hp.beta2, static_cast<double>(state.t)));
  const T eps = static_cast<T>(hp.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = b1 * state.m[i] + (T(1) - b1) * grads[i];
    state.v[i] = b2 * state.v[i] + (T(1) - b2) * grads[i] * grads[i];
    const T mhat = state.m[i] / c1;
    const T vhat = state.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

/// SGD over a model's trainable parameters.
template <class T>
class Sgd {
 public:
  explicit Sgd(T momentum = T(0)) : momentum_(momentum) {}

  void step(std::vector<NamedTensor<T>>& params, T lr) {
    if (velocity_.size() != params.size()) velocity_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = params[i].tensor;
      if (!p.requires_grad() || !p.has_grad()) continue;
      sgd_step<T>(p.data(), p.grad(), lr, momentum_, &velocity_[i]);
    }
  }

 private:
  T momentum_;
  std::vector<std::vector<T>> velocity_;
};

/// Adam over a model's trainable parameters; one state per tensor.
template <class T>
class Adam {
 public:
  explicit Adam(AdamHyper hp = {}) : hp_(hp) {}

  void step(std::vector<NamedTensor<T>>& params, T lr) {
    if (states_.size() != params.size()) states_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor<T>& p = params[i].tensor;
      if (!p.requires_grad() || !p.has_grad()) continue;
      adam_step<T>(states_[i], p.data(), p.grad(), lr, hp_);
    }
  }

 private:
  AdamHyper hp_;
  std::vector<AdamState<T>> states_;
};

}  // namespace matteforge
