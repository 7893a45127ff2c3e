// Supervised end-to-end training and self-supervised sub-objective
// consistency (SOC) adaptation.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "matteforge/data.hpp"
#include "matteforge/mattemath.hpp"
#include "matteforge/net.hpp"
#include "matteforge/optim.hpp"

namespace matteforge {

enum class Optimizer { sgd, adam };

struct TrainConfig {
  Optimizer optimizer = Optimizer::sgd;
  int epochs = 40;
  int batch_size = 8;
  double lr = 0.01;
  int lr_decay_every = 10;
  double lr_decay_factor = 0.1;
  double momentum = 0.0;
  LossWeights weights;
  LossTerms terms;
  MaskConfig mask;
  GConfig g;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs <= 0 || batch_size <= 0 || lr_decay_every <= 0) {
      throw ConfigError("epochs, batch_size and lr_decay_every must be positive");
    }
    if (!(lr >= 0)) throw ConfigError("lr must be non-negative");
    if (!(lr_decay_factor > 0 && lr_decay_factor < 1)) throw ConfigError("lr_decay_factor must lie in (0,1)");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0,1)");
    weights.validate();
  }
};

/// lr * decay^floor(epoch / decay_every)
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  return cfg.lr * std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
}

struct SocConfig {
  int steps = 200;
  int batch_size = 8;
  double lr = 0.0001;
  bool freeze_norm = true;
  MaskConfig mask;
  GConfig g;
  std::uint64_t seed = 0;

  void validate() const {
    if (steps <= 0 || batch_size <= 0) throw ConfigError("SOC steps and batch_size must be positive");
    if (!(lr > 0)) throw ConfigError("SOC lr must be positive");
  }
};

/// One JSON object per epoch or step; serialized as JSON lines.
struct TrainLog {
  std::vector<nlohmann::json> records;

  void write_jsonl(std::ostream& os) const {
    for (const auto& r : records) os << r.dump() << '\n';
  }
};

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

/// Stacks single-sample tensors along the batch axis.
template <class T>
Tensor<T> stack(const std::vector<const Tensor<T>*>& parts) {
  Shape s = parts.front()->shape();
  const std::size_t per = s.c * s.plane();
  s.n = parts.size();
  Tensor<T> out(s);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::copy(parts[i]->data().begin(), parts[i]->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

/// Per-sample tensors prepared once before training.
template <class T>
struct PreparedSample {
  Tensor<T> image;
  Tensor<T> alpha_g;
  Tensor<T> fg;
  Tensor<T> bg;
  Tensor<T> m_d;
};

template <class T>
std::vector<PreparedSample<T>> prepare(const std::vector<SyntheticSample>& data, const MaskConfig& mask) {
  std::vector<PreparedSample<T>> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    out.push_back({to_tensor<T>(s.image), to_tensor<T>(s.alpha_g), to_tensor<T>(s.fg), to_tensor<T>(s.bg),
                   to_tensor<T>(transition_mask(s.alpha_g, mask.kernel, mask.iterations))});
  }
  return out;
}

template <class T>
Targets<T> batch_targets(const std::vector<PreparedSample<T>>& data, const std::vector<std::size_t>& idx) {
  auto pick = [&](auto member) {
    std::vector<const Tensor<T>*> parts;
    for (std::size_t i : idx) parts.push_back(&(data[i].*member));
    return stack(parts);
  };
  return Targets<T>{pick(&PreparedSample<T>::alpha_g), pick(&PreparedSample<T>::image), pick(&PreparedSample<T>::fg),
                    pick(&PreparedSample<T>::bg), pick(&PreparedSample<T>::m_d)};
}

template <class T>
void require_finite(const Tensor<T>& loss, const std::string& where) {
  if (!std::isfinite(static_cast<double>(loss.item()))) {
    throw NumericError("non-finite loss at " + where + "; aborting");
  }
}

// ---------------------------------------------------------------------------
// supervised training
// ---------------------------------------------------------------------------

/// Plain (optionally momentum) SGD over the weighted loss stack. Data order
/// is reshuffled every epoch from the run seed. The log holds per-epoch means
/// of each sub-loss and the learning rate used.
template <class T>
TrainLog train_supervised(Model<T>& model, const std::vector<SyntheticSample>& dataset, const TrainConfig& cfg,
                          const std::function<void(const nlohmann::json&)>& on_epoch = {}) {
  cfg.validate();
  if (dataset.empty()) throw ConfigError("train_supervised: empty dataset");
  const auto data = prepare<T>(dataset, cfg.mask);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(cfg.seed ^ 0xA0761D6478BD642FULL);
  Sgd<T> sgd(static_cast<T>(cfg.momentum));
  Adam<T> adam;
  auto params = model.parameters();
  model.zero_grad();
  TrainLog log;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = lr_at_epoch(cfg, epoch);
    double sum_s = 0, sum_d = 0, sum_a = 0, sum_total = 0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
      const Targets<T> tg = batch_targets(data, idx);
      Graph<T> g;
      const ModelOutputs<T> out = model.forward(g, tg.image, Mode::train);
      const LossBreakdown<T> loss = loss_total(g, out, tg, cfg.weights, cfg.terms, cfg.g);
      require_finite(loss.total, "epoch " + std::to_string(epoch));
      g.backward(loss.total);
      if (cfg.optimizer == Optimizer::adam) {
        adam.step(params, static_cast<T>(lr));
      } else {
        sgd.step(params, static_cast<T>(lr));
      }
      model.zero_grad();

      sum_total += static_cast<double>(loss.total.item());
      sum_a += static_cast<double>(loss.alpha.item());
      if (loss.semantic.defined()) sum_s += static_cast<double>(loss.semantic.item());
      if (loss.detail.defined()) sum_d += static_cast<double>(loss.detail.item());
      ++batches;
    }
    nlohmann::json rec{{"kind", "epoch"},
                       {"epoch", epoch},
                       {"lr", lr},
                       {"loss_s", sum_s / batches},
                       {"loss_d", sum_d / batches},
                       {"loss_alpha", sum_a / batches},
                       {"loss_total", sum_total / batches}};
    if (on_epoch) on_epoch(rec);
    log.records.push_back(std::move(rec));
  }
  return log;
}

// ---------------------------------------------------------------------------
// SOC adaptation
// ---------------------------------------------------------------------------

struct SocTerms {
  double cons = 0;      // L_cons: semantic + detail consistency
  double cons_semantic = 0;
  double cons_detail = 0;
  double dd = 0;        // L_dd: masked deviation of d_p from the frozen copy
};

/// Evaluates the SOC objective of `model` against `frozen` on one batch
/// without recording gradients.
template <class T>
SocTerms evaluate_soc_terms(Model<T>& model, Model<T>& frozen, const Tensor<T>& images, const SocConfig& cfg) {
  Graph<T> g(false);
  const ModelOutputs<T> out = model.forward(g, images, Mode::eval);
  const ModelOutputs<T> ref = frozen.forward(g, images, Mode::eval);
  const Tensor<T> mask = predicted_transition_mask(out.alpha_p, cfg.mask);
  const SocLoss<T> cons = loss_soc(g, out, mask, cfg.g);
  const Tensor<T> dd = loss_detail_anchor(g, out.d_p, ref.d_p, mask);
  return {static_cast<double>(cons.total.item()), static_cast<double>(cons.semantic.item()),
          static_cast<double>(cons.detail.item()), static_cast<double>(dd.item())};
}

/// Mean SOC terms over a set of images, one image at a time.
template <class T>
SocTerms evaluate_soc(Model<T>& model, Model<T>& frozen, const std::vector<Image>& images, const SocConfig& cfg) {
  SocTerms acc;
  for (const Image& img : images) {
    const SocTerms t = evaluate_soc_terms(model, frozen, to_tensor<T>(img), cfg);
    acc.cons += t.cons;
    acc.cons_semantic += t.cons_semantic;
    acc.cons_detail += t.cons_detail;
    acc.dd += t.dd;
  }
  const auto n = static_cast<double>(images.size());
  acc.cons /= n;
  acc.cons_semantic /= n;
  acc.cons_detail /= n;
  acc.dd /= n;
  return acc;
}

/// Self-supervised adaptation of a trained model on unlabeled images. The
/// frozen duplicate is taken once, at construction.
template <class T>
class SocSession {
 public:
  SocSession(Model<T>& model, const std::vector<Image>& images, const SocConfig& cfg)
      : model_(model), frozen_(model.clone_frozen()), cfg_(cfg), rng_(cfg.seed ^ 0xE7037ED1A0B428DBULL) {
    cfg.validate();
    if (images.empty()) throw ConfigError("adapt_soc: empty image set");
    for (const Image& img : images) images_.push_back(to_tensor<T>(img));
    if (cfg.freeze_norm) model_.set_norm_frozen(true);
    params_ = model_.parameters();
  }

  [[nodiscard]] Model<T>& frozen() { return frozen_; }

  nlohmann::json step() {
    std::uniform_int_distribution<std::size_t> pick(0, images_.size() - 1);
    std::vector<const Tensor<T>*> parts;
    for (int i = 0; i < cfg_.batch_size; ++i) parts.push_back(&images_[pick(rng_)]);
    const Tensor<T> batch = stack(parts);

    Graph<T> g;
    const ModelOutputs<T> out = model_.forward(g, batch, Mode::train);
    Graph<T> frozen_graph(false);
    const ModelOutputs<T> ref = frozen_.forward(frozen_graph, batch, Mode::eval);
    const Tensor<T> mask = predicted_transition_mask(out.alpha_p, cfg_.mask);
    const SocLoss<T> cons = loss_soc(g, out, mask, cfg_.g);
    const Tensor<T> dd = loss_detail_anchor(g, out.d_p, ref.d_p, mask);
    const Tensor<T> total = add(g, cons.total, dd);
    require_finite(total, "SOC step " + std::to_string(step_));
    g.backward(total);
    opt_.step(params_, static_cast<T>(cfg_.lr));
    model_.zero_grad();
    return nlohmann::json{{"kind", "soc_step"},
                          {"step", step_++},
                          {"lr", cfg_.lr},
                          {"loss_cons", static_cast<double>(cons.total.item())},
                          {"loss_cons_semantic", static_cast<double>(cons.semantic.item())},
                          {"loss_cons_detail", static_cast<double>(cons.detail.item())},
                          {"loss_dd", static_cast<double>(dd.item())}};
  }

 private:
  Model<T>& model_;
  Model<T> frozen_;
  SocConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<Tensor<T>> images_;
  std::vector<NamedTensor<T>> params_;
  Adam<T> opt_;
  int step_ = 0;
};

/// Minimizes L_cons + L_dd with Adam for cfg.steps steps.
template <class T>
TrainLog adapt_soc(Model<T>& model, const std::vector<Image>& unlabeled, const SocConfig& cfg,
                   const std::function<void(const nlohmann::json&)>& on_step = {}) {
  SocSession<T> session(model, unlabeled, cfg);
  TrainLog log;
  for (int i = 0; i < cfg.steps; ++i) {
    nlohmann::json rec = session.step();
    if (on_step) on_step(rec);
    log.records.push_back(std::move(rec));
  }
  return log;
}

// ---------------------------------------------------------------------------
// inference helpers
// ---------------------------------------------------------------------------

template <class T>
Matte predict_alpha(Model<T>& model, const Image& image) {
  Graph<T> g(false);
  return to_grid<MatteTag>(model.forward(g, to_tensor<T>(image), Mode::eval).alpha_p);
}

}  // namespace matteforge
