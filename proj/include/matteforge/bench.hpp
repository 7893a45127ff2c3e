// MSE/MAD metrics, the benchmark runner and report serialization.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "matteforge/data.hpp"
#include "matteforge/mattemath.hpp"
#include "matteforge/net.hpp"

namespace matteforge {

namespace detail {

inline void require_same_dims(const char* op, const Matte& a, const Matte& b) {
  if (!a.same_dims(b)) {
    throw ShapeError(std::string(op) + ": matte sizes differ (" + std::to_string(a.height) + "x" +
                     std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width) + ")");
  }
}

// Mean of f(pred - gt) over pixels where mask is set (all pixels when mask is null).
template <class F>
double masked_mean(const Matte& pred, const Matte& gt, const Mask* mask, F f) {
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (mask != nullptr && mask->values[i] == 0.0) continue;
    sum += f(pred.values[i] - gt.values[i]);
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

}  // namespace detail

inline double mse(const Matte& pred, const Matte& gt) {
  detail::require_same_dims("mse", pred, gt);
  return detail::masked_mean(pred, gt, nullptr, [](double d) { return d * d; });
}

inline double mad(const Matte& pred, const Matte& gt) {
  detail::require_same_dims("mad", pred, gt);
  return detail::masked_mean(pred, gt, nullptr, [](double d) { return std::abs(d); });
}

/// Worker count from MATTEFORGE_THREADS, else the hardware count; at least 1.
inline unsigned worker_count() {
  unsigned n = std::max(1U, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("MATTEFORGE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v >= 1) n = std::min(n, static_cast<unsigned>(v));
  }
  return n;
}

struct SampleMetrics {
  std::string id;
  double mse = 0;
  double mad = 0;

  friend bool operator==(const SampleMetrics&, const SampleMetrics&) = default;
};

struct BenchReport {
  std::vector<SampleMetrics> per_sample;
  double mean_mse = 0;
  double mean_mad = 0;
  std::size_t params = 0;
  double mean_inference_ms = 0;
  std::string config_hash;

  friend bool operator==(const BenchReport&, const BenchReport&) = default;

  void recompute_aggregate() {
    mean_mse = 0;
    mean_mad = 0;
    for (const SampleMetrics& s : per_sample) {
      mean_mse += s.mse;
      mean_mad += s.mad;
    }
    if (!per_sample.empty()) {
      mean_mse /= static_cast<double>(per_sample.size());
      mean_mad /= static_cast<double>(per_sample.size());
    }
  }
};

inline void to_json(nlohmann::json& j, const BenchReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const SampleMetrics& s : r.per_sample) rows.push_back({{"id", s.id}, {"mse", s.mse}, {"mad", s.mad}});
  j = {{"per_sample", rows},
       {"aggregate", {{"mse", r.mean_mse}, {"mad", r.mean_mad}}},
       {"params", r.params},
       {"mean_inference_ms", r.mean_inference_ms},
       {"config_hash", r.config_hash}};
}

inline void from_json(const nlohmann::json& j, BenchReport& r) {
  r = BenchReport{};
  for (const auto& row : j.at("per_sample")) {
    r.per_sample.push_back({row.at("id").get<std::string>(), row.at("mse").get<double>(), row.at("mad").get<double>()});
  }
  r.mean_mse = j.at("aggregate").at("mse").get<double>();
  r.mean_mad = j.at("aggregate").at("mad").get<double>();
  r.params = j.at("params").get<std::size_t>();
  r.mean_inference_ms = j.at("mean_inference_ms").get<double>();
  r.config_hash = j.at("config_hash").get<std::string>();
}

/// One row per sample plus a trailing "mean" row. Values use 17 significant
/// digits so the file reloads to the same doubles.
inline void write_csv(std::ostream& os, const BenchReport& r) {
  os << "id,mse,mad\n" << std::setprecision(17);
  for (const SampleMetrics& s : r.per_sample) os << s.id << ',' << s.mse << ',' << s.mad << '\n';
  os << "mean," << r.mean_mse << ',' << r.mean_mad << '\n';
}

struct BenchConfig {
  bool transition_only = false;  // diagnostics: restrict metrics to the ground-truth transition band
  int transition_kernel = 3;
  int transition_iterations = 2;
  int warmup_runs = 3;
  std::string config_hash;
};

struct BenchSample {
  std::string id;
  Image image;
  Matte alpha_g;
};

inline std::vector<BenchSample> bench_samples(const std::vector<SyntheticSample>& data) {
  std::vector<BenchSample> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::ostringstream id;
    id << "sample_" << std::setw(5) << std::setfill('0') << i;
    out.push_back({id.str(), data[i].image, data[i].alpha_g});
  }
  return out;
}

using Predictor = std::function<Matte(const Image&)>;

/// Predictions and timing run serially; metric evaluation fans out over
/// worker_count() threads with a fixed sample-to-slot assignment.
inline BenchReport run_benchmark(const Predictor& predict, const std::vector<BenchSample>& dataset,
                                 const BenchConfig& cfg, std::size_t params = 0) {
  if (dataset.empty()) throw ConfigError("run_benchmark: empty dataset");
  using clock = std::chrono::steady_clock;
  for (int i = 0; i < cfg.warmup_runs; ++i) (void)predict(dataset.front().image);

  std::vector<Matte> preds;
  preds.reserve(dataset.size());
  double total_ms = 0;
  for (const BenchSample& s : dataset) {
    const auto t0 = clock::now();
    preds.push_back(predict(s.image));
    total_ms += std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  }

  BenchReport report;
  report.per_sample.resize(dataset.size());
  auto evaluate = [&](std::size_t i) {
    const Matte& gt = dataset[i].alpha_g;
    detail::require_same_dims("run_benchmark", preds[i], gt);
    SampleMetrics& row = report.per_sample[i];
    row.id = dataset[i].id;
    if (cfg.transition_only) {
      const Mask band = transition_mask(gt, cfg.transition_kernel, cfg.transition_iterations);
      row.mse = detail::masked_mean(preds[i], gt, &band, [](double d) { return d * d; });
      row.mad = detail::masked_mean(preds[i], gt, &band, [](double d) { return std::abs(d); });
    } else {
      row.mse = mse(preds[i], gt);
      row.mad = mad(preds[i], gt);
    }
  };
  const unsigned workers = std::min<std::size_t>(worker_count(), dataset.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < dataset.size(); ++i) evaluate(i);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < dataset.size(); i += workers) evaluate(i);
      });
    }
    for (std::thread& t : pool) t.join();
  }

  report.recompute_aggregate();
  report.params = params;
  report.mean_inference_ms = total_ms / static_cast<double>(dataset.size());
  report.config_hash = cfg.config_hash;
  return report;
}

template <class T>
BenchReport run_benchmark(Model<T>& model, const std::vector<BenchSample>& dataset, const BenchConfig& cfg) {
  auto predict = [&model](const Image& image) {
    Graph<T> g(false);
    return to_grid<MatteTag>(model.forward(g, to_tensor<T>(image), Mode::eval).alpha_p);
  };
  return run_benchmark(predict, dataset, cfg, model.parameter_count());
}

}  // namespace matteforge
