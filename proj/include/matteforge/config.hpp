// Run configuration: every hyper-parameter record in one JSON document,
// with unknown keys rejected and a content hash for run directories.
#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "matteforge/bench.hpp"
#include "matteforge/data.hpp"
#include "matteforge/net.hpp"
#include "matteforge/train.hpp"
#include "matteforge/video.hpp"

namespace matteforge {

/// 64-bit FNV-1a, rendered as 16 lowercase hex digits.
inline std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

struct TrimapConfig {
  std::optional<double> threshold;  // no default: the split depends on the scene
  int kernel = 3;
  int iterations = 2;
  double far_plane = 1.0;

  void validate() const {
    check_kernel(kernel);
    if (iterations < 1) throw ConfigError("trimap iterations must be >= 1");
  }
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SocConfig soc;
  OfdConfig ofd;
  DatasetConfig data;
  TrimapConfig trimap;
  BenchConfig bench;

  void validate() const {
    model.validate();
    train.validate();
    soc.validate();
    ofd.validate();
    trimap.validate();
    if (data.count <= 0 || data.size <= 0 || data.size % 16 != 0) {
      throw ConfigError("data.count must be positive and data.size a positive multiple of 16");
    }
  }
};

namespace detail {

using Setter = std::function<void(const nlohmann::json&)>;

inline void read_section(const nlohmann::json& j, const std::string& section, const std::map<std::string, Setter>& keys) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const auto k = keys.find(it.key());
    if (k == keys.end()) throw ConfigError("unknown key '" + section + "." + it.key() + "'");
    try {
      k->second(*it);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad value for '" + section + "." + it.key() + "': " + e.what());
    }
  }
}

template <class V>
Setter set(V& field) {
  return [&field](const nlohmann::json& v) { field = v.get<V>(); };
}

inline Optimizer optimizer_from(const std::string& s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

inline std::string to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }

inline nlohmann::json mask_json(const MaskConfig& m) {
  return {{"kernel", m.kernel}, {"iterations", m.iterations}, {"soc_low", m.soc_low}, {"soc_high", m.soc_high}};
}

inline void read_mask(const nlohmann::json& j, const std::string& section, MaskConfig& m) {
  read_section(j, section, {{"kernel", set(m.kernel)}, {"iterations", set(m.iterations)},
                            {"soc_low", set(m.soc_low)}, {"soc_high", set(m.soc_high)}});
}

inline nlohmann::json g_json(const GConfig& g) {
  return {{"factor", g.factor}, {"kernel", g.kernel}, {"sigma", g.sigma}};
}

inline void read_g(const nlohmann::json& j, const std::string& section, GConfig& g) {
  read_section(j, section, {{"factor", set(g.factor)}, {"kernel", set(g.kernel)}, {"sigma", set(g.sigma)}});
}

}  // namespace detail

inline nlohmann::json to_json(const RunConfig& c) {
  const TrainConfig& t = c.train;
  const SocConfig& s = c.soc;
  nlohmann::json trimap{{"kernel", c.trimap.kernel}, {"iterations", c.trimap.iterations}, {"far_plane", c.trimap.far_plane}};
  trimap["threshold"] = c.trimap.threshold ? nlohmann::json(*c.trimap.threshold) : nlohmann::json(nullptr);
  return {
      {"model", nlohmann::json(c.model)},
      {"train",
       {{"optimizer", detail::to_string(t.optimizer)},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"lr", t.lr},
        {"lr_decay_every", t.lr_decay_every},
        {"lr_decay_factor", t.lr_decay_factor},
        {"momentum", t.momentum},
        {"lambda_s", t.weights.lambda_s},
        {"lambda_d", t.weights.lambda_d},
        {"lambda_alpha", t.weights.lambda_alpha},
        {"use_semantic_loss", t.terms.semantic},
        {"use_detail_loss", t.terms.detail},
        {"mask", detail::mask_json(t.mask)},
        {"g", detail::g_json(t.g)},
        {"seed", t.seed}}},
      {"soc",
       {{"steps", s.steps},
        {"batch_size", s.batch_size},
        {"lr", s.lr},
        {"freeze_norm", s.freeze_norm},
        {"mask", detail::mask_json(s.mask)},
        {"g", detail::g_json(s.g)},
        {"seed", s.seed}}},
      {"ofd", {{"xi", c.ofd.xi}}},
      {"data",
       {{"count", c.data.count},
        {"size", c.data.size},
        {"crops_per_foreground", c.data.crops_per_foreground},
        {"composites_per_foreground", c.data.composites_per_foreground},
        {"background_pool", c.data.background_pool},
        {"seed", c.data.seed}}},
      {"trimap", trimap},
      {"bench",
       {{"transition_only", c.bench.transition_only},
        {"transition_kernel", c.bench.transition_kernel},
        {"transition_iterations", c.bench.transition_iterations},
        {"warmup_runs", c.bench.warmup_runs}}},
  };
}

/// Overlays `j` on `base`; keys absent from `j` keep their current value.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  using detail::read_section;
  using detail::set;
  TrainConfig& t = c.train;
  SocConfig& s = c.soc;
  read_section(j, "config", {
      {"model", [&](const nlohmann::json& v) {
         nlohmann::json merged = nlohmann::json(c.model);
         if (!v.is_object()) throw ConfigError("config section 'model' must be an object");
         merged.update(v);
         c.model = merged.get<ModelConfig>();
       }},
      {"train", [&](const nlohmann::json& v) {
         read_section(v, "train", {
             {"optimizer", [&](const nlohmann::json& x) { t.optimizer = detail::optimizer_from(x.get<std::string>()); }},
             {"epochs", set(t.epochs)},
             {"batch_size", set(t.batch_size)},
             {"lr", set(t.lr)},
             {"lr_decay_every", set(t.lr_decay_every)},
             {"lr_decay_factor", set(t.lr_decay_factor)},
             {"momentum", set(t.momentum)},
             {"lambda_s", set(t.weights.lambda_s)},
             {"lambda_d", set(t.weights.lambda_d)},
             {"lambda_alpha", set(t.weights.lambda_alpha)},
             {"use_semantic_loss", set(t.terms.semantic)},
             {"use_detail_loss", set(t.terms.detail)},
             {"mask", [&](const nlohmann::json& x) { detail::read_mask(x, "train.mask", t.mask); }},
             {"g", [&](const nlohmann::json& x) { detail::read_g(x, "train.g", t.g); }},
             {"seed", set(t.seed)},
         });
       }},
      {"soc", [&](const nlohmann::json& v) {
         read_section(v, "soc", {
             {"steps", set(s.steps)},
             {"batch_size", set(s.batch_size)},
             {"lr", set(s.lr)},
             {"freeze_norm", set(s.freeze_norm)},
             {"mask", [&](const nlohmann::json& x) { detail::read_mask(x, "soc.mask", s.mask); }},
             {"g", [&](const nlohmann::json& x) { detail::read_g(x, "soc.g", s.g); }},
             {"seed", set(s.seed)},
         });
       }},
      {"ofd", [&](const nlohmann::json& v) { read_section(v, "ofd", {{"xi", set(c.ofd.xi)}}); }},
      {"data", [&](const nlohmann::json& v) {
         read_section(v, "data", {
             {"count", set(c.data.count)},
             {"size", set(c.data.size)},
             {"crops_per_foreground", set(c.data.crops_per_foreground)},
             {"composites_per_foreground", set(c.data.composites_per_foreground)},
             {"background_pool", set(c.data.background_pool)},
             {"seed", set(c.data.seed)},
         });
       }},
      {"trimap", [&](const nlohmann::json& v) {
         read_section(v, "trimap", {
             {"threshold", [&](const nlohmann::json& x) {
                if (x.is_null()) c.trimap.threshold.reset();
                else c.trimap.threshold = x.get<double>();
              }},
             {"kernel", set(c.trimap.kernel)},
             {"iterations", set(c.trimap.iterations)},
             {"far_plane", set(c.trimap.far_plane)},
         });
       }},
      {"bench", [&](const nlohmann::json& v) {
         read_section(v, "bench", {
             {"transition_only", set(c.bench.transition_only)},
             {"transition_kernel", set(c.bench.transition_kernel)},
             {"transition_iterations", set(c.bench.transition_iterations)},
             {"warmup_runs", set(c.bench.warmup_runs)},
         });
       }},
  });
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

/// Hash of the canonical (key-sorted, compact) serialization.
inline std::string config_hash(const RunConfig& c) { return fnv1a_hex(to_json(c).dump()); }

}  // namespace matteforge
