// Three-branch matting network: a low-resolution semantic branch with SE
// channel reweighting, a high-resolution detail branch, and a fusion branch.
#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "matteforge/ops.hpp"
#include "matteforge/outputs.hpp"

namespace matteforge {

struct ModelConfig {
  int base_channels = 16;
  int s_downsample_factor = 16;
  int d_channels = 16;
  int d_layers = 12;
  int d_internal_downsample = 4;
  int se_reduction = 4;
  int f_channels = 8;
  int input_height = 64;
  int input_width = 64;
  bool use_se_block = true;
  bool use_norm = false;

  [[nodiscard]] int encoder_stages() const { return std::countr_zero(static_cast<unsigned>(s_downsample_factor)); }

  /// Output channels of encoder stage i: b, then 2b for the middle stages,
  /// 4b for the last one.
  [[nodiscard]] int encoder_channels(int stage) const {
    const int last = encoder_stages() - 1;
    if (stage == last) return 4 * base_channels;
    return stage == 0 ? base_channels : 2 * base_channels;
  }
  [[nodiscard]] int semantic_channels() const { return encoder_channels(encoder_stages() - 1); }

  void validate() const {
    auto pow2 = [](int v) { return v > 0 && std::has_single_bit(static_cast<unsigned>(v)); };
    if (base_channels < 1) throw ConfigError("base_channels must be >= 1");
    if (!pow2(s_downsample_factor) || s_downsample_factor < 4) {
      throw ConfigError("s_downsample_factor must be a power of 2 and >= 4, got " + std::to_string(s_downsample_factor));
    }
    if (d_channels < 1 || d_channels > 64) {
      throw ConfigError("d_channels must be in [1, 64], got " + std::to_string(d_channels));
    }
    if (d_layers < 4) throw ConfigError("d_layers must be >= 4, got " + std::to_string(d_layers));
    if (!pow2(d_internal_downsample) || d_internal_downsample < 2 || d_internal_downsample > s_downsample_factor) {
      throw ConfigError("d_internal_downsample must be a power of 2 in [2, s_downsample_factor]");
    }
    if (se_reduction < 1 || semantic_channels() % se_reduction != 0) {
      throw ConfigError("se_reduction " + std::to_string(se_reduction) + " does not divide " +
                        std::to_string(semantic_channels()) + " semantic channels");
    }
    if (f_channels < 1) throw ConfigError("f_channels must be >= 1");
    if (input_height <= 0 || input_width <= 0 || input_height % s_downsample_factor != 0 ||
        input_width % s_downsample_factor != 0) {
      throw ConfigError("input size must be divisible by s_downsample_factor");
    }
    if (input_height % d_internal_downsample != 0 || input_width % d_internal_downsample != 0) {
      throw ConfigError("d_internal_downsample must divide the input size");
    }
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"base_channels", c.base_channels},
                     {"s_downsample_factor", c.s_downsample_factor},
                     {"d_channels", c.d_channels},
                     {"d_layers", c.d_layers},
                     {"d_internal_downsample", c.d_internal_downsample},
                     {"se_reduction", c.se_reduction},
                     {"f_channels", c.f_channels},
                     {"input_height", c.input_height},
                     {"input_width", c.input_width},
                     {"use_se_block", c.use_se_block},
                     {"use_norm", c.use_norm}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k == "base_channels") c.base_channels = it->get<int>();
    else if (k == "s_downsample_factor") c.s_downsample_factor = it->get<int>();
    else if (k == "d_channels") c.d_channels = it->get<int>();
    else if (k == "d_layers") c.d_layers = it->get<int>();
    else if (k == "d_internal_downsample") c.d_internal_downsample = it->get<int>();
    else if (k == "se_reduction") c.se_reduction = it->get<int>();
    else if (k == "f_channels") c.f_channels = it->get<int>();
    else if (k == "input_height") c.input_height = it->get<int>();
    else if (k == "input_width") c.input_width = it->get<int>();
    else if (k == "use_se_block") c.use_se_block = it->get<bool>();
    else if (k == "use_norm") c.use_norm = it->get<bool>();
    else throw ConfigError("unknown model config key '" + k + "'");
  }
}

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// layers
// ---------------------------------------------------------------------------

template <class T>
struct NormLayer {
  Tensor<T> gamma;
  Tensor<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

template <class T>
struct ConvLayer {
  Tensor<T> weight;
  Tensor<T> bias;
  int stride = 1;
  int padding = 0;
  std::optional<NormLayer<T>> norm;
};

/// Squeeze-and-excitation: two 1x1 projections around a ReLU, sigmoid gate.
template <class T>
struct SeBlock {
  ConvLayer<T> reduce;
  ConvLayer<T> expand;
  int reduction = 1;
};

namespace detail {

template <class T>
ConvLayer<T> make_conv(std::mt19937_64& rng, int cin, int cout, int k, int stride, bool norm) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(cin * k * k));
  std::normal_distribution<double> dist(0.0, stddev);
  const auto uk = static_cast<std::size_t>(k);
  std::vector<T> w(static_cast<std::size_t>(cout) * cin * uk * uk);
  for (T& v : w) v = static_cast<T>(dist(rng));
  ConvLayer<T> layer;
  layer.weight = Tensor<T>::from(Shape{static_cast<std::size_t>(cout), static_cast<std::size_t>(cin), uk, uk},
                                 std::move(w), true);
  layer.bias = Tensor<T>(Shape{1, static_cast<std::size_t>(cout), 1, 1}, T(0), true);
  layer.stride = stride;
  layer.padding = k / 2;
  if (norm) {
    const Shape cs{1, static_cast<std::size_t>(cout), 1, 1};
    layer.norm = NormLayer<T>{Tensor<T>(cs, T(1), true), Tensor<T>(cs, T(0), true), Tensor<T>(cs, T(0)),
                              Tensor<T>(cs, T(1))};
  }
  return layer;
}

template <class U, class T>
Tensor<U> deep_copy(const Tensor<T>& t, bool requires_grad) {
  if (!t.defined()) return Tensor<U>{};
  Tensor<U> c = t.template cast<U>();
  c.set_requires_grad(requires_grad);
  return c;
}

template <class U, class T>
ConvLayer<U> copy_layer(const ConvLayer<T>& l, bool requires_grad) {
  ConvLayer<U> c;
  c.weight = deep_copy<U>(l.weight, requires_grad);
  c.bias = deep_copy<U>(l.bias, requires_grad);
  c.stride = l.stride;
  c.padding = l.padding;
  if (l.norm) {
    c.norm = NormLayer<U>{deep_copy<U>(l.norm->gamma, requires_grad), deep_copy<U>(l.norm->beta, requires_grad),
                          deep_copy<U>(l.norm->running_mean, false), deep_copy<U>(l.norm->running_var, false)};
  }
  return c;
}

}  // namespace detail

/// Applies the layer: conv, optional norm, no activation.
template <class T>
Tensor<T> apply(Graph<T>& g, ConvLayer<T>& layer, const Tensor<T>& x, bool batch_stats, bool update_stats) {
  Tensor<T> y = conv2d(g, x, layer.weight, layer.bias, layer.stride, layer.padding);
  if (layer.norm) {
    NormLayer<T>& n = *layer.norm;
    y = batch_norm(g, y, n.gamma, n.beta, n.running_mean, n.running_var, batch_stats, update_stats);
  }
  return y;
}

template <class T>
SeBlock<T> make_se_block(std::mt19937_64& rng, int channels, int reduction) {
  if (reduction < 1 || channels % reduction != 0) {
    throw ConfigError("se_block: " + std::to_string(channels) + " channels not divisible by reduction " +
                      std::to_string(reduction));
  }
  return SeBlock<T>{detail::make_conv<T>(rng, channels, channels / reduction, 1, 1, false),
                    detail::make_conv<T>(rng, channels / reduction, channels, 1, 1, false), reduction};
}

/// features * sigmoid(expand(relu(reduce(gap(features))))), gate broadcast over h, w.
template <class T>
Tensor<T> se_block(Graph<T>& g, const Tensor<T>& features, SeBlock<T>& block) {
  const auto c = features.shape().c;
  if (c % static_cast<std::size_t>(block.reduction) != 0 || block.reduce.weight.shape().c != c) {
    throw ShapeError("se_block: " + std::to_string(c) + " channels incompatible with block of reduction " +
                     std::to_string(block.reduction));
  }
  Tensor<T> pooled = global_avg_pool(g, features);
  Tensor<T> hidden = relu(g, apply(g, block.reduce, pooled, false, false));
  Tensor<T> gate = sigmoid(g, apply(g, block.expand, hidden, false, false));
  return mul(g, features, gate);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <class T>
class Model {
 public:
  static Model build(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg_ = cfg;
    std::mt19937_64 rng(seed);
    const bool nb = cfg.use_norm;
    int cin = 3;
    for (int i = 0; i < cfg.encoder_stages(); ++i) {
      m.encoder_.push_back(detail::make_conv<T>(rng, cin, cfg.encoder_channels(i), 3, 2, nb));
      cin = cfg.encoder_channels(i);
    }
    const int sc = cfg.semantic_channels();
    if (cfg.use_se_block) m.se_ = make_se_block<T>(rng, sc, cfg.se_reduction);
    m.s_head_ = detail::make_conv<T>(rng, sc, 1, 1, 1, false);

    const int dc = cfg.d_channels;
    m.detail_.push_back(detail::make_conv<T>(rng, 3, dc, 3, 1, nb));
    m.detail_.push_back(detail::make_conv<T>(rng, dc + cfg.encoder_channels(0) + sc, dc, 3, 1, nb));
    for (int i = 0; i < cfg.d_layers - 4; ++i) m.detail_.push_back(detail::make_conv<T>(rng, dc, dc, 3, 1, nb));
    m.detail_.push_back(detail::make_conv<T>(rng, dc, dc, 3, 1, nb));
    m.detail_.push_back(detail::make_conv<T>(rng, dc, 1, 3, 1, false));

    const int fc = cfg.f_channels;
    m.fusion_.push_back(detail::make_conv<T>(rng, sc + dc, fc, 1, 1, nb));
    m.fusion_.push_back(detail::make_conv<T>(rng, fc, fc, 3, 1, nb));
    m.fusion_.push_back(detail::make_conv<T>(rng, fc, 1, 1, 1, false));
    return m;
  }

  [[nodiscard]] const ModelConfig& config() const { return cfg_; }

  ModelOutputs<T> forward(Graph<T>& g, const Tensor<T>& image, Mode mode = Mode::train) {
    const Shape& s = image.shape();
    const auto f = static_cast<std::size_t>(cfg_.s_downsample_factor);
    if (s.c != 3) throw ShapeError("forward: expected 3-channel input, got " + s.str());
    if (s.h % f != 0 || s.w % f != 0 || s.h % static_cast<std::size_t>(cfg_.d_internal_downsample) != 0) {
      throw ShapeError("forward: input " + s.str() + " not divisible by " + std::to_string(f));
    }
    const bool batch_stats = mode == Mode::train && !norm_frozen_;
    const bool update = batch_stats;
    auto layer = [&](ConvLayer<T>& l, const Tensor<T>& x) { return apply(g, l, x, batch_stats, update); };

    // S: strided encoder, SE reweighting, sigmoid head.
    Tensor<T> h = image;
    Tensor<T> low_level;
    for (std::size_t i = 0; i < encoder_.size(); ++i) {
      h = relu(g, layer(encoder_[i], h));
      if (i == 0) low_level = h;
    }
    Tensor<T> semantics = se_ ? se_block(g, h, *se_) : h;
    ModelOutputs<T> out;
    out.s_p = sigmoid(g, layer(s_head_, semantics));

    // D: full-res first layer (skip source) pooled to 1/dd, fused with the
    // low-level and semantic features, restored over the last two layers.
    const int dd = cfg_.d_internal_downsample;
    Tensor<T> full = relu(g, layer(detail_[0], image));
    Tensor<T> low_q = dd / 2 > 1 ? downsample_avg(g, low_level, dd / 2) : low_level;
    Tensor<T> sem_q = upsample(g, semantics, cfg_.s_downsample_factor / dd, Resample::bilinear);
    Tensor<T> z = concat_channels(g, std::vector<Tensor<T>>{downsample_avg(g, full, dd), low_q, sem_q});
    z = relu(g, layer(detail_[1], z));
    const std::size_t last = detail_.size() - 1;
    for (std::size_t i = 2; i + 1 < last; ++i) z = relu(g, layer(detail_[i], z));
    if (dd / 2 > 1) z = upsample(g, z, dd / 2, Resample::bilinear);
    z = relu(g, layer(detail_[last - 1], z));
    z = upsample(g, z, 2, Resample::bilinear);
    Tensor<T> details = add(g, z, full);
    out.d_p = sigmoid(g, layer(detail_[last], details));

    // F: upsampled semantics concatenated with the detail features.
    Tensor<T> sem_full = upsample(g, semantics, cfg_.s_downsample_factor, Resample::bilinear);
    Tensor<T> u = relu(g, layer(fusion_[0], concat_channels(g, sem_full, details)));
    u = relu(g, layer(fusion_[1], u));
    out.alpha_p = sigmoid(g, layer(fusion_[2], u));
    return out;
  }

  /// Trainable tensors in a stable order with stable names.
  std::vector<NamedTensor<T>> parameters() {
    std::vector<NamedTensor<T>> p;
    auto add_layer = [&](const std::string& name, ConvLayer<T>& l) {
      p.push_back({name + ".weight", l.weight});
      p.push_back({name + ".bias", l.bias});
      if (l.norm) {
        p.push_back({name + ".norm.gamma", l.norm->gamma});
        p.push_back({name + ".norm.beta", l.norm->beta});
      }
    };
    for (std::size_t i = 0; i < encoder_.size(); ++i) add_layer("s.enc" + std::to_string(i), encoder_[i]);
    if (se_) {
      add_layer("s.se.reduce", se_->reduce);
      add_layer("s.se.expand", se_->expand);
    }
    add_layer("s.head", s_head_);
    for (std::size_t i = 0; i < detail_.size(); ++i) add_layer("d.conv" + std::to_string(i + 1), detail_[i]);
    for (std::size_t i = 0; i < fusion_.size(); ++i) add_layer("f.conv" + std::to_string(i + 1), fusion_[i]);
    return p;
  }

  /// Norm running statistics (not trained by gradient).
  std::vector<NamedTensor<T>> buffers() {
    std::vector<NamedTensor<T>> b;
    auto add_layer = [&](const std::string& name, ConvLayer<T>& l) {
      if (!l.norm) return;
      b.push_back({name + ".norm.running_mean", l.norm->running_mean});
      b.push_back({name + ".norm.running_var", l.norm->running_var});
    };
    for (std::size_t i = 0; i < encoder_.size(); ++i) add_layer("s.enc" + std::to_string(i), encoder_[i]);
    for (std::size_t i = 0; i < detail_.size(); ++i) add_layer("d.conv" + std::to_string(i + 1), detail_[i]);
    for (std::size_t i = 0; i < fusion_.size(); ++i) add_layer("f.conv" + std::to_string(i + 1), fusion_[i]);
    return b;
  }

  /// Parameters of the semantic branch only (encoder, SE block, head).
  std::vector<NamedTensor<T>> semantic_parameters() {
    std::vector<NamedTensor<T>> out;
    for (auto& p : parameters()) {
      if (p.name.starts_with("s.")) out.push_back(p);
    }
    return out;
  }

  [[nodiscard]] std::size_t parameter_count() {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  /// Flattened parameter values in parameters() order.
  [[nodiscard]] std::vector<T> flat_parameters() {
    std::vector<T> v;
    for (const auto& p : parameters()) v.insert(v.end(), p.tensor.data().begin(), p.tensor.data().end());
    return v;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }

  /// Norm layers use their running statistics and stop updating them; their
  /// affine parameters stop requiring gradients.
  void set_norm_frozen(bool frozen) {
    norm_frozen_ = frozen;
    for (auto& p : parameters()) {
      if (p.name.find(".norm.") != std::string::npos) p.tensor.set_requires_grad(!frozen && !frozen_);
    }
  }
  [[nodiscard]] bool norm_frozen() const { return norm_frozen_; }
  [[nodiscard]] bool frozen() const { return frozen_; }

  /// Deep copy in which no parameter requires a gradient.
  [[nodiscard]] Model clone_frozen() const {
    Model m = deep_copy<T>(false);
    m.frozen_ = true;
    m.norm_frozen_ = true;
    return m;
  }

  /// Deep copy that keeps trainability.
  [[nodiscard]] Model clone() const {
    Model m = deep_copy<T>(!frozen_);
    m.frozen_ = frozen_;
    m.norm_frozen_ = norm_frozen_;
    return m;
  }

  /// Copy at another scalar precision, same trainability.
  template <class U>
  [[nodiscard]] Model<U> cast() const {
    Model<U> m = deep_copy<U>(!frozen_);
    m.frozen_ = frozen_;
    m.norm_frozen_ = norm_frozen_;
    return m;
  }

 private:
  template <class U>
  [[nodiscard]] Model<U> deep_copy(bool requires_grad) const {
    Model<U> m;
    m.cfg_ = cfg_;
    for (const auto& l : encoder_) m.encoder_.push_back(detail::copy_layer<U>(l, requires_grad));
    if (se_) {
      m.se_ = SeBlock<U>{detail::copy_layer<U>(se_->reduce, requires_grad),
                         detail::copy_layer<U>(se_->expand, requires_grad), se_->reduction};
    }
    m.s_head_ = detail::copy_layer<U>(s_head_, requires_grad);
    for (const auto& l : detail_) m.detail_.push_back(detail::copy_layer<U>(l, requires_grad));
    for (const auto& l : fusion_) m.fusion_.push_back(detail::copy_layer<U>(l, requires_grad));
    return m;
  }

  template <class>
  friend class Model;

  ModelConfig cfg_;
  std::vector<ConvLayer<T>> encoder_;
  std::optional<SeBlock<T>> se_;
  ConvLayer<T> s_head_;
  std::vector<ConvLayer<T>> detail_;
  std::vector<ConvLayer<T>> fusion_;
  bool norm_frozen_ = false;
  bool frozen_ = false;
};

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------
//
// Little-endian binary layout, version 1:
//   "MFCKPT\0\1"                       8-byte magic
//   u32 version                        = 1
//   u32 length, bytes                  model config as compact JSON
//   u32 count                          number of named arrays
//   count x { u32 name length, name bytes, u32 n, c, h, w, f64 values[n*c*h*w] }
// Parameters come first in parameters() order, then norm buffers.

inline constexpr char kCheckpointMagic[8] = {'M', 'F', 'C', 'K', 'P', 'T', '\0', '\1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint: truncated file");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline void put_f64(std::ostream& os, double d) {
  std::uint64_t v = std::bit_cast<std::uint64_t>(d);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFFu);
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline double get_f64(std::istream& is) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("checkpoint: truncated file");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(v);
}

}  // namespace detail

template <class T>
void save_checkpoint(Model<T>& model, std::ostream& os) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_u32(os, kCheckpointVersion);
  const std::string cfg = nlohmann::json(model.config()).dump();
  detail::put_u32(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  auto arrays = model.parameters();
  for (auto& b : model.buffers()) arrays.push_back(b);
  detail::put_u32(os, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    detail::put_u32(os, static_cast<std::uint32_t>(a.name.size()));
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    const Shape& s = a.tensor.shape();
    for (std::size_t d : {s.n, s.c, s.h, s.w}) detail::put_u32(os, static_cast<std::uint32_t>(d));
    for (T v : a.tensor.data()) detail::put_f64(os, static_cast<double>(v));
  }
}

template <class T>
void save_checkpoint(Model<T>& model, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  save_checkpoint(model, os);
}

template <class T>
Model<T> load_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw std::runtime_error("checkpoint: bad magic");
  }
  const std::uint32_t version = detail::get_u32(is);
  if (version != kCheckpointVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  std::string cfg_text(detail::get_u32(is), '\0');
  is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  const ModelConfig cfg = nlohmann::json::parse(cfg_text).get<ModelConfig>();
  Model<T> model = Model<T>::build(cfg, 0);
  auto arrays = model.parameters();
  for (auto& b : model.buffers()) arrays.push_back(b);
  const std::uint32_t count = detail::get_u32(is);
  if (count != arrays.size()) throw std::runtime_error("checkpoint: array count does not match config");
  for (auto& a : arrays) {
    std::string name(detail::get_u32(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    if (name != a.name) throw std::runtime_error("checkpoint: expected array '" + a.name + "', found '" + name + "'");
    Shape s;
    s.n = detail::get_u32(is);
    s.c = detail::get_u32(is);
    s.h = detail::get_u32(is);
    s.w = detail::get_u32(is);
    if (s != a.tensor.shape()) throw shape_error("checkpoint array " + name, s, a.tensor.shape());
    for (T& v : a.tensor.data()) v = static_cast<T>(detail::get_f64(is));
  }
  return model;
}

template <class T>
Model<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  return load_checkpoint<T>(is);
}

}  // namespace matteforge
