// One-frame-delay temporal smoothing of matte sequences.
//
// A pixel of frame t flickers when its two temporal neighbours agree to
// within xi while it differs from both by more than xi; such pixels are
// replaced by the neighbour mean. Decisions for every frame read the
// original input, so the filter is order independent and matches a
// streaming deployment that holds one frame back.
#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "matteforge/image.hpp"

namespace matteforge {

struct MatteSequence {
  std::vector<Matte> frames;
  std::optional<double> fps;

  void validate() const {
    if (frames.empty()) throw ShapeError("matte sequence has no frames");
    for (const Matte& f : frames) {
      if (!f.same_dims(frames.front())) throw ShapeError("matte sequence frames differ in size");
    }
  }
};

struct OfdConfig {
  double xi = 0.1;

  void validate() const {
    if (!(xi > 0.0 && xi < 1.0)) throw ConfigError("ofd xi must lie in (0,1), got " + std::to_string(xi));
  }
};

inline bool is_flicker(double a_prev, double a_cur, double a_next, double xi) {
  return std::abs(a_prev - a_next) <= xi && std::abs(a_cur - a_prev) > xi && std::abs(a_cur - a_next) > xi;
}

inline MatteSequence ofd_smooth(const MatteSequence& seq, const OfdConfig& cfg = {}) {
  cfg.validate();
  MatteSequence out = seq;
  if (seq.frames.size() < 3) return out;
  seq.validate();
  for (std::size_t t = 1; t + 1 < seq.frames.size(); ++t) {
    const Matte& prev = seq.frames[t - 1];
    const Matte& cur = seq.frames[t];
    const Matte& next = seq.frames[t + 1];
    Matte& dst = out.frames[t];
    for (std::size_t i = 0; i < cur.size(); ++i) {
      if (is_flicker(prev.values[i], cur.values[i], next.values[i], cfg.xi)) {
        dst.values[i] = (prev.values[i] + next.values[i]) / 2.0;
      }
    }
  }
  return out;
}

/// Number of pixels ofd_smooth would replace.
inline std::size_t count_flickers(const MatteSequence& seq, const OfdConfig& cfg = {}) {
  std::size_t n = 0;
  for (std::size_t t = 1; t + 1 < seq.frames.size(); ++t) {
    for (std::size_t i = 0; i < seq.frames[t].size(); ++i) {
      if (is_flicker(seq.frames[t - 1].values[i], seq.frames[t].values[i], seq.frames[t + 1].values[i], cfg.xi)) ++n;
    }
  }
  return n;
}

}  // namespace matteforge
