#ifndef DCL_SYNTH_HPP
#define DCL_SYNTH_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/rng.hpp"
#include "dcl/tensor.hpp"

namespace dcl {

/// A synthetic scene and its exact foreground mask.
struct SynthImage {
  Tensor image;  // 1x3xHxW in [0, 1]
  Tensor gt;     // 1x1xHxW binary
};

namespace detail {

enum class ShapeKind { kEllipse, kRectangle, kTriangle };

struct SynthShape {
  ShapeKind kind;
  double cy, cx, ry, rx, angle;

  /// Pixel-centre membership test.
  bool contains(double y, double x) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (c * (x - cx) + s * (y - cy)) / rx;
    const double v = (-s * (x - cx) + c * (y - cy)) / ry;
    switch (kind) {
      case ShapeKind::kEllipse:
        return u * u + v * v <= 1.0;
      case ShapeKind::kRectangle:
        return std::abs(u) <= 1.0 && std::abs(v) <= 1.0;
      case ShapeKind::kTriangle:
        return v <= 1.0 && v >= 2.0 * std::abs(u) - 1.0;
    }
    return false;
  }
};

inline std::array<double, 3> random_color(Rng& rng, double lo, double hi) {
  return {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)};
}

}  // namespace detail

/// Textured background (two-tone stripes plus noise) with one or two
/// saturated shapes in the foreground. Deterministic in `seed`.
inline SynthImage make_synthetic(int h, int w, std::uint64_t seed) {
  if (h < 8 || w < 8) throw InvalidArgument("synthetic images need at least 8x8 pixels");
  Rng rng(seed);
  SynthImage out{Tensor(1, 3, h, w), Tensor(1, 1, h, w)};

  const auto bg_a = detail::random_color(rng, 0.15, 0.45);
  const auto bg_b = detail::random_color(rng, 0.15, 0.45);
  const double freq = rng.uniform(0.15, 0.45);
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double ct = std::cos(theta), st = std::sin(theta);

  std::vector<detail::SynthShape> shapes;
  const int count = 1 + static_cast<int>(rng.below(2));
  const double side = std::min(h, w);
  for (int k = 0; k < count; ++k) {
    detail::SynthShape s{};
    s.kind = static_cast<detail::ShapeKind>(rng.below(3));
    s.ry = rng.uniform(0.12, 0.25) * side;
    s.rx = rng.uniform(0.12, 0.25) * side;
    const double margin = std::max(s.ry, s.rx) + 2.0;
    s.cy = rng.uniform(margin, std::max(margin, h - 1 - margin));
    s.cx = rng.uniform(margin, std::max(margin, w - 1 - margin));
    s.angle = rng.uniform(0.0, std::numbers::pi);
    shapes.push_back(s);
  }
  std::vector<std::array<double, 3>> fg;
  for (int k = 0; k < count; ++k) {
    auto c = detail::random_color(rng, 0.0, 1.0);
    c[rng.below(3)] = rng.uniform(0.85, 1.0);  // one saturated channel
    fg.push_back(c);
  }

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int hit = -1;
      for (int k = 0; k < count; ++k) {
        if (shapes[k].contains(y, x)) hit = k;
      }
      std::array<double, 3> c;
      if (hit >= 0) {
        c = fg[hit];
        out.gt.at(0, 0, y, x) = 1.0;
      } else {
        const double t = 0.5 + 0.5 * std::sin(freq * (ct * x + st * y));
        for (int ch = 0; ch < 3; ++ch) c[ch] = t * bg_a[ch] + (1 - t) * bg_b[ch];
      }
      for (int ch = 0; ch < 3; ++ch) {
        out.image.at(0, ch, y, x) = std::clamp(c[ch] + rng.uniform(-0.03, 0.03), 0.0, 1.0);
      }
    }
  }
  return out;
}

inline std::vector<SynthImage> synthetic_corpus(int count, int h, int w, std::uint64_t seed) {
  std::vector<SynthImage> out;
  Rng seeds(seed);
  for (int i = 0; i < count; ++i) out.push_back(make_synthetic(h, w, seeds.next()));
  return out;
}

}  // namespace dcl

#endif  // DCL_SYNTH_HPP
