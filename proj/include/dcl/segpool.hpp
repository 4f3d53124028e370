#ifndef DCL_SEGPOOL_HPP
#define DCL_SEGPOOL_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/layers.hpp"
#include "dcl/msfcn.hpp"
#include "dcl/rng.hpp"
#include "dcl/superpix.hpp"
#include "dcl/tensor.hpp"

namespace dcl {

/// Where each conv5_3 activation sits in the input image.
struct FeatureGeometry {
  int channels = 0;
  int feature_h = 0, feature_w = 0;
  int image_h = 0, image_w = 0;
  std::vector<double> center_y;  // per feature row
  std::vector<double> center_x;  // per feature column
  /// Nearest activation row/column for every image row/column (ties go to
  /// the smaller index).
  std::vector<int> assign_y;
  std::vector<int> assign_x;

  static FeatureGeometry from_centers(int channels, std::vector<double> cy,
                                      std::vector<double> cx, int image_h, int image_w) {
    FeatureGeometry g;
    g.channels = channels;
    g.feature_h = static_cast<int>(cy.size());
    g.feature_w = static_cast<int>(cx.size());
    g.image_h = image_h;
    g.image_w = image_w;
    g.center_y = std::move(cy);
    g.center_x = std::move(cx);
    auto nearest = [](const std::vector<double>& centers, int n) {
      std::vector<int> a(n);
      for (int p = 0; p < n; ++p) {
        int best = 0;
        for (int k = 1; k < static_cast<int>(centers.size()); ++k) {
          if (std::abs(centers[k] - p) < std::abs(centers[best] - p)) best = k;
        }
        a[p] = best;
      }
      return a;
    };
    g.assign_y = nearest(g.center_y, image_h);
    g.assign_x = nearest(g.center_x, image_w);
    return g;
  }
};

/// Geometry of `net`'s conv5_3 for an image of H x W pixels.
inline FeatureGeometry feature_geometry(const MsFcn& net, int H, int W) {
  const auto shapes = net.infer_shapes(H, W);
  const auto [gh, gw] = net.conv5_3_geometry();
  std::vector<double> cy(shapes.conv5_3.h), cx(shapes.conv5_3.w);
  for (int i = 0; i < shapes.conv5_3.h; ++i) {
    cy[i] = receptive_field_center(gh, gw, shapes.conv5_3.h, shapes.conv5_3.w, i, 0).y;
  }
  for (int j = 0; j < shapes.conv5_3.w; ++j) {
    cx[j] = receptive_field_center(gh, gw, shapes.conv5_3.h, shapes.conv5_3.w, 0, j).x;
  }
  return FeatureGeometry::from_centers(shapes.conv5_3.c, std::move(cy), std::move(cx), H, W);
}

/// Binary map over the feature grid.
struct SegmentMask {
  int h = 0, w = 0;
  std::vector<char> bits;
  bool at(int y, int x) const { return bits[static_cast<std::size_t>(y) * w + x] != 0; }
  bool empty() const { return std::none_of(bits.begin(), bits.end(), [](char b) { return b; }); }
  std::size_t popcount() const { return std::count(bits.begin(), bits.end(), 1); }
};

/// Inclusive window on the feature grid.
struct FeatureBox {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  int height() const { return y1 - y0 + 1; }
  int width() const { return x1 - x0 + 1; }
  friend bool operator==(const FeatureBox&, const FeatureBox&) = default;
};

/// Fraction of each activation's assigned pixels that belong to each
/// segment, for all segments at once. `fraction[id][a]`, a = row-major index.
struct MaskFractions {
  std::vector<std::vector<double>> fraction;
};

inline MaskFractions mask_fractions(const Segmentation& seg, const FeatureGeometry& geom) {
  if (seg.h != geom.image_h || seg.w != geom.image_w) {
    throw ShapeError("segmentation does not match the feature geometry's image size");
  }
  const std::size_t A = static_cast<std::size_t>(geom.feature_h) * geom.feature_w;
  std::vector<int> cell(A, 0);
  MaskFractions m;
  m.fraction.assign(seg.count, std::vector<double>(A, 0.0));
  for (int y = 0; y < seg.h; ++y) {
    for (int x = 0; x < seg.w; ++x) {
      const std::size_t a = static_cast<std::size_t>(geom.assign_y[y]) * geom.feature_w +
                            geom.assign_x[x];
      ++cell[a];
      m.fraction[seg.label(y, x)][a] += 1.0;
    }
  }
  for (auto& f : m.fraction) {
    for (std::size_t a = 0; a < A; ++a) {
      if (cell[a] > 0) f[a] /= cell[a];
    }
  }
  return m;
}

/// Each pixel's in-segment label goes to the activation with the nearest
/// receptive-field centre; an activation is on when strictly more than half
/// of its pixels are in the segment. May be empty for tiny segments.
inline SegmentMask backproject_mask(const Segmentation& seg, int id, const FeatureGeometry& geom) {
  if (id < 0 || id >= seg.count) throw InvalidArgument("segment id out of range");
  if (seg.h != geom.image_h || seg.w != geom.image_w) {
    throw ShapeError("segmentation does not match the feature geometry's image size");
  }
  const std::size_t A = static_cast<std::size_t>(geom.feature_h) * geom.feature_w;
  std::vector<int> cell(A, 0), inside(A, 0);
  for (int y = 0; y < seg.h; ++y) {
    for (int x = 0; x < seg.w; ++x) {
      const std::size_t a = static_cast<std::size_t>(geom.assign_y[y]) * geom.feature_w +
                            geom.assign_x[x];
      ++cell[a];
      if (seg.label(y, x) == id) ++inside[a];
    }
  }
  SegmentMask m{geom.feature_h, geom.feature_w, std::vector<char>(A, 0)};
  for (std::size_t a = 0; a < A; ++a) m.bits[a] = 2 * inside[a] > cell[a];
  return m;
}

/// Feature-grid box covering every activation that received a pixel of `box`.
inline FeatureBox to_feature_box(const BBox& box, const FeatureGeometry& geom) {
  return {geom.assign_y[box.y0], geom.assign_x[box.x0], geom.assign_y[box.y1],
          geom.assign_x[box.x1]};
}

/// Cell k of a length-L window split into g cells covers [k s, (k+1) s)
/// with s = floor(L / g); the last cell runs to L and absorbs the remainder.
/// Windows shorter than the grid repeat activations so no cell is empty.
inline std::pair<int, int> pool_cell(int k, int length, int cells) {
  if (length < cells) {
    const int lo = std::min(k, length - 1);
    return {lo, lo + 1};
  }
  const int s = length / cells;
  return {k * s, k + 1 == cells ? length : (k + 1) * s};
}

/// Max-pools `featmap` (1 x C x Hf x Wf) over `window` split into
/// grid_h x grid_w cells. With a mask, activations where the mask is off
/// contribute 0. Output index is (c * grid_h + cy) * grid_w + cx.
inline std::vector<double> spatial_pool(const Tensor& featmap, const FeatureBox& window,
                                        int grid_h, int grid_w,
                                        const SegmentMask* mask = nullptr) {
  if (window.y0 < 0 || window.x0 < 0 || window.y1 >= featmap.h() || window.x1 >= featmap.w() ||
      window.height() < 1 || window.width() < 1) {
    throw ShapeError("spatial_pool window empty or outside the feature map");
  }
  if (grid_h < 1 || grid_w < 1) throw InvalidArgument("pooling grid must be >= 1x1");
  if (mask && (mask->h != featmap.h() || mask->w != featmap.w())) {
    throw ShapeError("pool mask does not match the feature map");
  }
  const int C = featmap.c(), Wf = featmap.w();
  std::vector<double> out(static_cast<std::size_t>(C) * grid_h * grid_w);
  for (int gy = 0; gy < grid_h; ++gy) {
    const auto [ry0, ry1] = pool_cell(gy, window.height(), grid_h);
    for (int gx = 0; gx < grid_w; ++gx) {
      const auto [rx0, rx1] = pool_cell(gx, window.width(), grid_w);
      for (int c = 0; c < C; ++c) {
        const auto plane = featmap.plane(0, c);
        double best = -std::numeric_limits<double>::infinity();
        for (int y = window.y0 + ry0; y < window.y0 + ry1; ++y) {
          for (int x = window.x0 + rx0; x < window.x0 + rx1; ++x) {
            const double v = (!mask || mask->at(y, x)) ? plane[y * Wf + x] : 0.0;
            best = std::max(best, v);
          }
        }
        out[(static_cast<std::size_t>(c) * grid_h + gy) * grid_w + gx] = best;
      }
    }
  }
  return out;
}

struct PoolGrid {
  int h = 2;
  int w = 2;
};

inline std::size_t segment_feature_length(int channels, PoolGrid grid) {
  return 3u * static_cast<std::size_t>(grid.h) * grid.w * channels;
}

namespace detail {

/// Mask with the empty-mask fallback applied: the single activation that
/// receives the segment's (rounded) centroid pixel.
inline SegmentMask mask_or_centroid(SegmentMask m, const Segmentation& seg, int id,
                                    const FeatureGeometry& geom) {
  if (!m.empty()) return m;
  double sy = 0, sx = 0;
  long long n = 0;
  const BBox& b = seg.bboxes[id];
  for (int y = b.y0; y <= b.y1; ++y) {
    for (int x = b.x0; x <= b.x1; ++x) {
      if (seg.label(y, x) != id) continue;
      sy += y;
      sx += x;
      ++n;
    }
  }
  const int cy = std::clamp(static_cast<int>(std::lround(sy / n)), 0, seg.h - 1);
  const int cx = std::clamp(static_cast<int>(std::lround(sx / n)), 0, seg.w - 1);
  m.bits[static_cast<std::size_t>(geom.assign_y[cy]) * m.w + geom.assign_x[cx]] = 1;
  return m;
}

inline std::vector<double> segment_feature_from_mask(const Tensor& conv5_3,
                                                     const Segmentation& seg, int id,
                                                     const FeatureGeometry& geom, PoolGrid grid,
                                                     const SegmentMask& mask) {
  std::vector<double> feat;
  feat.reserve(segment_feature_length(conv5_3.c(), grid));
  const FeatureBox own = to_feature_box(seg.bboxes[id], geom);
  BBox context = seg.bboxes[id];
  for (int n : seg.adjacency[id]) context.include(seg.bboxes[n]);
  const FeatureBox ctx = to_feature_box(context, geom);
  const FeatureBox whole{0, 0, conv5_3.h() - 1, conv5_3.w() - 1};
  SegmentMask outside = mask;
  for (auto& b : outside.bits) b = !b;

  auto append = [&](const std::vector<double>& v) { feat.insert(feat.end(), v.begin(), v.end()); };
  append(spatial_pool(conv5_3, own, grid.h, grid.w, &mask));
  append(spatial_pool(conv5_3, ctx, grid.h, grid.w));
  append(spatial_pool(conv5_3, whole, grid.h, grid.w, &outside));
  return feat;
}

inline void check_feature_inputs(const Tensor& conv5_3, const FeatureGeometry& geom) {
  if (conv5_3.n() != 1 || conv5_3.h() != geom.feature_h || conv5_3.w() != geom.feature_w) {
    throw ShapeError("conv5_3 " + to_string(conv5_3.shape()) +
                     " does not match the feature geometry");
  }
}

}  // namespace detail

/// Concatenated pooling over three nested windows: the segment's own box
/// (in-segment activations only), the box around the segment and its
/// immediate neighbours, and the whole map with the segment zeroed out.
inline std::vector<double> segment_feature(const Tensor& conv5_3, const Segmentation& seg, int id,
                                           const FeatureGeometry& geom, PoolGrid grid = {}) {
  detail::check_feature_inputs(conv5_3, geom);
  if (id < 0 || id >= seg.count) throw InvalidArgument("segment id out of range");
  const SegmentMask mask =
      detail::mask_or_centroid(backproject_mask(seg, id, geom), seg, id, geom);
  return detail::segment_feature_from_mask(conv5_3, seg, id, geom, grid, mask);
}

/// Features of every segment of `seg`, sharing one pass over the pixels.
inline std::vector<std::vector<double>> segment_features(const Tensor& conv5_3,
                                                         const Segmentation& seg,
                                                         const FeatureGeometry& geom,
                                                         PoolGrid grid = {}) {
  detail::check_feature_inputs(conv5_3, geom);
  const MaskFractions fr = mask_fractions(seg, geom);
  std::vector<std::vector<double>> out(seg.count);
  for (int id = 0; id < seg.count; ++id) {
    SegmentMask m{geom.feature_h, geom.feature_w, std::vector<char>(fr.fraction[id].size(), 0)};
    for (std::size_t a = 0; a < m.bits.size(); ++a) m.bits[a] = fr.fraction[id][a] > 0.5;
    m = detail::mask_or_centroid(std::move(m), seg, id, geom);
    out[id] = detail::segment_feature_from_mask(conv5_3, seg, id, geom, grid, m);
  }
  return out;
}

/// Binary rows: little-endian uint32 segment id followed by the feature as
/// little-endian float64.
inline void write_segment_features(std::ostream& os,
                                   const std::vector<std::vector<double>>& features) {
  for (std::size_t id = 0; id < features.size(); ++id) {
    const auto v = static_cast<std::uint32_t>(id);
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
    for (double d : features[id]) {
      const auto bits = std::bit_cast<std::uint64_t>(d);
      unsigned char e[8];
      for (int k = 0; k < 8; ++k) e[k] = static_cast<unsigned char>(bits >> (8 * k));
      os.write(reinterpret_cast<const char*>(e), 8);
    }
  }
}

// ---------------------------------------------------------------------------
// Segment regressor: affine -> ReLU -> affine -> ReLU -> affine -> sigmoid.

struct RegressorCache {
  std::vector<double> input, h1, h2;
  double score = 0.0;
};

class SegmentRegressor {
 public:
  SegmentRegressor() = default;

  static SegmentRegressor build(int input_dim, int hidden, std::uint64_t seed) {
    if (input_dim < 1 || hidden < 1) throw ConfigError("regressor dims must be >= 1");
    SegmentRegressor r;
    r.fc1_ = LayerParams::affine(input_dim, hidden);
    r.fc2_ = LayerParams::affine(hidden, hidden);
    r.out_ = LayerParams::affine(hidden, 1);
    Rng rng(seed);
    for (LayerParams* p : {&r.fc1_, &r.fc2_, &r.out_}) {
      const double bound = std::sqrt(6.0 / p->weights.w());
      for (double& v : p->weights.data()) v = rng.uniform(-bound, bound);
    }
    return r;
  }

  int input_dim() const { return fc1_.weights.w(); }
  int hidden_dim() const { return fc1_.weights.h(); }

  double forward(std::span<const double> feature, RegressorCache* cache = nullptr) const {
    if (static_cast<int>(feature.size()) != input_dim()) {
      throw ShapeError("segment feature length " + std::to_string(feature.size()) +
                       " does not match regressor input " + std::to_string(input_dim()));
    }
    std::vector<double> h1 = affine_forward(feature, fc1_);
    relu_inplace(h1);
    std::vector<double> h2 = affine_forward(h1, fc2_);
    relu_inplace(h2);
    const double score = sigmoid(affine_forward(h2, out_)[0]);
    if (cache) {
      cache->input.assign(feature.begin(), feature.end());
      cache->h1 = std::move(h1);
      cache->h2 = std::move(h2);
      cache->score = score;
    }
    return score;
  }

  /// Accumulates parameter gradients for d(loss)/d(score); returns
  /// d(loss)/d(feature).
  std::vector<double> backward(const RegressorCache& c, double grad_score) {
    const std::vector<double> gz{grad_score * c.score * (1.0 - c.score)};
    std::vector<double> g2 = affine_backward(c.h2, gz, out_);
    relu_backward_inplace(c.h2, g2);
    std::vector<double> g1 = affine_backward(c.h1, g2, fc2_);
    relu_backward_inplace(c.h1, g1);
    return affine_backward(c.input, g1, fc1_);
  }

  void zero_grad() {
    fc1_.zero_grad();
    fc2_.zero_grad();
    out_.zero_grad();
  }

  LayerParams& fc1() { return fc1_; }
  LayerParams& fc2() { return fc2_; }
  LayerParams& out() { return out_; }
  const LayerParams& fc1() const { return fc1_; }
  const LayerParams& fc2() const { return fc2_; }
  const LayerParams& out() const { return out_; }

 private:
  LayerParams fc1_, fc2_, out_;
};

/// Per-pixel mean, over scales, of the score of the pixel's segment.
inline Tensor render_s2(const std::vector<std::vector<double>>& scores,
                        const std::vector<Segmentation>& segmentations) {
  if (scores.size() != segmentations.size() || segmentations.empty()) {
    throw InvalidArgument("render_s2 needs one score list per segmentation");
  }
  const int H = segmentations[0].h, W = segmentations[0].w;
  Tensor s2(1, 1, H, W);
  for (std::size_t k = 0; k < segmentations.size(); ++k) {
    const auto& seg = segmentations[k];
    if (seg.h != H || seg.w != W) throw ShapeError("segmentations differ in size");
    if (scores[k].size() != static_cast<std::size_t>(seg.count)) {
      throw InvalidArgument("scale " + std::to_string(k) + " has " +
                            std::to_string(scores[k].size()) + " scores for " +
                            std::to_string(seg.count) + " segments");
    }
    for (std::size_t p = 0; p < seg.labels.size(); ++p) s2[p] += scores[k][seg.labels[p]];
  }
  const double inv = 1.0 / static_cast<double>(segmentations.size());
  for (double& v : s2.data()) v *= inv;
  return s2;
}

}  // namespace dcl

#endif  // DCL_SEGPOOL_HPP
