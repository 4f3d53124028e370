#ifndef DCL_SUPERPIX_HPP
#define DCL_SUPERPIX_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <string>
#include <utility>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/tensor.hpp"

namespace dcl {

struct LabImage {
  int h = 0;
  int w = 0;
  std::vector<std::array<double, 3>> px;  // (L*, a*, b*) row-major
};

namespace detail {

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double lab_f(double t) {
  constexpr double delta = 6.0 / 29.0;
  return t > delta * delta * delta ? std::cbrt(t) : t / (3 * delta * delta) + 4.0 / 29.0;
}

}  // namespace detail

/// sRGB in [0,1] -> linear -> XYZ (D65) -> CIELab.
inline std::array<double, 3> rgb_to_lab(double r, double g, double b) {
  const double R = detail::srgb_to_linear(r), G = detail::srgb_to_linear(g),
               B = detail::srgb_to_linear(b);
  const double X = 0.4124564 * R + 0.3575761 * G + 0.1804375 * B;
  const double Y = 0.2126729 * R + 0.7151522 * G + 0.0721750 * B;
  const double Z = 0.0193339 * R + 0.1191920 * G + 0.9503041 * B;
  constexpr double Xn = 0.95047, Yn = 1.0, Zn = 1.08883;
  const double fx = detail::lab_f(X / Xn), fy = detail::lab_f(Y / Yn), fz = detail::lab_f(Z / Zn);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

/// `image` is 1x3xHxW sRGB in [0, 1].
inline LabImage rgb_to_cielab(const Tensor& image) {
  if (image.n() != 1 || image.c() != 3) {
    throw ShapeError("rgb_to_cielab expects 1x3xHxW, got " + to_string(image.shape()));
  }
  LabImage lab{image.h(), image.w(), {}};
  lab.px.resize(static_cast<std::size_t>(image.h()) * image.w());
  const auto r = image.plane(0, 0), g = image.plane(0, 1), b = image.plane(0, 2);
  for (std::size_t i = 0; i < lab.px.size(); ++i) lab.px[i] = rgb_to_lab(r[i], g[i], b[i]);
  return lab;
}

/// Inclusive bounding box in pixel coordinates.
struct BBox {
  int y0 = 0, x0 = 0, y1 = -1, x1 = -1;
  bool empty() const { return y1 < y0 || x1 < x0; }
  int height() const { return y1 - y0 + 1; }
  int width() const { return x1 - x0 + 1; }
  void include(int y, int x) {
    if (empty()) {
      y0 = y1 = y;
      x0 = x1 = x;
      return;
    }
    y0 = std::min(y0, y);
    y1 = std::max(y1, y);
    x0 = std::min(x0, x);
    x1 = std::max(x1, x);
  }
  void include(const BBox& o) {
    if (o.empty()) return;
    include(o.y0, o.x0);
    include(o.y1, o.x1);
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

/// Per-pixel segment ids in [0, count) with derived geometry.
struct Segmentation {
  int h = 0;
  int w = 0;
  int count = 0;
  std::vector<int> labels;
  std::vector<BBox> bboxes;
  std::vector<int> sizes;
  /// Sorted ids sharing a 4-connected border.
  std::vector<std::vector<int>> adjacency;

  int label(int y, int x) const { return labels[static_cast<std::size_t>(y) * w + x]; }

  /// Relabels ids compactly in row-major order of first appearance and
  /// recomputes boxes, sizes and adjacency.
  static Segmentation from_labels(int h, int w, const std::vector<int>& raw) {
    if (raw.size() != static_cast<std::size_t>(h) * w) {
      throw ShapeError("label map size does not match " + std::to_string(h) + "x" +
                       std::to_string(w));
    }
    Segmentation s;
    s.h = h;
    s.w = w;
    s.labels.resize(raw.size());
    std::vector<int> remap;
    auto lookup = [&](int id) -> int& {
      if (id < 0) throw InvalidArgument("negative segment label");
      if (static_cast<std::size_t>(id) >= remap.size()) remap.resize(id + 1, -1);
      return remap[id];
    };
    for (std::size_t i = 0; i < raw.size(); ++i) {
      int& m = lookup(raw[i]);
      if (m < 0) m = s.count++;
      s.labels[i] = m;
    }
    s.bboxes.assign(s.count, BBox{});
    s.sizes.assign(s.count, 0);
    std::vector<std::vector<char>> adj;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int l = s.labels[static_cast<std::size_t>(y) * w + x];
        s.bboxes[l].include(y, x);
        ++s.sizes[l];
      }
    }
    s.adjacency.assign(s.count, {});
    auto link = [&](int a, int b) {
      if (a == b) return;
      s.adjacency[a].push_back(b);
      s.adjacency[b].push_back(a);
    };
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int l = s.labels[static_cast<std::size_t>(y) * w + x];
        if (x + 1 < w) link(l, s.labels[static_cast<std::size_t>(y) * w + x + 1]);
        if (y + 1 < h) link(l, s.labels[static_cast<std::size_t>(y + 1) * w + x]);
      }
    }
    for (auto& a : s.adjacency) {
      std::sort(a.begin(), a.end());
      a.erase(std::unique(a.begin(), a.end()), a.end());
    }
    return s;
  }
};

inline const std::vector<int>& segment_neighbors(const Segmentation& seg, int id) {
  if (id < 0 || id >= seg.count) {
    throw InvalidArgument("segment id " + std::to_string(id) + " out of range [0, " +
                          std::to_string(seg.count) + ")");
  }
  return seg.adjacency[id];
}

/// Number of 4-connected components of each label; all ones means every
/// segment is connected.
inline std::vector<int> component_counts(const Segmentation& seg) {
  std::vector<int> counts(seg.count, 0);
  std::vector<char> seen(seg.labels.size(), 0);
  std::vector<int> stack;
  for (std::size_t start = 0; start < seg.labels.size(); ++start) {
    if (seen[start]) continue;
    const int l = seg.labels[start];
    ++counts[l];
    seen[start] = 1;
    stack.push_back(static_cast<int>(start));
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      const int y = p / seg.w, x = p % seg.w;
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[0] >= seg.h || q[1] < 0 || q[1] >= seg.w) continue;
        const int qi = q[0] * seg.w + q[1];
        if (!seen[qi] && seg.labels[qi] == l) {
          seen[qi] = 1;
          stack.push_back(qi);
        }
      }
    }
  }
  return counts;
}

struct SlicParams {
  int max_iters = 10;
  /// Spatial compactness m; the per-step path cost is 0.5 * m / S.
  double compactness = 10.0;
  /// Stop once fewer than this fraction of pixels change label.
  double min_change_fraction = 0.01;
};

namespace detail {

struct Cluster {
  double y = 0, x = 0;
  std::array<double, 3> lab{};
};

/// Reassigns every orphan component (not the largest piece of its label) to
/// its largest adjacent segment until all labels are 4-connected.
inline void absorb_orphans(int h, int w, std::vector<int>& labels) {
  const std::size_t N = labels.size();
  std::vector<int> comp(N, -1);
  std::vector<int> comp_label, comp_size;
  std::vector<int> stack;
  for (std::size_t s = 0; s < N; ++s) {
    if (comp[s] >= 0) continue;
    const int id = static_cast<int>(comp_label.size());
    comp_label.push_back(labels[s]);
    comp_size.push_back(0);
    comp[s] = id;
    stack.push_back(static_cast<int>(s));
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      ++comp_size[id];
      const int y = p / w, x = p % w;
      const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
      for (const auto& q : nb) {
        if (q[0] < 0 || q[0] >= h || q[1] < 0 || q[1] >= w) continue;
        const int qi = q[0] * w + q[1];
        if (comp[qi] < 0 && labels[qi] == labels[s]) {
          comp[qi] = id;
          stack.push_back(qi);
        }
      }
    }
  }
  const int C = static_cast<int>(comp_label.size());
  int max_label = 0;
  for (int l : comp_label) max_label = std::max(max_label, l);
  std::vector<int> main_comp(max_label + 1, -1);
  for (int c = 0; c < C; ++c) {
    int& m = main_comp[comp_label[c]];
    if (m < 0 || comp_size[c] > comp_size[m]) m = c;
  }
  std::vector<char> settled(C, 0);
  std::vector<int> label_size(max_label + 1, 0);
  int orphans = 0;
  for (int c = 0; c < C; ++c) {
    settled[c] = main_comp[comp_label[c]] == c;
    if (settled[c]) label_size[comp_label[c]] += comp_size[c];
    else ++orphans;
  }
  if (orphans == 0) return;

  std::vector<std::vector<int>> comp_adj(C);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int a = comp[y * w + x];
      if (x + 1 < w && comp[y * w + x + 1] != a) {
        comp_adj[a].push_back(comp[y * w + x + 1]);
        comp_adj[comp[y * w + x + 1]].push_back(a);
      }
      if (y + 1 < h && comp[(y + 1) * w + x] != a) {
        comp_adj[a].push_back(comp[(y + 1) * w + x]);
        comp_adj[comp[(y + 1) * w + x]].push_back(a);
      }
    }
  }
  while (orphans > 0) {
    bool progressed = false;
    for (int c = 0; c < C; ++c) {
      if (settled[c]) continue;
      int best = -1;
      for (int n : comp_adj[c]) {
        if (!settled[n]) continue;
        const int l = comp_label[n];
        if (best < 0 || label_size[l] > label_size[best] ||
            (label_size[l] == label_size[best] && l < best)) {
          best = l;
        }
      }
      if (best < 0) continue;
      comp_label[c] = best;
      label_size[best] += comp_size[c];
      settled[c] = 1;
      --orphans;
      progressed = true;
    }
    if (!progressed) break;  // unreachable on a connected grid
  }
  for (std::size_t p = 0; p < N; ++p) labels[p] = comp_label[comp[p]];
}

}  // namespace detail

/// SLIC-style clustering where pixels join the seed with the smallest
/// geodesic distance: shortest 4-connected path with step cost
/// ||Lab(p) - Lab(q)|| + 0.5 * m / S, searched within a 2S x 2S window per
/// seed. Returns 4-connected segments.
inline Segmentation slic_geodesic(const LabImage& lab, int K, const SlicParams& params = {}) {
  const int H = lab.h, W = lab.w;
  const long long N = static_cast<long long>(H) * W;
  if (K < 1) throw InvalidArgument("superpixel count K must be >= 1");
  if (K > N) {
    throw InvalidArgument("superpixel count K=" + std::to_string(K) + " exceeds pixel count " +
                          std::to_string(N));
  }
  const double S = std::sqrt(static_cast<double>(N) / K);
  const int nx = std::clamp(static_cast<int>(std::lround(W / S)), 1, W);
  const int ny = std::clamp(static_cast<int>(std::lround(H / S)), 1, H);
  const double step_cost = 0.5 * params.compactness / S;

  std::vector<detail::Cluster> clusters;
  for (int i = 0; i < ny; ++i) {
    for (int j = 0; j < nx; ++j) {
      detail::Cluster c;
      c.y = (i + 0.5) * H / ny - 0.5;
      c.x = (j + 0.5) * W / nx - 0.5;
      clusters.push_back(c);
    }
  }
  const int Kc = static_cast<int>(clusters.size());
  std::vector<int> labels(N, -1);

  // Seed pixel: the member (or, initially, any pixel) nearest the centre.
  auto nearest_pixel = [&](const detail::Cluster& c, int k, bool members_only) {
    const int ry = std::clamp(static_cast<int>(std::floor(c.y)), 0, H - 1);
    const int rx = std::clamp(static_cast<int>(std::floor(c.x)), 0, W - 1);
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (int radius = 0; radius <= std::max(H, W); ++radius) {
      for (int y = std::max(0, ry - radius); y <= std::min(H - 1, ry + radius); ++y) {
        for (int x = std::max(0, rx - radius); x <= std::min(W - 1, rx + radius); ++x) {
          const int p = y * W + x;
          if (members_only && labels[p] != k) continue;
          const double d = (y - c.y) * (y - c.y) + (x - c.x) * (x - c.x);
          if (d < best_d || (d == best_d && p < best)) {
            best_d = d;
            best = p;
          }
        }
      }
      // Any pixel outside the current square is farther than `radius`.
      if (best >= 0 && best_d <= static_cast<double>(radius) * radius) break;
    }
    return best;
  };

  std::vector<double> best(N);
  std::vector<double> dist(N);
  std::vector<int> touched;
  using Item = std::pair<double, int>;
  const int win = static_cast<int>(std::ceil(S));

  for (int iter = 0; iter < std::max(1, params.max_iters); ++iter) {
    std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
    std::vector<int> next(N, -1);
    std::fill(dist.begin(), dist.end(), std::numeric_limits<double>::infinity());
    for (int k = 0; k < Kc; ++k) {
      const auto& c = clusters[k];
      const int seed = nearest_pixel(c, k, iter > 0);
      if (seed < 0) continue;  // cluster emptied out
      const int y0 = std::max(0, static_cast<int>(std::floor(c.y)) - win);
      const int y1 = std::min(H - 1, static_cast<int>(std::ceil(c.y)) + win);
      const int x0 = std::max(0, static_cast<int>(std::floor(c.x)) - win);
      const int x1 = std::min(W - 1, static_cast<int>(std::ceil(c.x)) + win);
      std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
      dist[seed] = 0.0;
      touched.push_back(seed);
      pq.emplace(0.0, seed);
      while (!pq.empty()) {
        const auto [d, p] = pq.top();
        pq.pop();
        if (d > dist[p]) continue;
        if (d < best[p]) {
          best[p] = d;
          next[p] = k;
        }
        const int y = p / W, x = p % W;
        const int nb[4][2] = {{y - 1, x}, {y + 1, x}, {y, x - 1}, {y, x + 1}};
        for (const auto& q : nb) {
          if (q[0] < y0 || q[0] > y1 || q[1] < x0 || q[1] > x1) continue;
          const int qi = q[0] * W + q[1];
          const auto& a = lab.px[p];
          const auto& b = lab.px[qi];
          const double dc = std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                                      (a[2] - b[2]) * (a[2] - b[2]));
          const double nd = d + dc + step_cost;
          if (nd < dist[qi]) {
            if (std::isinf(dist[qi])) touched.push_back(qi);
            dist[qi] = nd;
            pq.emplace(nd, qi);
          }
        }
      }
      for (int p : touched) dist[p] = std::numeric_limits<double>::infinity();
      touched.clear();
    }
    long long changed = 0;
    for (long long p = 0; p < N; ++p) {
      if (next[p] < 0) next[p] = labels[p];  // outside every window: keep
      if (next[p] != labels[p]) ++changed;
    }
    labels.swap(next);
    if (std::any_of(labels.begin(), labels.end(), [](int l) { return l < 0; })) {
      // Only possible on the first pass; fall back to the nearest grid cell.
      for (long long p = 0; p < N; ++p) {
        if (labels[p] >= 0) continue;
        const int y = static_cast<int>(p / W), x = static_cast<int>(p % W);
        labels[p] = std::min(ny - 1, y * ny / H) * nx + std::min(nx - 1, x * nx / W);
      }
    }

    std::vector<detail::Cluster> acc(Kc);
    std::vector<long long> cnt(Kc, 0);
    for (long long p = 0; p < N; ++p) {
      const int k = labels[p];
      acc[k].y += static_cast<double>(p / W);
      acc[k].x += static_cast<double>(p % W);
      for (int ch = 0; ch < 3; ++ch) acc[k].lab[ch] += lab.px[p][ch];
      ++cnt[k];
    }
    for (int k = 0; k < Kc; ++k) {
      if (cnt[k] == 0) continue;
      clusters[k].y = acc[k].y / cnt[k];
      clusters[k].x = acc[k].x / cnt[k];
      for (int ch = 0; ch < 3; ++ch) clusters[k].lab[ch] = acc[k].lab[ch] / cnt[k];
    }
    if (iter > 0 && static_cast<double>(changed) < params.min_change_fraction * N) break;
  }
  detail::absorb_orphans(H, W, labels);
  return Segmentation::from_labels(H, W, labels);
}

/// Boundary pixels: any 4-neighbour carries a different label.
inline std::vector<char> segment_boundaries(const Segmentation& seg) {
  std::vector<char> b(seg.labels.size(), 0);
  for (int y = 0; y < seg.h; ++y) {
    for (int x = 0; x < seg.w; ++x) {
      const int l = seg.label(y, x);
      if ((x + 1 < seg.w && seg.label(y, x + 1) != l) ||
          (y + 1 < seg.h && seg.label(y + 1, x) != l) || (x > 0 && seg.label(y, x - 1) != l) ||
          (y > 0 && seg.label(y - 1, x) != l)) {
        b[static_cast<std::size_t>(y) * seg.w + x] = 1;
      }
    }
  }
  return b;
}

}  // namespace dcl

#endif  // DCL_SUPERPIX_HPP
