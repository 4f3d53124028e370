#ifndef DCL_DENSECRF_HPP
#define DCL_DENSECRF_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <thread>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/tensor.hpp"

namespace dcl {

/// Binary fully connected CRF over pixels.
///
/// Pairwise term for l_i != l_j:
///   w1 * exp(-|p_i - p_j|^2 / 2 sa^2 - |I_i - I_j|^2 / 2 sb^2) + w2 * exp(-|p_i - p_j|^2 / 2 sg^2)
/// with p in pixels and I the RGB vector on a 0..255 scale.
struct CrfParams {
  double w1 = 3.0;
  double w2 = 5.0;
  double sigma_alpha = 3.0;
  double sigma_beta = 50.0;
  double sigma_gamma = 3.0;
  int iterations = 10;
  /// 0 sums over every pixel pair. A positive value k restricts messages
  /// to a (2r+1)^2 window with r = ceil(k * max(sigma_alpha, sigma_gamma));
  /// that path is an approximation.
  double truncate_sigmas = 0.0;
  /// Clamp for log-probabilities.
  double epsilon = 1e-8;
  int threads = 1;

  void validate() const {
    if (!(w1 >= 0 && w2 >= 0)) throw ConfigError("CRF kernel weights must be >= 0");
    if (!(sigma_alpha > 0 && sigma_beta > 0 && sigma_gamma > 0)) {
      throw ConfigError("CRF bandwidths must be positive");
    }
    if (iterations < 0) throw ConfigError("CRF iterations must be >= 0");
    if (truncate_sigmas < 0) throw ConfigError("CRF truncate_sigmas must be >= 0");
    if (!(epsilon > 0 && epsilon < 0.5)) throw ConfigError("CRF epsilon must lie in (0, 0.5)");
  }
  bool approximate() const { return truncate_sigmas > 0; }
};

namespace detail {

struct CrfImage {
  int h = 0, w = 0;
  std::vector<double> rgb;  // interleaved, 0..255
};

inline CrfImage crf_image(const Tensor& image) {
  if (image.n() != 1 || image.c() != 3) {
    throw ShapeError("CRF image must be 1x3xHxW, got " + to_string(image.shape()));
  }
  CrfImage im{image.h(), image.w(), {}};
  const std::size_t N = static_cast<std::size_t>(im.h) * im.w;
  im.rgb.resize(3 * N);
  for (int c = 0; c < 3; ++c) {
    const auto p = image.plane(0, c);
    for (std::size_t i = 0; i < N; ++i) im.rgb[3 * i + c] = 255.0 * p[i];
  }
  return im;
}

inline double color_dist2(const CrfImage& im, std::size_t i, std::size_t j) {
  const double dr = im.rgb[3 * i] - im.rgb[3 * j];
  const double dg = im.rgb[3 * i + 1] - im.rgb[3 * j + 1];
  const double db = im.rgb[3 * i + 2] - im.rgb[3 * j + 2];
  return dr * dr + dg * dg + db * db;
}

/// Combined Potts kernel k(i, j); spatial distance passed in squared form.
inline double crf_kernel(double d2, double c2, const CrfParams& p) {
  return p.w1 * std::exp(-d2 / (2 * p.sigma_alpha * p.sigma_alpha) -
                         c2 / (2 * p.sigma_beta * p.sigma_beta)) +
         p.w2 * std::exp(-d2 / (2 * p.sigma_gamma * p.sigma_gamma));
}

}  // namespace detail

/// theta_ij(l_i, l_j) for pixels given as row-major indices.
inline double pairwise_theta(std::size_t i, std::size_t j, int li, int lj, const Tensor& image,
                             const CrfParams& params) {
  if (li == lj) return 0.0;
  const auto im = detail::crf_image(image);
  const std::size_t N = static_cast<std::size_t>(im.h) * im.w;
  if (i >= N || j >= N) throw InvalidArgument("pixel index outside image");
  const double dy = static_cast<double>(i / im.w) - static_cast<double>(j / im.w);
  const double dx = static_cast<double>(i % im.w) - static_cast<double>(j % im.w);
  return detail::crf_kernel(dy * dy + dx * dx, detail::color_dist2(im, i, j), params);
}

/// Negative log-probabilities u(1) = -log S, u(0) = -log(1 - S), clamped.
struct UnaryField {
  int h = 0, w = 0;
  std::vector<double> p1;  // clamped S
  std::vector<double> p0;  // 1 - clamped S
  double u(std::size_t i, int label) const { return -std::log(label ? p1[i] : p0[i]); }

  static UnaryField from_saliency(const Tensor& s, double epsilon) {
    UnaryField u{s.h(), s.w(), {}, {}};
    u.p1.resize(s.size());
    u.p0.resize(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!std::isfinite(s[i])) throw NumericError("non-finite saliency value");
      u.p1[i] = std::clamp(s[i], epsilon, 1.0 - epsilon);
      u.p0[i] = 1.0 - u.p1[i];
    }
    return u;
  }
};

inline constexpr std::size_t kExactCrfPixelLimit = 4096;

/// E(L) = sum_i u_i(l_i) + sum_{i<j} theta_ij(l_i, l_j) over all pairs.
inline double crf_energy(const std::vector<int>& labeling, const UnaryField& unary,
                         const Tensor& image, const CrfParams& params) {
  const auto im = detail::crf_image(image);
  const std::size_t N = static_cast<std::size_t>(im.h) * im.w;
  if (N > kExactCrfPixelLimit) {
    throw InvalidArgument("crf_energy: " + std::to_string(N) + " pixels exceeds exact limit " +
                          std::to_string(kExactCrfPixelLimit));
  }
  if (labeling.size() != N || unary.p1.size() != N) {
    throw ShapeError("labeling/unary size does not match image");
  }
  double e = 0.0;
  for (std::size_t i = 0; i < N; ++i) e += unary.u(i, labeling[i]);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = i + 1; j < N; ++j) {
      if (labeling[i] == labeling[j]) continue;
      const double dy = static_cast<double>(i / im.w) - static_cast<double>(j / im.w);
      const double dx = static_cast<double>(i % im.w) - static_cast<double>(j % im.w);
      e += detail::crf_kernel(dy * dy + dx * dx, detail::color_dist2(im, i, j), params);
    }
  }
  return e;
}

/// m1[i] = sum_{j != i} k(i,j) q_j(0); m0[i] = sum_{j != i} k(i,j) q_j(1).
struct CrfMessages {
  std::vector<double> m0;
  std::vector<double> m1;
};

/// Literal double sum over all pairs; the reference for compute_messages.
inline CrfMessages exact_message_oracle(const std::vector<double>& q1, const Tensor& image,
                                        const CrfParams& params) {
  const auto im = detail::crf_image(image);
  const std::size_t N = static_cast<std::size_t>(im.h) * im.w;
  if (N > kExactCrfPixelLimit) throw InvalidArgument("exact_message_oracle: image too large");
  if (q1.size() != N) throw ShapeError("q size does not match image");
  CrfMessages m{std::vector<double>(N, 0.0), std::vector<double>(N, 0.0)};
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      if (j == i) continue;
      const double dy = static_cast<double>(i / im.w) - static_cast<double>(j / im.w);
      const double dx = static_cast<double>(i % im.w) - static_cast<double>(j % im.w);
      const double k =
          detail::crf_kernel(dy * dy + dx * dx, detail::color_dist2(im, i, j), params);
      m.m1[i] += k * (1.0 - q1[j]);
      m.m0[i] += k * q1[j];
    }
  }
  return m;
}

namespace detail {

/// Messages for pixels [begin, end). Spatial exponentials come from a
/// lookup table over (|dy|, |dx|); only the colour term is evaluated per pair.
inline void messages_range(const CrfImage& im, const std::vector<double>& q1,
                           const CrfParams& p, int radius, const std::vector<double>& lut_a,
                           const std::vector<double>& lut_g, std::size_t begin, std::size_t end,
                           CrfMessages& m) {
  const int H = im.h, W = im.w;
  const double inv_b = 1.0 / (2 * p.sigma_beta * p.sigma_beta);
  for (std::size_t i = begin; i < end; ++i) {
    const int yi = static_cast<int>(i / W), xi = static_cast<int>(i % W);
    const int y0 = std::max(0, yi - radius), y1 = std::min(H - 1, yi + radius);
    const int x0 = std::max(0, xi - radius), x1 = std::min(W - 1, xi + radius);
    double s1 = 0.0, s0 = 0.0;
    for (int y = y0; y <= y1; ++y) {
      const std::size_t row = static_cast<std::size_t>(std::abs(y - yi)) * W;
      for (int x = x0; x <= x1; ++x) {
        const std::size_t j = static_cast<std::size_t>(y) * W + x;
        if (j == i) continue;
        const std::size_t t = row + static_cast<std::size_t>(std::abs(x - xi));
        const double k =
            p.w1 * (lut_a[t] * std::exp(-color_dist2(im, i, j) * inv_b)) + p.w2 * lut_g[t];
        s1 += k * (1.0 - q1[j]);
        s0 += k * q1[j];
      }
    }
    m.m1[i] = s1;
    m.m0[i] = s0;
  }
}

}  // namespace detail

/// Mean-field messages for the current marginals q1. Exact unless
/// params.truncate_sigmas > 0.
inline CrfMessages compute_messages(const std::vector<double>& q1, const Tensor& image,
                                    const CrfParams& params) {
  const auto im = detail::crf_image(image);
  const std::size_t N = static_cast<std::size_t>(im.h) * im.w;
  if (q1.size() != N) throw ShapeError("q size does not match image");
  int radius = std::max(im.h, im.w);
  if (params.truncate_sigmas > 0) {
    radius = std::min(radius, static_cast<int>(std::ceil(
                                  params.truncate_sigmas *
                                  std::max(params.sigma_alpha, params.sigma_gamma))));
  }
  std::vector<double> lut_a(N), lut_g(N);
  for (int dy = 0; dy < im.h; ++dy) {
    for (int dx = 0; dx < im.w; ++dx) {
      const double d2 = static_cast<double>(dy) * dy + static_cast<double>(dx) * dx;
      const std::size_t t = static_cast<std::size_t>(dy) * im.w + dx;
      lut_a[t] = std::exp(-d2 / (2 * params.sigma_alpha * params.sigma_alpha));
      lut_g[t] = std::exp(-d2 / (2 * params.sigma_gamma * params.sigma_gamma));
    }
  }
  CrfMessages m{std::vector<double>(N, 0.0), std::vector<double>(N, 0.0)};
  const int threads = std::max(1, params.threads);
  if (threads == 1 || N < 1024) {
    detail::messages_range(im, q1, params, radius, lut_a, lut_g, 0, N, m);
    return m;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (N + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    const std::size_t b = t * chunk, e = std::min(N, b + chunk);
    if (b >= e) break;
    pool.emplace_back(detail::messages_range, std::cref(im), std::cref(q1), std::cref(params),
                      radius, std::cref(lut_a), std::cref(lut_g), b, e, std::ref(m));
  }
  for (auto& th : pool) th.join();
  return m;
}

struct QField {
  std::vector<double> q0;
  std::vector<double> q1;
};

/// q_i(l) proportional to P_i(l) exp(-m_i(l)).
inline QField mean_field_update(const UnaryField& unary, const CrfMessages& m) {
  const std::size_t N = unary.p1.size();
  QField q{std::vector<double>(N), std::vector<double>(N)};
  for (std::size_t i = 0; i < N; ++i) {
    const double lo = std::min(m.m0[i], m.m1[i]);
    const double a0 = unary.p0[i] * std::exp(-(m.m0[i] - lo));
    const double a1 = unary.p1[i] * std::exp(-(m.m1[i] - lo));
    const double z = a0 + a1;
    q.q0[i] = a0 / z;
    q.q1[i] = a1 / z;
    if (!std::isfinite(q.q1[i]) || !std::isfinite(q.q0[i])) {
      throw NumericError("mean-field update produced a non-finite marginal at pixel " +
                         std::to_string(i));
    }
  }
  return q;
}

/// Runs `iterations` rounds of mean-field inference initialised from S and
/// returns the posterior q(1) as the refined map.
inline Tensor mean_field_infer(const Tensor& saliency, const Tensor& image,
                               const CrfParams& params,
                               std::vector<QField>* history = nullptr) {
  params.validate();
  if (saliency.h() != image.h() || saliency.w() != image.w() || saliency.c() != 1) {
    throw ShapeError("saliency map " + to_string(saliency.shape()) + " does not match image " +
                     to_string(image.shape()));
  }
  const UnaryField unary = UnaryField::from_saliency(saliency, params.epsilon);
  QField q{unary.p0, unary.p1};
  if (history) history->push_back(q);
  for (int it = 0; it < params.iterations; ++it) {
    q = mean_field_update(unary, compute_messages(q.q1, image, params));
    if (history) history->push_back(q);
  }
  Tensor out(1, 1, saliency.h(), saliency.w());
  std::copy(q.q1.begin(), q.q1.end(), out.data().begin());
  return out;
}

}  // namespace dcl

#endif  // DCL_DENSECRF_HPP
