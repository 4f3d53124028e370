#ifndef DCL_EVALKIT_HPP
#define DCL_EVALKIT_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/tensor.hpp"

namespace dcl {

inline constexpr int kThresholdCount = 256;
inline constexpr double kDefaultBetaSquared = 0.3;

/// Threshold k of the evaluation grid: k / 256.
inline double threshold_at(int k) { return static_cast<double>(k) / kThresholdCount; }

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

struct PRPoint {
  double threshold = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

using PRCurve = std::vector<PRPoint>;

namespace detail {

inline void check_pair(const Tensor& map, const Tensor& gt) {
  if (map.size() != gt.size() || map.h() != gt.h() || map.w() != gt.w()) {
    throw ShapeError("saliency map " + to_string(map.shape()) + " and ground truth " +
                     to_string(gt.shape()) + " differ in size");
  }
}

inline bool salient(double g) { return g >= 0.5; }

inline std::size_t positives(const Tensor& gt) {
  return static_cast<std::size_t>(
      std::count_if(gt.data().begin(), gt.data().end(), [](double g) { return salient(g); }));
}

}  // namespace detail

/// Precision/recall of the mask (map > t). An empty prediction scores
/// precision 0. Returns nullopt when the ground truth has no salient pixel
/// (recall undefined); such images are left out of dataset averages.
inline std::optional<PrecisionRecall> pr_at_threshold(const Tensor& map, const Tensor& gt,
                                                      double t) {
  detail::check_pair(map, gt);
  std::size_t tp = 0, fp = 0, pos = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    const bool g = detail::salient(gt[i]);
    pos += g;
    if (map[i] > t) {
      if (g) ++tp;
      else ++fp;
    }
  }
  if (pos == 0) return std::nullopt;
  PrecisionRecall pr;
  pr.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  pr.recall = static_cast<double>(tp) / static_cast<double>(pos);
  return pr;
}

/// Weighted harmonic mean; 0 when the denominator vanishes.
inline double f_measure(double precision, double recall, double beta2 = kDefaultBetaSquared) {
  const double den = beta2 * precision + recall;
  if (den <= 0.0) return 0.0;
  return (1.0 + beta2) * precision * recall / den;
}

/// Precision/recall at all 256 thresholds for one image, via a histogram of
/// map values (one pass instead of 256).
inline std::optional<std::vector<PrecisionRecall>> pr_sweep(const Tensor& map, const Tensor& gt) {
  detail::check_pair(map, gt);
  // Bucket b holds values v with b/256 < v <= (b+1)/256 (b = -1 for v <= 0),
  // so v > k/256 iff its bucket index >= k.
  std::vector<std::size_t> hist_pos(kThresholdCount + 1, 0), hist_neg(kThresholdCount + 1, 0);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double v = map[i];
    int b = static_cast<int>(std::ceil(v * kThresholdCount)) - 1;
    // Guard against rounding in v * 256 at exact multiples.
    while (b >= 0 && !(v > threshold_at(b))) --b;
    while (b + 1 < kThresholdCount && v > threshold_at(b + 1)) ++b;
    b = std::clamp(b, -1, kThresholdCount - 1);
    const bool g = detail::salient(gt[i]);
    pos += g;
    (g ? hist_pos : hist_neg)[b + 1]++;
  }
  if (pos == 0) return std::nullopt;
  std::vector<PrecisionRecall> out(kThresholdCount);
  std::size_t tp = 0, fp = 0;
  for (int k = kThresholdCount - 1; k >= 0; --k) {
    tp += hist_pos[k + 1];
    fp += hist_neg[k + 1];
    out[k].precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    out[k].recall = static_cast<double>(tp) / static_cast<double>(pos);
  }
  return out;
}

/// Dataset PR curve: precision and recall averaged over images with a
/// non-empty ground truth at each threshold.
inline PRCurve dataset_pr_curve(const std::vector<Tensor>& maps, const std::vector<Tensor>& gts) {
  if (maps.empty() || maps.size() != gts.size()) {
    throw InvalidArgument("PR curve needs a non-empty matched map/ground-truth set");
  }
  PRCurve curve(kThresholdCount);
  for (int k = 0; k < kThresholdCount; ++k) curve[k].threshold = threshold_at(k);
  std::size_t used = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    const auto sweep = pr_sweep(maps[i], gts[i]);
    if (!sweep) continue;
    ++used;
    for (int k = 0; k < kThresholdCount; ++k) {
      curve[k].precision += (*sweep)[k].precision;
      curve[k].recall += (*sweep)[k].recall;
    }
  }
  if (used == 0) throw InvalidArgument("every ground truth is empty; PR curve undefined");
  for (auto& p : curve) {
    p.precision /= static_cast<double>(used);
    p.recall /= static_cast<double>(used);
  }
  return curve;
}

inline double max_f_measure(const PRCurve& curve, double beta2 = kDefaultBetaSquared) {
  double best = 0.0;
  for (const auto& p : curve) best = std::max(best, f_measure(p.precision, p.recall, beta2));
  return best;
}

inline double max_f_measure(const std::vector<Tensor>& maps, const std::vector<Tensor>& gts,
                            double beta2 = kDefaultBetaSquared) {
  return max_f_measure(dataset_pr_curve(maps, gts), beta2);
}

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f = 0.0;
};

inline constexpr double kAdaptiveThresholdCap = 1.0 - 1e-8;

/// Threshold = min(2 * mean(map), 1 - 1e-8).
inline std::optional<PRF> adaptive_prf(const Tensor& map, const Tensor& gt,
                                       double beta2 = kDefaultBetaSquared) {
  detail::check_pair(map, gt);
  double mean = 0.0;
  for (double v : map.data()) mean += v;
  mean /= static_cast<double>(map.size());
  const double t = std::min(2.0 * mean, kAdaptiveThresholdCap);
  const auto pr = pr_at_threshold(map, gt, t);
  if (!pr) return std::nullopt;
  return PRF{pr->precision, pr->recall, f_measure(pr->precision, pr->recall, beta2)};
}

inline double mae(const Tensor& map, const Tensor& gt) {
  detail::check_pair(map, gt);
  double s = 0.0;
  for (std::size_t i = 0; i < map.size(); ++i) s += std::abs(map[i] - gt[i]);
  return s / static_cast<double>(map.size());
}

struct EvalReport {
  PRCurve curve;
  double max_f = 0.0;
  PRF adaptive;        // mean of per-image values
  double mae = 0.0;    // mean of per-image values
  std::vector<double> per_image_mae;
  std::vector<std::optional<PRF>> per_image_adaptive;
  std::size_t images = 0;
  std::size_t excluded = 0;  // empty ground truth
};

inline EvalReport evaluate(const std::vector<Tensor>& maps, const std::vector<Tensor>& gts,
                           double beta2 = kDefaultBetaSquared) {
  EvalReport r;
  r.curve = dataset_pr_curve(maps, gts);
  r.max_f = max_f_measure(r.curve, beta2);
  r.images = maps.size();
  std::size_t used = 0;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    r.per_image_mae.push_back(mae(maps[i], gts[i]));
    r.mae += r.per_image_mae.back();
    r.per_image_adaptive.push_back(adaptive_prf(maps[i], gts[i], beta2));
    if (!r.per_image_adaptive.back()) {
      ++r.excluded;
      continue;
    }
    ++used;
    r.adaptive.precision += r.per_image_adaptive.back()->precision;
    r.adaptive.recall += r.per_image_adaptive.back()->recall;
    r.adaptive.f += r.per_image_adaptive.back()->f;
  }
  r.mae /= static_cast<double>(maps.size());
  if (used > 0) {
    r.adaptive.precision /= static_cast<double>(used);
    r.adaptive.recall /= static_cast<double>(used);
    r.adaptive.f /= static_cast<double>(used);
  }
  return r;
}

/// One row per threshold (t,P,R,F), then a summary row.
inline void write_eval_csv(std::ostream& os, const EvalReport& r,
                           double beta2 = kDefaultBetaSquared) {
  const auto old = os.precision(10);
  os << "threshold,precision,recall,f\n";
  for (const auto& p : r.curve) {
    os << p.threshold << ',' << p.precision << ',' << p.recall << ','
       << f_measure(p.precision, p.recall, beta2) << '\n';
  }
  os << "summary,maxF,adaptive_precision,adaptive_recall,adaptive_f,mae\n";
  os << "summary," << r.max_f << ',' << r.adaptive.precision << ',' << r.adaptive.recall << ','
     << r.adaptive.f << ',' << r.mae << '\n';
  os.precision(old);
}

}  // namespace dcl

#endif  // DCL_EVALKIT_HPP
