#ifndef DCL_GRAD_CHECK_HPP
#define DCL_GRAD_CHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dcl {

/// One differentiable quantity: its live values (perturbed in place) and the
/// analytic gradient computed beforehand.
struct GradTarget {
  std::string name;
  std::span<double> values;
  std::span<const double> analytic;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_target;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

struct GradCheckOptions {
  double epsilon = 1e-5;
  /// Relative error is |a - n| / max(|a|, |n|, scale_floor).
  double scale_floor = 1.0;
  /// 0 checks every coordinate; otherwise a seeded sample per target.
  std::size_t max_coords_per_target = 0;
  std::uint64_t seed = 7;
};

inline double relative_error(double analytic, double numeric, double floor = 1.0) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

/// Compares analytic gradients against central differences of `loss`.
/// Every perturbed value is restored before returning.
inline GradCheckReport grad_check(const std::function<double()>& loss,
                                  const std::vector<GradTarget>& targets,
                                  const GradCheckOptions& opt = {}) {
  GradCheckReport report;
  std::mt19937_64 rng(opt.seed);
  for (const auto& t : targets) {
    std::vector<std::size_t> idx(t.values.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (opt.max_coords_per_target != 0 && idx.size() > opt.max_coords_per_target) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_coords_per_target);
      std::sort(idx.begin(), idx.end());
    }
    for (std::size_t i : idx) {
      const double saved = t.values[i];
      t.values[i] = saved + opt.epsilon;
      const double up = loss();
      t.values[i] = saved - opt.epsilon;
      const double down = loss();
      t.values[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.epsilon);
      const double err = relative_error(t.analytic[i], numeric, opt.scale_floor);
      ++report.checked;
      if (err > report.max_rel_error || report.checked == 1) {
        report.max_rel_error = err;
        report.worst_target = t.name;
        report.worst_index = i;
        report.worst_analytic = t.analytic[i];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace dcl

#endif  // DCL_GRAD_CHECK_HPP
