#include <gtest/gtest.h>

#include <sstream>

#include "dcl/evalkit.hpp"
#include "test_util.hpp"

namespace dcl {
namespace {

Tensor map_from(int h, int w, std::initializer_list<double> v) {
  Tensor t(1, 1, h, w);
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

Tensor half_salient(int h, int w) {
  Tensor g(1, 1, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w / 2; ++x) g.at(0, 0, y, x) = 1.0;
  }
  return g;
}

Tensor random_gt(int h, int w, Rng& rng) {
  Tensor g(1, 1, h, w);
  for (double& v : g.data()) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
  g[0] = 1.0;
  return g;
}

/// Counts straight from the definitions, one threshold at a time.
PrecisionRecall brute_pr(const Tensor& map, const Tensor& gt, double t) {
  double tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    const bool p = map[i] > t, g = gt[i] > 0.5;
    tp += p && g;
    fp += p && !g;
    fn += !p && g;
  }
  return {tp + fp > 0 ? tp / (tp + fp) : 0.0, tp / (tp + fn)};
}

TEST(PrAtThreshold, Examples) {
  const Tensor gt = half_salient(4, 4);
  const auto same = pr_at_threshold(gt, gt, 0.3);
  EXPECT_EQ(same->precision, 1.0);
  EXPECT_EQ(same->recall, 1.0);
  const auto full = pr_at_threshold(Tensor(1, 1, 4, 4, 1.0), gt, 0.5);
  EXPECT_EQ(full->precision, 0.5);
  EXPECT_EQ(full->recall, 1.0);
  const auto none = pr_at_threshold(Tensor(1, 1, 4, 4, 0.0), gt, 0.0);
  EXPECT_EQ(none->precision, 0.0);
  EXPECT_EQ(none->recall, 0.0);
  EXPECT_FALSE(pr_at_threshold(gt, Tensor(1, 1, 4, 4, 0.0), 0.5).has_value());
  EXPECT_THROW(pr_at_threshold(Tensor(1, 1, 4, 3), gt, 0.5), ShapeError);
}

TEST(FMeasure, Examples) {
  EXPECT_EQ(f_measure(1, 1), 1.0);
  EXPECT_EQ(f_measure(1, 0), 0.0);
  EXPECT_EQ(f_measure(0, 0), 0.0);
  EXPECT_NEAR(f_measure(0.8, 0.6), 1.3 * 0.48 / (0.24 + 0.6), 1e-15);
  EXPECT_NEAR(f_measure(0.8, 0.6), 0.74286, 1e-5);
}

TEST(FMeasure, BoundsOnGrid) {
  for (int i = 0; i <= 20; ++i) {
    for (int j = 0; j <= 20; ++j) {
      const double p = i / 20.0, r = j / 20.0, f = f_measure(p, r);
      EXPECT_LE(f, std::max(p, r) + 1e-15);
      EXPECT_GE(f, 0.0);
      EXPECT_EQ(f == 0.0, p * r == 0.0);
    }
  }
}

TEST(PrSweep, MatchesPerThresholdCountsAndRecallIsMonotone) {
  Rng rng(1);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor map = test::random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0);
    // Values exactly on the grid exercise the strict inequality.
    for (int k = 0; k < 6; ++k) map[k] = threshold_at(static_cast<int>(rng.uniform() * 256));
    map[6] = 0.0;
    map[7] = 1.0;
    const Tensor gt = random_gt(8, 8, rng);
    const auto sweep = pr_sweep(map, gt);
    ASSERT_TRUE(sweep.has_value());
    for (int k = 0; k < kThresholdCount; ++k) {
      const PrecisionRecall ref = brute_pr(map, gt, threshold_at(k));
      EXPECT_DOUBLE_EQ((*sweep)[k].precision, ref.precision);
      EXPECT_DOUBLE_EQ((*sweep)[k].recall, ref.recall);
      if (k > 0) {
        EXPECT_LE((*sweep)[k].recall, (*sweep)[k - 1].recall);
      }
    }
  }
}

TEST(MaxF, Examples) {
  Rng rng(2);
  const Tensor gt = random_gt(6, 7, rng);
  EXPECT_EQ(max_f_measure({gt}, {gt}), 1.0);
  Tensor sep(gt.shape());
  for (std::size_t i = 0; i < gt.size(); ++i) sep[i] = 0.5 + 1e-3 * gt[i];
  EXPECT_EQ(max_f_measure({sep}, {gt}), 1.0);
  EXPECT_THROW(max_f_measure(std::vector<Tensor>{}, std::vector<Tensor>{}), InvalidArgument);
  EXPECT_THROW(max_f_measure({gt}, {Tensor(gt.shape())}), InvalidArgument);
}

TEST(MaxF, MatchesBruteForceOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform() * 3);
    std::vector<Tensor> maps, gts;
    for (int i = 0; i < n; ++i) {
      maps.push_back(test::random_tensor({1, 1, 8, 8}, rng, 0.0, 1.0));
      gts.push_back(random_gt(8, 8, rng));
    }
    double best = 0.0;
    for (int k = 0; k < 256; ++k) {
      double p = 0, r = 0;
      for (int i = 0; i < n; ++i) {
        const PrecisionRecall pr = brute_pr(maps[i], gts[i], k / 256.0);
        p += pr.precision;
        r += pr.recall;
      }
      p /= n;
      r /= n;
      const double f = p + r > 0 ? 1.3 * p * r / (0.3 * p + r) : 0.0;
      best = std::max(best, f);
    }
    EXPECT_NEAR(max_f_measure(maps, gts), best, 1e-14);
  }
}

TEST(AdaptivePrf, Examples) {
  const Tensor gt = half_salient(4, 4);
  const auto flat = adaptive_prf(Tensor(1, 1, 4, 4, 0.4), gt);
  EXPECT_EQ(flat->precision, 0.0);
  EXPECT_EQ(flat->recall, 0.0);
  EXPECT_EQ(flat->f, 0.0);
  Tensor quarter(1, 1, 4, 4);
  for (int x = 0; x < 4; ++x) quarter.at(0, 0, 0, x) = 1.0;
  const auto exact = adaptive_prf(quarter, quarter);
  EXPECT_EQ(exact->precision, 1.0);
  EXPECT_EQ(exact->recall, 1.0);
  EXPECT_EQ(exact->f, 1.0);
  const auto ones = adaptive_prf(Tensor(1, 1, 4, 4, 1.0), quarter);
  EXPECT_EQ(ones->precision, 0.25);
  EXPECT_EQ(ones->recall, 1.0);
}

TEST(Mae, ExamplesAndAxioms) {
  const Tensor gt = half_salient(4, 4);
  EXPECT_EQ(mae(gt, gt), 0.0);
  EXPECT_EQ(mae(Tensor(1, 1, 4, 4, 0.5), gt), 0.5);
  Tensor g30(1, 1, 1, 10);
  for (int i = 0; i < 3; ++i) g30[i] = 1.0;
  EXPECT_NEAR(mae(Tensor(1, 1, 1, 10, 0.2), g30), 0.38, 1e-15);
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const Tensor a = test::random_tensor({1, 1, 5, 5}, rng, 0.0, 1.0);
    const Tensor b = test::random_tensor({1, 1, 5, 5}, rng, 0.0, 1.0);
    EXPECT_EQ(mae(a, b), mae(b, a));
    EXPECT_GT(mae(a, b), 0.0);
    EXPECT_EQ(mae(a, a), 0.0);
  }
  EXPECT_THROW(mae(gt, Tensor(1, 1, 2, 8)), ShapeError);
}

// Two 2x2 images, hand-counted.
//   image A: map {0.9, 0.6, 0.3, 0.1}, gt {1, 1, 0, 0}
//   image B: map {0.8, 0.2, 0.7, 0.4}, gt {1, 0, 0, 1}
TEST(Evaluate, TwoImageHandFixture) {
  const Tensor ma = map_from(2, 2, {0.9, 0.6, 0.3, 0.1}), ga = map_from(2, 2, {1, 1, 0, 0});
  const Tensor mb = map_from(2, 2, {0.8, 0.2, 0.7, 0.4}), gb = map_from(2, 2, {1, 0, 0, 1});
  const EvalReport r = evaluate({ma, mb}, {ga, gb});
  // t = 0.5 (k = 128): A predicts {0.9, 0.6} -> P 1, R 1; B predicts {0.8, 0.7} -> P 1/2, R 1/2.
  EXPECT_DOUBLE_EQ(r.curve[128].precision, 0.75);
  EXPECT_DOUBLE_EQ(r.curve[128].recall, 0.75);
  // t = 0.25 (k = 64): A {0.9, 0.6, 0.3} -> P 2/3, R 1; B {0.8, 0.7, 0.4} -> P 2/3, R 1.
  EXPECT_DOUBLE_EQ(r.curve[64].precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.curve[64].recall, 1.0);
  // t = 0.75 (k = 192): A {0.9} -> P 1, R 1/2; B {0.8} -> P 1, R 1/2.
  EXPECT_DOUBLE_EQ(r.curve[192].precision, 1.0);
  EXPECT_DOUBLE_EQ(r.curve[192].recall, 0.5);
  // Best band: t in [0.3, 0.4) gives A {0.9, 0.6} (1, 1) and B {0.8, 0.7, 0.4} (2/3, 1).
  EXPECT_DOUBLE_EQ(r.max_f, f_measure(5.0 / 6.0, 1.0));
  // MAE: A (0.1 + 0.4 + 0.3 + 0.1) / 4 = 0.225; B (0.2 + 0.2 + 0.7 + 0.6) / 4 = 0.425.
  EXPECT_NEAR(r.per_image_mae[0], 0.225, 1e-15);
  EXPECT_NEAR(r.per_image_mae[1], 0.425, 1e-15);
  EXPECT_NEAR(r.mae, 0.325, 1e-15);
  // Adaptive: A mean 0.475 -> t 0.95 -> empty -> 0; B mean 0.525 -> t 1.05 -> cap -> empty.
  EXPECT_EQ(r.adaptive.precision, 0.0);
  EXPECT_EQ(r.excluded, 0u);
  // Dataset values are the means of per-image values.
  const auto a128 = pr_at_threshold(ma, ga, 0.5), b128 = pr_at_threshold(mb, gb, 0.5);
  EXPECT_DOUBLE_EQ(r.curve[128].precision, (a128->precision + b128->precision) / 2);
}

TEST(Evaluate, EmptyGroundTruthExcluded) {
  const Tensor gt = half_salient(4, 4);
  const EvalReport r = evaluate({gt, Tensor(1, 1, 4, 4, 0.3)}, {gt, Tensor(1, 1, 4, 4)});
  EXPECT_EQ(r.excluded, 1u);
  EXPECT_EQ(r.max_f, 1.0);
  EXPECT_EQ(r.adaptive.f, 1.0);
  EXPECT_NEAR(r.mae, 0.15, 1e-15);
  EXPECT_THROW(evaluate({gt}, {Tensor(1, 1, 4, 4)}), InvalidArgument);
}

TEST(Evaluate, CsvLayout) {
  const Tensor gt = half_salient(4, 4);
  std::ostringstream os;
  write_eval_csv(os, evaluate({gt}, {gt}));
  std::istringstream is(os.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 1u + 256u + 2u);
  EXPECT_EQ(lines[0], "threshold,precision,recall,f");
  EXPECT_EQ(lines[1], "0,1,1,1");
  EXPECT_EQ(lines[258], "summary,1,1,1,1,0");
}

}  // namespace
}  // namespace dcl
