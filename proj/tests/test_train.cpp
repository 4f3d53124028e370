#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "dcl/synth.hpp"
#include "dcl/train.hpp"
#include "net_util.hpp"

namespace dcl {
namespace {

using test::random_tensor;
using test::toy_setup;
using test::ToySetup;

Tensor half_gt(int h, int w) {
  Tensor g(1, 1, h, w);
  for (int y = 0; y < h / 2; ++y) {
    for (int x = 0; x < w; ++x) g.at(0, 0, y, x) = 1.0;
  }
  return g;
}

TEST(Fuse, Examples) {
  Rng rng(1);
  const Tensor s1 = random_tensor({1, 1, 3, 4}, rng, 0.0, 1.0);
  const Tensor s2 = random_tensor({1, 1, 3, 4}, rng, 0.0, 1.0);
  const Tensor zero = fuse(s1, s2, FusionLayer::make(0, 0, 0));
  for (double v : zero.data()) EXPECT_EQ(v, 0.5);
  const Tensor cancel = fuse(Tensor(1, 1, 3, 4, 0.5), s2, FusionLayer::make(4, 0, -2));
  for (double v : cancel.data()) EXPECT_EQ(v, 0.5);
  EXPECT_THROW(fuse(s1, Tensor(1, 1, 4, 3), FusionLayer::make(1, 1, 0)), ShapeError);
}

TEST(Fuse, GradientMatchesFiniteDifferences) {
  Rng rng(2);
  Tensor s1 = random_tensor({1, 1, 4, 5}, rng, 0.0, 1.0);
  Tensor s2 = random_tensor({1, 1, 4, 5}, rng, 0.0, 1.0);
  const Tensor coeff = random_tensor({1, 1, 4, 5}, rng);
  FusionLayer f = FusionLayer::make(0.7, -1.2, 0.3);
  // Linear readout keeps the check on the layer itself.
  auto loss = [&] { return test::dot(f.forward(s1, s2).data(), coeff.data()); };
  f.params.zero_grad();
  const Tensor s = f.forward(s1, s2);
  const auto g = f.backward(s1, s2, s, coeff);
  const auto rep = grad_check(loss, {{"w", f.params.weights.data(), f.params.weight_grad.data()},
                                     {"b", f.params.bias, f.params.bias_grad},
                                     {"s1", s1.data(), g.s1.data()},
                                     {"s2", s2.data(), g.s2.data()}});
  EXPECT_LT(rep.max_rel_error, 1e-8) << rep.worst_target;
  EXPECT_EQ(rep.checked, 3u + 40u);
}

TEST(BalancedCrossEntropy, HalfSalientUniformMap) {
  const LossReport r = balanced_cross_entropy(Tensor(1, 1, 2, 2, 0.5), half_gt(2, 2));
  EXPECT_EQ(r.beta, 0.5);
  EXPECT_NEAR(r.loss, 2 * std::log(2.0), 1e-15);
  EXPECT_NEAR(r.loss, 1.3863, 1e-4);
  EXPECT_EQ(r.positives, 2u);
  EXPECT_EQ(r.negatives, 2u);
}

TEST(BalancedCrossEntropy, PerfectPredictionNearZero) {
  const Tensor g = half_gt(4, 6);
  const LossReport r = balanced_cross_entropy(g, g);
  EXPECT_LE(r.loss, 4.0 * 24 * kProbabilityEpsilon);
  for (double v : r.grad.data()) EXPECT_EQ(v, 0.0);  // clamp binds everywhere
}

TEST(BalancedCrossEntropy, AllBackgroundVanishes) {
  Rng rng(3);
  const LossReport r = balanced_cross_entropy(random_tensor({1, 1, 3, 3}, rng, 0.0, 1.0),
                                              Tensor(1, 1, 3, 3));
  EXPECT_EQ(r.beta, 1.0);
  EXPECT_EQ(r.loss, 0.0);
  for (double v : r.grad.data()) EXPECT_EQ(v, 0.0);
}

TEST(BalancedCrossEntropy, UniformClosedFormAndBetaIdentity) {
  Rng rng(4);
  for (int t = 0; t < 20; ++t) {
    const int h = 1 + static_cast<int>(rng.uniform() * 6), w = 1 + static_cast<int>(rng.uniform() * 6);
    const Tensor g = test::random_mask(h, w, rng, rng.uniform());
    const LossReport r = balanced_cross_entropy(Tensor(1, 1, h, w, 0.5), g);
    const double n = h * w;
    EXPECT_EQ(r.positives + r.negatives, r.total);
    EXPECT_EQ(r.beta, static_cast<double>(r.negatives) / n);
    EXPECT_DOUBLE_EQ(1.0 - r.beta, static_cast<double>(r.positives) / n);
    EXPECT_NEAR(r.loss,
                std::log(2.0) * (r.beta * r.positives + (1 - r.beta) * r.negatives), 1e-12);
  }
  EXPECT_THROW(balanced_cross_entropy(Tensor(1, 1, 2, 2), Tensor(1, 1, 2, 3)), ShapeError);
}

TEST(BalancedCrossEntropy, GradientThroughFusion) {
  Rng rng(5);
  Tensor s1 = random_tensor({1, 1, 5, 5}, rng, 0.0, 1.0);
  Tensor s2 = random_tensor({1, 1, 5, 5}, rng, 0.0, 1.0);
  const Tensor g = test::random_mask(5, 5, rng);
  FusionLayer f = FusionLayer::make(1.5, 0.8, -1.1);
  auto loss = [&] { return balanced_cross_entropy(f.forward(s1, s2), g).loss; };
  f.params.zero_grad();
  const Tensor s = f.forward(s1, s2);
  const LossReport r = balanced_cross_entropy(s, g);
  const auto gi = f.backward(s1, s2, s, r.grad);
  const auto rep = grad_check(loss, {{"w", f.params.weights.data(), f.params.weight_grad.data()},
                                     {"b", f.params.bias, f.params.bias_grad},
                                     {"s1", s1.data(), gi.s1.data()},
                                     {"s2", s2.data(), gi.s2.data()}});
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst_target;
}

TEST(Stream2Loss, ExamplesAndGradient) {
  const std::vector<double> l{1, 0, 1};
  EXPECT_EQ(stream2_loss(l, l).loss, 0.0);
  EXPECT_EQ(stream2_loss(std::vector<double>{0.5}, std::vector<double>{1.0}).loss, 0.25);
  std::vector<double> s{0.2, 0.7, 0.4};
  const Stream2Loss r = stream2_loss(s, l);
  for (std::size_t k = 0; k < s.size(); ++k) EXPECT_DOUBLE_EQ(r.grad[k], 2 * (s[k] - l[k]) / 3);
  auto loss = [&] { return stream2_loss(s, l).loss; };
  const auto rep = grad_check(loss, {{"scores", s, r.grad}});
  EXPECT_LT(rep.max_rel_error, 1e-9);
  EXPECT_THROW(stream2_loss(s, std::vector<double>{1.0}), InvalidArgument);
  EXPECT_THROW(stream2_loss(std::vector<double>{}, std::vector<double>{}), InvalidArgument);
}

TEST(SgdStep, ZeroGradientLeavesParameters) {
  LayerParams p = LayerParams::affine(3, 2);
  Rng rng(6);
  for (double& w : p.weights.data()) w = rng.uniform();
  const Tensor before = p.weights;
  Velocity v;
  sgd_step(p, v, 0.1, 0.9, 0.0);
  EXPECT_EQ(p.weights.data().size(), before.data().size());
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(p.weights[i], before[i]);
}

TEST(SgdStep, SingleStepAndMomentumRecurrence) {
  const double lr = 0.01, mu = 0.9, lambda = 0.0005, w0 = 0.4, g = 1.5;
  LayerParams p = LayerParams::affine(1, 1);
  p.weights[0] = w0;
  p.weight_grad[0] = g;
  Velocity v;
  sgd_step(p, v, lr, mu, lambda);
  const double v1 = -lr * (g + lambda * w0), w1 = w0 + v1;
  EXPECT_DOUBLE_EQ(p.weights[0], w1);
  EXPECT_DOUBLE_EQ(v.w[0], v1);
  sgd_step(p, v, lr, mu, lambda);  // gradient buffer still holds g
  const double v2 = mu * v1 - lr * (g + lambda * w1);
  EXPECT_DOUBLE_EQ(v.w[0], v2);
  EXPECT_DOUBLE_EQ(p.weights[0], w1 + v2);
}

TEST(SgdConfig, LearningRateGroups) {
  SgdConfig c;
  EXPECT_EQ(c.lr(LrGroup::kBase), 0.001);
  EXPECT_EQ(c.lr(LrGroup::kNewSingleChannel), 0.01);
  c.stream2_lr_scale = 0.5;
  EXPECT_EQ(c.lr(LrGroup::kNewSingleChannel, Stream::kTwo), 0.005);
  EXPECT_EQ(c.lr(LrGroup::kNewSingleChannel, Stream::kFusion), 0.01);
  NetworkConfig ncfg;
  ncfg.backbone = test::tiny_backbone();
  Network net = Network::build(ncfg, 1);
  std::map<std::string, LrGroup> groups;
  for (const auto& p : net.parameters()) groups[p.name] = p.group;
  EXPECT_EQ(groups.at("conv1_1"), LrGroup::kBase);
  EXPECT_EQ(groups.at("fc8_score"), LrGroup::kNewSingleChannel);
  EXPECT_EQ(groups.at("stack"), LrGroup::kNewSingleChannel);
  EXPECT_EQ(groups.at("seg_fc1"), LrGroup::kBase);
  EXPECT_EQ(groups.at("seg_out"), LrGroup::kNewSingleChannel);
  EXPECT_EQ(groups.at("fusion"), LrGroup::kNewSingleChannel);
}

TEST(SegmentLabels, StrictMajority) {
  const Segmentation seg = Segmentation::from_labels(2, 4, {0, 0, 1, 1, 0, 0, 1, 1});
  Tensor g(1, 1, 2, 4);
  g.at(0, 0, 0, 0) = g.at(0, 0, 1, 0) = g.at(0, 0, 0, 1) = 1;  // 3 of 4
  g.at(0, 0, 0, 2) = g.at(0, 0, 1, 2) = 1;                     // 2 of 4
  EXPECT_EQ(segment_labels(seg, g), (std::vector<double>{1.0, 0.0}));
}

TEST(Schedule, Layout) {
  TrainConfig c;
  const auto s = training_schedule(c);
  EXPECT_EQ(s.size(), 2u + 16u);
  EXPECT_EQ(std::string(s.begin(), s.end()), "PPABABABABABABABAB");
  c.epochs_per_phase = 2;
  c.alternations = 1;
  c.pretrain_epochs = 0;
  const auto t = training_schedule(c);
  EXPECT_EQ(std::string(t.begin(), t.end()), "AABB");
  c.alternations = 0;
  EXPECT_TRUE(training_schedule(c).empty());
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.sgd.lr_base = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.sgd.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.input_size = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.alternations = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(AlternateTrain, ZeroAlternationsLeavesNetworkUnchanged) {
  ToySetup t = toy_setup(1, 24, 1);
  t.tcfg.alternations = 0;
  Network net = Network::build(t.ncfg, 3);
  const auto a = test::snapshot(net, Stream::kOne), b = test::snapshot(net, Stream::kTwo);
  const TrainState st = alternate_train(net, t.data, t.tcfg);
  EXPECT_EQ(st.epochs_done, 0);
  EXPECT_TRUE(st.trace.empty());
  EXPECT_EQ(test::snapshot(net, Stream::kOne), a);
  EXPECT_EQ(test::snapshot(net, Stream::kTwo), b);
}

TEST(AlternateTrain, FreezeContract) {
  ToySetup t = toy_setup(2, 24, 2);
  Network net = Network::build(t.ncfg, 4);
  std::vector<std::vector<double>> one{test::snapshot(net, Stream::kOne)},
      two{test::snapshot(net, Stream::kTwo)}, fus{test::snapshot(net, Stream::kFusion)};
  TrainState state;
  OptimizerState opt;
  alternate_train(net, t.data, t.tcfg, state, opt, [&](const Network& n, const OptimizerState&,
                                                      const TrainState&) {
    Network copy = n;
    one.push_back(test::snapshot(copy, Stream::kOne));
    two.push_back(test::snapshot(copy, Stream::kTwo));
    fus.push_back(test::snapshot(copy, Stream::kFusion));
  });
  const auto sched = training_schedule(t.tcfg);
  ASSERT_EQ(one.size(), sched.size() + 1);
  for (std::size_t e = 0; e < sched.size(); ++e) {
    if (sched[e] == 'A') {
      EXPECT_EQ(two[e + 1], two[e]) << "epoch " << e;
      EXPECT_NE(one[e + 1], one[e]) << "epoch " << e;
      EXPECT_NE(fus[e + 1], fus[e]) << "epoch " << e;
    } else {
      EXPECT_EQ(one[e + 1], one[e]) << "epoch " << e;
      EXPECT_EQ(fus[e + 1], fus[e]) << "epoch " << e;
      EXPECT_NE(two[e + 1], two[e]) << "epoch " << e;
    }
  }
}

TEST(AlternateTrain, ResumeReproducesLosses) {
  ToySetup t = toy_setup(2, 24, 3);
  Network full = Network::build(t.ncfg, 5);
  const TrainState ref = alternate_train(full, t.data, t.tcfg);
  // Stop after three epochs, copy the state, then continue.
  Network part = Network::build(t.ncfg, 5);
  TrainConfig early = t.tcfg;
  TrainState state;
  OptimizerState opt;
  Network saved;
  OptimizerState saved_opt;
  TrainState saved_state;
  alternate_train(part, t.data, early, state, opt,
                  [&](const Network& n, const OptimizerState& o, const TrainState& s) {
                    if (s.epochs_done == 3) {
                      saved = n;
                      saved_opt = o;
                      saved_state = s;
                    }
                  });
  alternate_train(saved, t.data, t.tcfg, saved_state, saved_opt);
  ASSERT_EQ(saved_state.trace.size(), ref.trace.size());
  for (std::size_t e = 0; e < ref.trace.size(); ++e) {
    EXPECT_EQ(saved_state.trace[e].loss, ref.trace[e].loss) << "epoch " << e;
  }
  EXPECT_EQ(test::snapshot(saved, Stream::kOne), test::snapshot(full, Stream::kOne));
  EXPECT_EQ(test::snapshot(saved, Stream::kTwo), test::snapshot(full, Stream::kTwo));
  TrainState bad;
  bad.epochs_done = 99;
  EXPECT_THROW(alternate_train(saved, t.data, t.tcfg, bad, saved_opt), ConfigError);
}

TEST(AlternateTrain, DegenerateImagesSkippedWithWarning) {
  ToySetup t = toy_setup(1, 24, 4);
  t.data.push_back(prepare_sample(make_synthetic(24, 24, 9).image, Tensor(1, 1, 24, 24),
                                  t.ncfg, t.tcfg));
  ASSERT_TRUE(t.data.back().degenerate);
  Network net = Network::build(t.ncfg, 6);
  std::ostringstream log;
  const TrainState st = alternate_train(net, t.data, t.tcfg, &log);
  for (const auto& r : st.trace) EXPECT_EQ(r.skipped, r.phase == 'A' ? 1 : 0);
  EXPECT_NE(log.str().find("warning: epoch 2 skips image 1"), std::string::npos);
  for (const auto& r : st.trace) EXPECT_TRUE(std::isfinite(r.loss));
}

TEST(AlternateTrain, RejectsEmptyDataAndWritesLog) {
  ToySetup t = toy_setup(1, 24, 5);
  Network net = Network::build(t.ncfg, 7);
  EXPECT_THROW(alternate_train(net, {}, t.tcfg), InvalidArgument);
  t.tcfg.eval_train_maxf = true;
  t.tcfg.alternations = 1;
  const TrainState st = alternate_train(net, t.data, t.tcfg);
  std::ostringstream os;
  write_loss_log(os, st);
  std::istringstream is(os.str());
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "epoch,phase,loss,train_maxf");
  int rows = 0;
  while (std::getline(is, line)) {
    ++rows;
    EXPECT_EQ(line.substr(0, 2), std::to_string(rows) + ",");
  }
  EXPECT_EQ(rows, 3);
  for (const auto& r : st.trace) EXPECT_TRUE(r.train_maxf >= 0 && r.train_maxf <= 1);
}

TEST(AlternateTrain, PhaseALossMostlyNonIncreasingAtSmallRate) {
  // Consecutive phase-A epochs with every rate at 0.001.
  int monotone = 0;
  const int seeds = 10;
  for (int seed = 0; seed < seeds; ++seed) {
    ToySetup t = toy_setup(3, 24, 100 + seed);
    t.tcfg.sgd.lr_new = 0.001;
    t.tcfg.alternations = 1;
    t.tcfg.pretrain_epochs = 0;
    t.tcfg.epochs_per_phase = 4;
    Network net = Network::build(t.ncfg, 200 + seed);
    const TrainState st = alternate_train(net, t.data, t.tcfg);
    bool ok = true;
    for (int e = 1; e < 4; ++e) ok = ok && st.trace[e].loss <= st.trace[e - 1].loss;
    monotone += ok;
  }
  EXPECT_GE(monotone, 9);
}

}  // namespace
}  // namespace dcl
