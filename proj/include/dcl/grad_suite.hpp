#ifndef DCL_GRAD_SUITE_HPP
#define DCL_GRAD_SUITE_HPP

// Finite-difference checks of every differentiable piece of the pipeline,
// packaged so the command-line tool and the test suite run the same cases.

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "dcl/grad_check.hpp"
#include "dcl/layers.hpp"
#include "dcl/msfcn.hpp"
#include "dcl/rng.hpp"
#include "dcl/segpool.hpp"
#include "dcl/train.hpp"

namespace dcl {

/// Single layers and losses.
inline constexpr double kLayerGradTolerance = 1e-6;
/// Whole networks, where errors compound through depth.
inline constexpr double kNetworkGradTolerance = 1e-4;
/// A bias nudge moves every unit of a channel; at 1e-5 some unit lands on
/// the other side of a ReLU kink in about half of random 41x41 instances.
inline constexpr double kNetworkGradStep = 1e-6;

struct GradSuiteCase {
  std::string name;
  double tolerance = 0.0;
  GradCheckReport report;
  double seconds = 0.0;
  bool passed() const { return report.checked > 0 && report.max_rel_error < tolerance; }
};

/// Zero biases put dead units exactly on the ReLU kink; finite differences
/// need differentiable points.
inline void randomize_biases(MsFcn& net, Rng& rng, double scale = 0.1) {
  net.for_each_layer([&](ConvLayer& l) {
    for (double& b : l.params.bias) b = rng.uniform(-scale, scale);
  });
}

/// Balanced cross-entropy of fuse(s1(image), s2) against every stream-1 and
/// fusion parameter and, optionally, the image.
inline GradCheckReport stream1_grad_check(MsFcn& net, FusionLayer& fusion, Tensor& image,
                                          const Tensor& gt, const Tensor& s2,
                                          const GradCheckOptions& opt, bool include_image) {
  auto loss = [&] {
    const MsFcnOutput out = net.forward(image);
    return balanced_cross_entropy(fusion.forward(out.s1, s2), gt).loss;
  };
  net.zero_grad();
  fusion.params.zero_grad();
  MsFcnCache cache;
  const MsFcnOutput out = net.forward(image, &cache);
  const Tensor s = fusion.forward(out.s1, s2);
  const LossReport l = balanced_cross_entropy(s, gt);
  const auto g = fusion.backward(out.s1, s2, s, l.grad);
  const Tensor g_image = net.backward(cache, g.s1);

  std::vector<GradTarget> targets;
  net.for_each_layer([&](ConvLayer& layer) {
    targets.push_back({layer.name + ".w", layer.params.weights.data(),
                       layer.params.weight_grad.data()});
    targets.push_back({layer.name + ".b", layer.params.bias, layer.params.bias_grad});
  });
  targets.push_back({"fusion.w", fusion.params.weights.data(), fusion.params.weight_grad.data()});
  targets.push_back({"fusion.b", fusion.params.bias, fusion.params.bias_grad});
  if (include_image) targets.push_back({"image", image.data(), g_image.data()});
  return grad_check(loss, targets, opt);
}

namespace detail {

inline Tensor uniform_tensor(Shape s, Rng& rng, double lo, double hi) {
  Tensor t(s);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<double> uniform_vector(std::size_t n, Rng& rng, double lo, double hi) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline double inner(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Tensor binary_mask(int h, int w, Rng& rng) {
  Tensor g(1, 1, h, w);
  for (double& v : g.data()) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
  g[0] = 1.0;  // both classes present
  g[1] = 0.0;
  return g;
}

// Layers are checked through a random linear readout L = <r, layer(x)>.

inline GradCheckReport conv_case(const ConvSpec& spec, Shape in, Rng& rng) {
  Tensor x = uniform_tensor(in, rng, -1, 1);
  LayerParams p = LayerParams::conv(spec);
  for (double& v : p.weights.data()) v = rng.uniform(-1, 1);
  for (double& v : p.bias) v = rng.uniform(-1, 1);
  const Tensor r = uniform_tensor(conv2d_forward(x, p, spec).shape(), rng, -1, 1);
  const Tensor gx = conv2d_backward(x, r, p, spec);
  auto loss = [&] { return inner(conv2d_forward(x, p, spec).data(), r.data()); };
  return grad_check(loss, {{"input", x.data(), gx.data()},
                           {"weights", p.weights.data(), p.weight_grad.data()},
                           {"bias", p.bias, p.bias_grad}});
}

inline GradCheckReport maxpool_case(Rng& rng) {
  Tensor x = uniform_tensor({1, 2, 9, 9}, rng, -1, 1);
  const PoolSpec spec = PoolSpec::make(3, 2, 1);
  const auto fwd = maxpool_forward(x, spec);
  const Tensor r = uniform_tensor(fwd.output.shape(), rng, -1, 1);
  const Tensor g = maxpool_backward(r, fwd.argmax, x.shape());
  auto loss = [&] { return inner(maxpool_forward(x, spec).output.data(), r.data()); };
  return grad_check(loss, {{"input", x.data(), g.data()}});
}

inline GradCheckReport relu_case(Rng& rng) {
  std::vector<double> x = uniform_vector(40, rng, -1, 1);
  for (double& v : x) v += v < 0 ? -0.05 : 0.05;  // keep clear of the kink
  const std::vector<double> r = uniform_vector(x.size(), rng, -1, 1);
  auto forward = [&] {
    std::vector<double> y = x;
    relu_inplace(y);
    return y;
  };
  std::vector<double> g = r;
  relu_backward_inplace(forward(), g);
  auto loss = [&] { return inner(forward(), r); };
  return grad_check(loss, {{"input", x, g}});
}

inline GradCheckReport affine_case(Rng& rng) {
  LayerParams p = LayerParams::affine(30, 12);
  for (double& v : p.weights.data()) v = rng.uniform(-0.5, 0.5);
  for (double& v : p.bias) v = rng.uniform(-1, 1);
  std::vector<double> x = uniform_vector(30, rng, -1, 1);
  const std::vector<double> r = uniform_vector(12, rng, -1, 1);
  const auto gx = affine_backward(x, r, p);
  auto loss = [&] { return inner(affine_forward(x, p), r); };
  return grad_check(loss, {{"input", x, gx},
                           {"weights", p.weights.data(), p.weight_grad.data()},
                           {"bias", p.bias, p.bias_grad}});
}

inline GradCheckReport sigmoid_case(Rng& rng) {
  Tensor x = uniform_tensor({1, 2, 4, 4}, rng, -4, 4);
  const Tensor r = uniform_tensor(x.shape(), rng, -1, 1);
  const Tensor g = sigmoid_backward(sigmoid_forward(x), r);
  auto loss = [&] { return inner(sigmoid_forward(x).data(), r.data()); };
  return grad_check(loss, {{"input", x.data(), g.data()}});
}

inline GradCheckReport bilinear_case(Rng& rng) {
  Tensor x = uniform_tensor({1, 1, 5, 6}, rng, -1, 1);
  const Tensor r = uniform_tensor({1, 1, 17, 23}, rng, -1, 1);
  const Tensor g = bilinear_resize_backward(r, 5, 6);
  auto loss = [&] { return inner(bilinear_upsample(x, 17, 23).data(), r.data()); };
  return grad_check(loss, {{"input", x.data(), g.data()}});
}

inline GradCheckReport fusion_case(Rng& rng) {
  Tensor s1 = uniform_tensor({1, 1, 4, 5}, rng, 0, 1);
  Tensor s2 = uniform_tensor({1, 1, 4, 5}, rng, 0, 1);
  const Tensor r = uniform_tensor({1, 1, 4, 5}, rng, -1, 1);
  FusionLayer f = FusionLayer::make(0.7, -1.2, 0.3);
  f.params.zero_grad();
  const Tensor s = f.forward(s1, s2);
  const auto g = f.backward(s1, s2, s, r);
  auto loss = [&] { return inner(f.forward(s1, s2).data(), r.data()); };
  return grad_check(loss, {{"w", f.params.weights.data(), f.params.weight_grad.data()},
                           {"b", f.params.bias, f.params.bias_grad},
                           {"s1", s1.data(), g.s1.data()},
                           {"s2", s2.data(), g.s2.data()}});
}

inline GradCheckReport cross_entropy_case(Rng& rng) {
  // Inside (0.05, 0.95) the probability clamp never binds.
  Tensor s = uniform_tensor({1, 1, 6, 7}, rng, 0.05, 0.95);
  const Tensor g = binary_mask(6, 7, rng);
  const LossReport r = balanced_cross_entropy(s, g);
  auto loss = [&] { return balanced_cross_entropy(s, g).loss; };
  GradCheckOptions opt;
  opt.epsilon = 1e-6;
  return grad_check(loss, {{"map", s.data(), r.grad.data()}}, opt);
}

inline GradCheckReport stream2_loss_case(Rng& rng) {
  std::vector<double> s = uniform_vector(9, rng, 0, 1);
  std::vector<double> l = uniform_vector(9, rng, 0, 1);
  const Stream2Loss r = stream2_loss(s, l);
  auto loss = [&] { return stream2_loss(s, l).loss; };
  return grad_check(loss, {{"scores", s, r.grad}});
}

inline GradCheckReport regressor_case(Rng& rng, std::uint64_t seed) {
  SegmentRegressor reg = SegmentRegressor::build(12, 9, seed);
  for (LayerParams* p : {&reg.fc1(), &reg.fc2(), &reg.out()}) {
    for (double& b : p->bias) b = rng.uniform(-0.3, 0.3);
  }
  std::vector<double> x = uniform_vector(12, rng, -1, 1);
  const double label = 0.8;
  auto loss = [&] {
    const double s = reg.forward(x);
    return (s - label) * (s - label);
  };
  reg.zero_grad();
  RegressorCache cache;
  const double s = reg.forward(x, &cache);
  const std::vector<double> gx = reg.backward(cache, 2.0 * (s - label));
  std::vector<GradTarget> targets;
  for (auto [name, p] : {std::pair{"fc1", &reg.fc1()}, {"fc2", &reg.fc2()}, {"out", &reg.out()}}) {
    targets.push_back({std::string(name) + ".w", p->weights.data(), p->weight_grad.data()});
    targets.push_back({std::string(name) + ".b", p->bias, p->bias_grad});
  }
  targets.push_back({"input", x, gx});
  return grad_check(loss, targets);
}

/// Every parameter of a narrow network on a 25x25 input.
inline GradCheckReport tiny_network_case(Rng& rng, std::uint64_t seed) {
  BackboneConfig cfg;
  cfg.stage_widths = {2, 2, 3, 3, 3};
  cfg.top_width = 4;
  cfg.branch_width = 2;
  MsFcn net = MsFcn::build(cfg, seed);
  FusionLayer fusion = FusionLayer::make(1.3, 0.7, -0.9);
  randomize_biases(net, rng);
  Tensor image = uniform_tensor({1, 3, 25, 25}, rng, 0, 1);
  const Tensor gt = binary_mask(25, 25, rng);
  const Tensor s2 = uniform_tensor({1, 1, 25, 25}, rng, 0, 1);
  GradCheckOptions opt;
  opt.epsilon = kNetworkGradStep;
  return stream1_grad_check(net, fusion, image, gt, s2, opt, false);
}

/// The full VGG layout at 1/32 width on a 41x41 input, sampled coordinates.
inline GradCheckReport toy_network_case(Rng& rng, std::uint64_t seed) {
  BackboneConfig cfg;
  cfg.width_scale = 1.0 / 32;
  MsFcn net = MsFcn::build(cfg, seed);
  FusionLayer fusion = FusionLayer::make(1.0, 1.0, -1.0);
  randomize_biases(net, rng);
  Tensor image = uniform_tensor({1, 3, 41, 41}, rng, 0, 1);
  const Tensor gt = binary_mask(41, 41, rng);
  const Tensor s2 = uniform_tensor({1, 1, 41, 41}, rng, 0, 1);
  GradCheckOptions opt;
  opt.epsilon = kNetworkGradStep;
  opt.max_coords_per_target = 6;
  opt.seed = seed;
  return stream1_grad_check(net, fusion, image, gt, s2, opt, true);
}

}  // namespace detail

/// Runs every case; `on_case` sees each result as it completes.
inline std::vector<GradSuiteCase> run_gradient_suite(
    std::uint64_t seed = 1, const std::function<void(const GradSuiteCase&)>& on_case = {}) {
  Rng rng(seed);
  std::vector<GradSuiteCase> out;
  auto run = [&](std::string name, double tol, const std::function<GradCheckReport()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    GradSuiteCase c{std::move(name), tol, fn(), 0.0};
    c.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (on_case) on_case(c);
    out.push_back(std::move(c));
  };
  run("conv2d", kLayerGradTolerance,
      [&] { return detail::conv_case(ConvSpec::make(2, 3, 3, 2, 1), {2, 2, 7, 6}, rng); });
  run("conv2d_atrous", kLayerGradTolerance,
      [&] { return detail::conv_case(ConvSpec::make(2, 2, 3, 1, 2, 2), {1, 2, 9, 8}, rng); });
  run("maxpool", kLayerGradTolerance, [&] { return detail::maxpool_case(rng); });
  run("relu", kLayerGradTolerance, [&] { return detail::relu_case(rng); });
  run("affine", kLayerGradTolerance, [&] { return detail::affine_case(rng); });
  run("sigmoid", kLayerGradTolerance, [&] { return detail::sigmoid_case(rng); });
  run("bilinear", kLayerGradTolerance, [&] { return detail::bilinear_case(rng); });
  run("fusion", kLayerGradTolerance, [&] { return detail::fusion_case(rng); });
  run("balanced_cross_entropy", kLayerGradTolerance,
      [&] { return detail::cross_entropy_case(rng); });
  run("squared_error", kLayerGradTolerance, [&] { return detail::stream2_loss_case(rng); });
  run("segment_regressor", kLayerGradTolerance,
      [&] { return detail::regressor_case(rng, seed + 1); });
  run("msfcn_tiny", kNetworkGradTolerance,
      [&] { return detail::tiny_network_case(rng, seed + 2); });
  run("msfcn_toy41", kNetworkGradTolerance,
      [&] { return detail::toy_network_case(rng, seed + 3); });
  return out;
}

}  // namespace dcl

#endif  // DCL_GRAD_SUITE_HPP
