#include <gtest/gtest.h>

#include "dcl/grad_check.hpp"
#include "dcl/layers.hpp"
#include "test_util.hpp"

namespace dcl {
namespace {

using test::random_tensor;

TEST(Conv2d, IdentityKernelReproducesInput) {
  Tensor x(1, 1, 3, 3, 1.0);
  const auto spec = ConvSpec::make(1, 1, 1);
  LayerParams p = LayerParams::conv(spec);
  p.weights[0] = 1.0;
  const Tensor y = conv2d_forward(x, p, spec);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 1.0);
}

TEST(Conv2d, DilatedEqualsZeroInsertedKernel) {
  Rng rng(1);
  const Tensor x = random_tensor({1, 1, 5, 5}, rng);
  const auto spec = ConvSpec::make(1, 1, 3, 1, 2, 2);
  const LayerParams p = test::random_conv_params(spec, rng);
  const auto [zspec, zp] = test::zero_inserted(spec, p);
  const Tensor a = conv2d_forward(x, p, spec);
  const Tensor b = conv2d_forward(x, zp, zspec);
  ASSERT_EQ(a.shape(), b.shape());
  EXPECT_EQ(a.shape(), (Shape{1, 1, 5, 5}));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Conv2d, MatchesNaiveLoopStrided) {
  Rng rng(2);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  const auto spec = ConvSpec::make(3, 4, 3, 2, 1);
  const LayerParams p = test::random_conv_params(spec, rng);
  const Tensor a = conv2d_forward(x, p, spec);
  const Tensor b = test::naive_conv(x, p, spec);
  ASSERT_EQ(a.shape(), (Shape{2, 4, 4, 4}));
  EXPECT_LT(test::max_rel_diff(a, b), 1e-12);
}

TEST(Conv2d, MatchesNaiveLoopOnRandomSpecs) {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    ConvSpec s;
    s.in_channels = 1 + static_cast<int>(rng.below(2));
    s.out_channels = 1 + static_cast<int>(rng.below(4));
    s.kernel_h = 1 + static_cast<int>(rng.below(3));
    s.kernel_w = 1 + static_cast<int>(rng.below(3));
    s.stride_h = 1 + static_cast<int>(rng.below(2));
    s.stride_w = 1 + static_cast<int>(rng.below(2));
    s.dilation_h = 1 + static_cast<int>(rng.below(3));
    s.dilation_w = 1 + static_cast<int>(rng.below(3));
    s.pad_h = static_cast<int>(rng.below(3));
    s.pad_w = static_cast<int>(rng.below(3));
    const int h = std::max(s.extent_h(), 2 + static_cast<int>(rng.below(8)));
    const int w = std::max(s.extent_w(), 2 + static_cast<int>(rng.below(8)));
    const Tensor x = random_tensor({1 + static_cast<int>(rng.below(2)), s.in_channels, h, w}, rng);
    const LayerParams p = test::random_conv_params(s, rng);
    EXPECT_LT(test::max_rel_diff(conv2d_forward(x, p, s), test::naive_conv(x, p, s)), 1e-12);
  }
}

TEST(Conv2d, LinearWithoutBias) {
  Rng rng(4);
  const auto spec = ConvSpec::make(2, 3, 3, 1, 2, 2);
  LayerParams p = test::random_conv_params(spec, rng);
  std::fill(p.bias.begin(), p.bias.end(), 0.0);
  const Tensor x = random_tensor({1, 2, 7, 7}, rng), y = random_tensor({1, 2, 7, 7}, rng);
  const double a = 0.7, b = -1.3;
  Tensor mix(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) mix[i] = a * x[i] + b * y[i];
  const Tensor cx = conv2d_forward(x, p, spec), cy = conv2d_forward(y, p, spec);
  const Tensor cm = conv2d_forward(mix, p, spec);
  Tensor expect(cx.shape());
  for (std::size_t i = 0; i < cx.size(); ++i) expect[i] = a * cx[i] + b * cy[i];
  EXPECT_LT(test::max_rel_diff(cm, expect), 1e-12);
}

TEST(Conv2d, ShapeErrorsNameTheDimension) {
  const auto spec = ConvSpec::make(3, 1, 3);
  LayerParams p = LayerParams::conv(spec);
  try {
    conv2d_forward(Tensor(1, 2, 5, 5), p, spec);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channels"), std::string::npos);
  }
  try {
    conv2d_forward(Tensor(1, 3, 2, 5), p, spec);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("height"), std::string::npos);
  }
}

TEST(Conv2d, RejectsNonFiniteInput) {
  const auto spec = ConvSpec::make(1, 1, 1);
  LayerParams p = LayerParams::conv(spec);
  Tensor x(1, 1, 2, 2);
  x[1] = std::nan("");
  EXPECT_THROW(conv2d_forward(x, p, spec), NumericError);
}

TEST(Conv2d, CountsInvocations) {
  const auto spec = ConvSpec::make(1, 1, 1);
  LayerParams p = LayerParams::conv(spec);
  const auto before = conv_forward_counter().load();
  conv2d_forward(Tensor(1, 1, 2, 2), p, spec);
  conv2d_forward(Tensor(1, 1, 2, 2), p, spec);
  EXPECT_EQ(conv_forward_counter().load() - before, 2u);
}

TEST(Conv2dBackward, ZeroGradientLeavesAccumulatorsAlone) {
  Rng rng(5);
  const auto spec = ConvSpec::make(2, 3, 3, 1, 1);
  LayerParams p = test::random_conv_params(spec, rng);
  const Tensor x = random_tensor({1, 2, 6, 6}, rng);
  const Tensor g = conv2d_backward(x, Tensor(1, 3, 6, 6), p, spec);
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.weight_grad.data()) EXPECT_EQ(v, 0.0);
  for (double v : p.bias_grad) EXPECT_EQ(v, 0.0);
}

TEST(Conv2dBackward, RejectsWrongOutputGradShape) {
  const auto spec = ConvSpec::make(1, 1, 3, 1, 1);
  LayerParams p = LayerParams::conv(spec);
  EXPECT_THROW(conv2d_backward(Tensor(1, 1, 5, 5), Tensor(1, 1, 4, 4), p, spec), ShapeError);
}

// L = <r, conv(x)> so that dL/dy = r.
GradCheckReport check_conv(const ConvSpec& spec, Shape in_shape, std::uint64_t seed) {
  Rng rng(seed);
  Tensor x = random_tensor(in_shape, rng);
  LayerParams p = test::random_conv_params(spec, rng);
  const Tensor y0 = conv2d_forward(x, p, spec);
  const Tensor r = random_tensor(y0.shape(), rng);
  const Tensor gx = conv2d_backward(x, r, p, spec);
  auto loss = [&] { return test::dot(conv2d_forward(x, p, spec).data(), r.data()); };
  return grad_check(loss, {{"input", x.data(), gx.data()},
                           {"weights", p.weights.data(), p.weight_grad.data()},
                           {"bias", p.bias, p.bias_grad}});
}

TEST(Conv2dBackward, MatchesFiniteDifferences) {
  const auto r = check_conv(ConvSpec::make(2, 3, 3, 2, 1), {2, 2, 7, 6}, 11);
  EXPECT_LT(r.max_rel_error, 1e-6) << r.worst_target << "[" << r.worst_index << "]";
  const auto d = check_conv(ConvSpec::make(2, 2, 3, 1, 2, 2), {1, 2, 7, 7}, 12);
  EXPECT_LT(d.max_rel_error, 1e-6) << d.worst_target;
}

TEST(Conv2dBackward, DilatedInputGradMatchesZeroInsertedFormulation) {
  Rng rng(13);
  const auto spec = ConvSpec::make(2, 3, 3, 1, 2, 2);
  LayerParams p = test::random_conv_params(spec, rng);
  auto [zspec, zp] = test::zero_inserted(spec, p);
  const Tensor x = random_tensor({1, 2, 9, 9}, rng);
  const Tensor r = random_tensor({1, 3, 9, 9}, rng);
  const Tensor ga = conv2d_backward(x, r, p, spec);
  const Tensor gb = conv2d_backward(x, r, zp, zspec);
  EXPECT_LT(test::max_rel_diff(ga, gb), 1e-12);
  // The zero-inserted kernel's gradient at the real taps equals the dilated one.
  for (int o = 0; o < 3; ++o)
    for (int c = 0; c < 2; ++c)
      for (int ki = 0; ki < 3; ++ki)
        for (int kj = 0; kj < 3; ++kj)
          EXPECT_NEAR(p.weight_grad.at(o, c, ki, kj), zp.weight_grad.at(o, c, 2 * ki, 2 * kj),
                      1e-10);
}

TEST(Im2col, CenterColumnIsPaddedWindow) {
  Tensor x(1, 1, 3, 3);
  for (int i = 0; i < 9; ++i) x[i] = i + 1;
  const auto spec = ConvSpec::make(1, 1, 3, 1, 1);
  const Matrix cols = im2col_atrous(x, spec);
  ASSERT_EQ(cols.rows(), 9);
  ASSERT_EQ(cols.cols(), 9);
  for (int r = 0; r < 9; ++r) EXPECT_EQ(cols(r, 4), r + 1);
  // Top-left output sees padding on its first row and column.
  EXPECT_EQ(cols(0, 0), 0.0);
  EXPECT_EQ(cols(4, 0), 1.0);
}

TEST(Im2col, DilationSamplesTwoApart) {
  Tensor x(1, 1, 7, 7);
  for (int i = 0; i < 49; ++i) x[i] = i;
  const auto spec = ConvSpec::make(1, 1, 3, 1, 0, 2);
  const Matrix cols = im2col_atrous(x, spec);
  ASSERT_EQ(cols.cols(), 9);  // 3x3 outputs
  for (int j = 0; j < 9; ++j) {
    const int oy = j / 3, ox = j % 3;
    for (int ki = 0; ki < 3; ++ki)
      for (int kj = 0; kj < 3; ++kj)
        EXPECT_EQ(cols(ki * 3 + kj, j), (oy + 2 * ki) * 7 + (ox + 2 * kj));
  }
}

TEST(Im2col, MatrixProductEqualsConvolution) {
  Rng rng(14);
  const auto spec = ConvSpec::make(3, 2, 3, 2, 1, 2);
  const Tensor x = random_tensor({1, 3, 9, 8}, rng);
  const LayerParams p = test::random_conv_params(spec, rng);
  const Matrix cols = im2col_atrous(x, spec);
  ConstMatrixMap w(p.weights.data().data(), 2, 27);
  Matrix y = w * cols;
  const Tensor ref = conv2d_forward(x, p, spec);
  for (int o = 0; o < 2; ++o)
    for (int j = 0; j < y.cols(); ++j)
      EXPECT_NEAR(y(o, j) + p.bias[o], ref[o * y.cols() + j], 1e-12);
}

TEST(MaxPool, SingleWindow) {
  Tensor x(1, 1, 2, 2);
  x[0] = 1, x[1] = 2, x[2] = 3, x[3] = 4;
  const auto r = maxpool_forward(x, PoolSpec::make(2, 2));
  ASSERT_EQ(r.output.size(), 1u);
  EXPECT_EQ(r.output[0], 4.0);
  EXPECT_EQ(r.argmax[0], 3u);
}

TEST(MaxPool, StrideOnePreservesConstantMap) {
  Tensor x(1, 2, 5, 6, 0.3);
  const auto r = maxpool_forward(x, PoolSpec::make(3, 1, 1));
  ASSERT_EQ(r.output.shape(), x.shape());
  for (double v : r.output.data()) EXPECT_EQ(v, 0.3);
}

TEST(MaxPool, TiesGoToFirstIndex) {
  Tensor x(1, 1, 2, 2, 1.0);
  const auto r = maxpool_forward(x, PoolSpec::make(2, 2));
  EXPECT_EQ(r.argmax[0], 0u);
}

TEST(MaxPool, BackwardRoutesToArgmaxAndMatchesFiniteDifferences) {
  Rng rng(15);
  Tensor x = random_tensor({1, 2, 7, 7}, rng);
  const PoolSpec spec = PoolSpec::make(3, 2, 1);
  const auto fwd = maxpool_forward(x, spec);
  const Tensor r = random_tensor(fwd.output.shape(), rng);
  const Tensor g = maxpool_backward(r, fwd.argmax, x.shape());
  std::vector<bool> winner(x.size(), false);
  for (auto i : fwd.argmax) winner[i] = true;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!winner[i]) {
      EXPECT_EQ(g[i], 0.0);
    }
  }
  auto loss = [&] { return test::dot(maxpool_forward(x, spec).output.data(), r.data()); };
  const auto rep = grad_check(loss, {{"input", x.data(), g.data()}});
  EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(Affine, IdentityAndBias) {
  LayerParams p = LayerParams::affine(3, 3);
  for (int i = 0; i < 3; ++i) p.weights.at(0, 0, i, i) = 1.0;
  const std::vector<double> x{0.5, -2.0, 3.0};
  EXPECT_EQ(affine_forward(x, p), x);
  LayerParams z = LayerParams::affine(3, 2);
  z.bias = {1.5, -0.25};
  EXPECT_EQ(affine_forward(x, z), z.bias);
  EXPECT_THROW(affine_forward(std::vector<double>{1.0}, z), ShapeError);
}

TEST(Affine, GradientCheckAtSegmentFeatureWidth) {
  Rng rng(16);
  LayerParams p = LayerParams::affine(6144, 300);
  for (double& v : p.weights.data()) v = rng.uniform(-0.02, 0.02);
  for (double& v : p.bias) v = rng.uniform(-1, 1);
  std::vector<double> x(6144);
  for (double& v : x) v = rng.uniform(-1, 1);
  std::vector<double> r(300);
  for (double& v : r) v = rng.uniform(-1, 1);
  const auto gx = affine_backward(x, r, p);
  auto loss = [&] { return test::dot(affine_forward(x, p), r); };
  GradCheckOptions opt;
  opt.max_coords_per_target = 400;
  const auto rep = grad_check(loss, {{"input", x, gx},
                                     {"weights", p.weights.data(), p.weight_grad.data()},
                                     {"bias", p.bias, p.bias_grad}},
                              opt);
  EXPECT_LT(rep.max_rel_error, 1e-6) << rep.worst_target;
}

TEST(Sigmoid, ValuesAndSymmetry) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  for (double x : {0.1, 1.0, 7.5, 40.0, 800.0}) {
    EXPECT_NEAR(sigmoid(x) + sigmoid(-x), 1.0, 1e-15);
  }
  EXPECT_TRUE(std::isfinite(sigmoid(-1e6)));
  EXPECT_EQ(sigmoid(-1e6), 0.0);
  EXPECT_EQ(sigmoid(1e6), 1.0);
}

TEST(Sigmoid, GradientCheck) {
  Rng rng(17);
  Tensor x = random_tensor({1, 2, 4, 4}, rng, -4, 4);
  const Tensor r = random_tensor(x.shape(), rng);
  const Tensor g = sigmoid_backward(sigmoid_forward(x), r);
  auto loss = [&] { return test::dot(sigmoid_forward(x).data(), r.data()); };
  EXPECT_LT(grad_check(loss, {{"input", x.data(), g.data()}}).max_rel_error, 1e-8);
}

TEST(Bilinear, ConstantStaysConstant) {
  const Tensor y = bilinear_upsample(Tensor(1, 1, 3, 4, 0.7), 11, 13);
  for (double v : y.data()) EXPECT_NEAR(v, 0.7, 1e-15);
  const Tensor one = bilinear_upsample(Tensor(1, 1, 1, 1, 0.25), 5, 5);
  for (double v : one.data()) EXPECT_EQ(v, 0.25);
}

TEST(Bilinear, RowsRampLinearly) {
  Tensor x(1, 1, 2, 2);
  x[0] = 0, x[1] = 1, x[2] = 0, x[3] = 1;
  const Tensor y = bilinear_upsample(x, 2, 4);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_NEAR(y.at(0, 0, r, c), c / 3.0, 1e-15);
}

TEST(Bilinear, FactorEightPreservesCorners) {
  Rng rng(18);
  const Tensor x = random_tensor({1, 1, 40, 40}, rng);
  const Tensor y = bilinear_upsample(x, 320, 320);
  EXPECT_EQ(y.at(0, 0, 0, 0), x.at(0, 0, 0, 0));
  EXPECT_EQ(y.at(0, 0, 0, 319), x.at(0, 0, 0, 39));
  EXPECT_EQ(y.at(0, 0, 319, 0), x.at(0, 0, 39, 0));
  EXPECT_EQ(y.at(0, 0, 319, 319), x.at(0, 0, 39, 39));
}

TEST(Bilinear, BackwardIsAdjoint) {
  Rng rng(19);
  Tensor x = random_tensor({1, 1, 5, 6}, rng);
  const Tensor r = random_tensor({1, 1, 17, 23}, rng);
  const Tensor g = bilinear_resize_backward(r, 5, 6);
  auto loss = [&] { return test::dot(bilinear_upsample(x, 17, 23).data(), r.data()); };
  EXPECT_LT(grad_check(loss, {{"input", x.data(), g.data()}}).max_rel_error, 1e-8);
  EXPECT_THROW(bilinear_upsample(x, 4, 10), ShapeError);
}

TEST(GradCheck, ConvPoolConvSigmoidStack) {
  Rng rng(20);
  Tensor x = random_tensor({1, 2, 9, 9}, rng);
  const auto s1 = ConvSpec::make(2, 3, 3, 1, 1);
  const auto s2 = ConvSpec::make(3, 2, 3, 1, 2, 2);
  const PoolSpec ps = PoolSpec::make(3, 2, 1);
  LayerParams p1 = test::random_conv_params(s1, rng), p2 = test::random_conv_params(s2, rng);
  Tensor r;
  auto forward = [&](PoolResult* pooled, Tensor* a1, Tensor* a2) {
    Tensor h1 = conv2d_forward(x, p1, s1);
    auto pr = maxpool_forward(h1, ps);
    Tensor h2 = conv2d_forward(pr.output, p2, s2);
    Tensor out = sigmoid_forward(h2);
    if (pooled) *pooled = pr;
    if (a1) *a1 = h1;
    if (a2) *a2 = out;
    return out;
  };
  PoolResult pr;
  Tensor h1, out;
  forward(&pr, &h1, &out);
  r = random_tensor(out.shape(), rng);
  const Tensor g_h2 = sigmoid_backward(out, r);
  const Tensor g_pool = conv2d_backward(pr.output, g_h2, p2, s2);
  const Tensor g_h1 = maxpool_backward(g_pool, pr.argmax, h1.shape());
  const Tensor g_x = conv2d_backward(x, g_h1, p1, s1);
  auto loss = [&] { return test::dot(forward(nullptr, nullptr, nullptr).data(), r.data()); };
  const auto rep = grad_check(loss, {{"input", x.data(), g_x.data()},
                                     {"w1", p1.weights.data(), p1.weight_grad.data()},
                                     {"b1", p1.bias, p1.bias_grad},
                                     {"w2", p2.weights.data(), p2.weight_grad.data()},
                                     {"b2", p2.bias, p2.bias_grad}});
  EXPECT_LT(rep.max_rel_error, 1e-5) << rep.worst_target;
}

TEST(GradCheck, TwentyRandomConvInstances) {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(3));
    const int d = 1 + static_cast<int>(rng.below(2));
    const int stride = 1 + static_cast<int>(rng.below(2));
    const auto spec = ConvSpec::make(1 + static_cast<int>(rng.below(2)),
                                     1 + static_cast<int>(rng.below(3)), k, stride,
                                     static_cast<int>(rng.below(2)), d);
    const int side = spec.extent_h() + 2 + static_cast<int>(rng.below(4));
    const auto rep = check_conv(spec, {1, spec.in_channels, side, side}, 100 + trial);
    EXPECT_LT(rep.max_rel_error, 1e-5) << "trial " << trial << " " << rep.worst_target;
  }
}

}  // namespace
}  // namespace dcl
