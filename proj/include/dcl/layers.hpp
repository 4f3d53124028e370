#ifndef DCL_LAYERS_HPP
#define DCL_LAYERS_HPP

#include <Eigen/Core>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/tensor.hpp"

namespace dcl {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

/// Geometry of one 2-D convolution. A dilation of d samples the input every
/// d pixels, i.e. the kernel behaves as if d-1 zeros sat between its taps.
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel_h = 1, kernel_w = 1;
  int stride_h = 1, stride_w = 1;
  int pad_h = 0, pad_w = 0;
  int dilation_h = 1, dilation_w = 1;

  int extent_h() const { return (kernel_h - 1) * dilation_h + 1; }
  int extent_w() const { return (kernel_w - 1) * dilation_w + 1; }
  int out_h(int in_h) const { return (in_h + 2 * pad_h - extent_h()) / stride_h + 1; }
  int out_w(int in_w) const { return (in_w + 2 * pad_w - extent_w()) / stride_w + 1; }

  void validate() const {
    if (in_channels < 1 || out_channels < 1) throw ShapeError("conv channel counts must be >= 1");
    if (kernel_h < 1 || kernel_w < 1) throw ShapeError("conv kernel must be >= 1");
    if (stride_h < 1 || stride_w < 1) throw ShapeError("conv stride must be >= 1");
    if (dilation_h < 1 || dilation_w < 1) throw ShapeError("conv dilation must be >= 1");
    if (pad_h < 0 || pad_w < 0) throw ShapeError("conv pad must be >= 0");
  }

  /// Square-kernel shorthand.
  static ConvSpec make(int in, int out, int k, int stride = 1, int pad = 0, int dilation = 1) {
    return ConvSpec{in, out, k, k, stride, stride, pad, pad, dilation, dilation};
  }

  friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Weights, bias and their gradient accumulators.
///
/// Convolution weights are laid out (out, in, kh, kw); affine weights are
/// (1, 1, out, in).
struct LayerParams {
  Tensor weights;
  std::vector<double> bias;
  Tensor weight_grad;
  std::vector<double> bias_grad;

  LayerParams() = default;
  LayerParams(Shape weight_shape, std::size_t bias_count)
      : weights(weight_shape), bias(bias_count, 0.0), weight_grad(weight_shape),
        bias_grad(bias_count, 0.0) {}

  static LayerParams conv(const ConvSpec& s) {
    return LayerParams(Shape{s.out_channels, s.in_channels, s.kernel_h, s.kernel_w},
                       static_cast<std::size_t>(s.out_channels));
  }
  static LayerParams affine(int in_dim, int out_dim) {
    return LayerParams(Shape{1, 1, out_dim, in_dim}, static_cast<std::size_t>(out_dim));
  }

  void zero_grad() {
    weight_grad.fill(0.0);
    std::fill(bias_grad.begin(), bias_grad.end(), 0.0);
  }
  std::size_t count() const { return weights.size() + bias.size(); }
};

/// Number of conv2d_forward invocations since process start (or the last reset).
inline std::atomic<std::uint64_t>& conv_forward_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

namespace detail {

inline void check_conv_input(const Tensor& input, const ConvSpec& spec) {
  spec.validate();
  if (input.c() != spec.in_channels) {
    throw ShapeError("conv input channels: got " + std::to_string(input.c()) + ", expected " +
                     std::to_string(spec.in_channels));
  }
  if (spec.out_h(input.h()) < 1 || input.h() + 2 * spec.pad_h < spec.extent_h()) {
    throw ShapeError("conv input height " + std::to_string(input.h()) +
                     " too small for kernel extent " + std::to_string(spec.extent_h()));
  }
  if (spec.out_w(input.w()) < 1 || input.w() + 2 * spec.pad_w < spec.extent_w()) {
    throw ShapeError("conv input width " + std::to_string(input.w()) +
                     " too small for kernel extent " + std::to_string(spec.extent_w()));
  }
}

inline void check_params(const LayerParams& p, const ConvSpec& spec) {
  const Shape expect{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
  if (p.weights.shape() != expect) {
    throw ShapeError("conv weights " + to_string(p.weights.shape()) + " do not match spec " +
                     to_string(expect));
  }
  if (p.bias.size() != static_cast<std::size_t>(spec.out_channels)) {
    throw ShapeError("conv bias length does not match out_channels");
  }
}

}  // namespace detail

/// Unrolls the dilated receptive fields of image `n` into columns.
/// Row index is (c * kh + ki) * kw + kj; column index is oy * out_w + ox.
/// Taps falling into the zero padding read as 0.
inline Matrix im2col_atrous(const Tensor& input, const ConvSpec& spec, int n = 0) {
  detail::check_conv_input(input, spec);
  const int oh = spec.out_h(input.h()), ow = spec.out_w(input.w());
  const int rows = spec.in_channels * spec.kernel_h * spec.kernel_w;
  Matrix cols(rows, oh * ow);
  const int H = input.h(), W = input.w();
  for (int c = 0; c < spec.in_channels; ++c) {
    const auto plane = input.plane(n, c);
    for (int ki = 0; ki < spec.kernel_h; ++ki) {
      for (int kj = 0; kj < spec.kernel_w; ++kj) {
        const int row = (c * spec.kernel_h + ki) * spec.kernel_w + kj;
        double* dst = cols.data() + static_cast<std::size_t>(row) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * spec.stride_h - spec.pad_h + ki * spec.dilation_h;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * spec.stride_w - spec.pad_w + kj * spec.dilation_w;
            dst[oy * ow + ox] =
                (iy >= 0 && iy < H && ix >= 0 && ix < W) ? plane[iy * W + ix] : 0.0;
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col_atrous: scatters column gradients back into image `n`.
inline void col2im_atrous(const Matrix& cols, const ConvSpec& spec, Tensor& input_grad, int n) {
  const int H = input_grad.h(), W = input_grad.w();
  const int oh = spec.out_h(H), ow = spec.out_w(W);
  for (int c = 0; c < spec.in_channels; ++c) {
    auto plane = input_grad.plane(n, c);
    for (int ki = 0; ki < spec.kernel_h; ++ki) {
      for (int kj = 0; kj < spec.kernel_w; ++kj) {
        const int row = (c * spec.kernel_h + ki) * spec.kernel_w + kj;
        const double* src = cols.data() + static_cast<std::size_t>(row) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * spec.stride_h - spec.pad_h + ki * spec.dilation_h;
          if (iy < 0 || iy >= H) continue;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * spec.stride_w - spec.pad_w + kj * spec.dilation_w;
            if (ix < 0 || ix >= W) continue;
            plane[iy * W + ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

/// Dilated cross-correlation plus bias (no kernel flip).
inline Tensor conv2d_forward(const Tensor& input, const LayerParams& params,
                             const ConvSpec& spec) {
  detail::check_conv_input(input, spec);
  detail::check_params(params, spec);
  require_finite(input, "conv2d input");
  conv_forward_counter().fetch_add(1, std::memory_order_relaxed);

  const int oh = spec.out_h(input.h()), ow = spec.out_w(input.w());
  Tensor out(input.n(), spec.out_channels, oh, ow);
  const int rows = spec.in_channels * spec.kernel_h * spec.kernel_w;
  ConstMatrixMap wmat(params.weights.data().data(), spec.out_channels, rows);
  for (int n = 0; n < input.n(); ++n) {
    const Matrix cols = im2col_atrous(input, spec, n);
    MatrixMap omat(out.plane(n, 0).data(), spec.out_channels, oh * ow);
    omat.noalias() = wmat * cols;
    for (int o = 0; o < spec.out_channels; ++o) omat.row(o).array() += params.bias[o];
  }
  return out;
}

/// Returns d(loss)/d(input) and accumulates weight/bias gradients into params.
inline Tensor conv2d_backward(const Tensor& input, const Tensor& output_grad,
                              LayerParams& params, const ConvSpec& spec) {
  detail::check_conv_input(input, spec);
  detail::check_params(params, spec);
  const int oh = spec.out_h(input.h()), ow = spec.out_w(input.w());
  const Shape expect{input.n(), spec.out_channels, oh, ow};
  if (output_grad.shape() != expect) {
    throw ShapeError("conv output_grad " + to_string(output_grad.shape()) + ", expected " +
                     to_string(expect));
  }
  if (params.weight_grad.shape() != params.weights.shape()) {
    params.weight_grad = Tensor(params.weights.shape());
  }
  if (params.bias_grad.size() != params.bias.size()) params.bias_grad.assign(params.bias.size(), 0);

  Tensor input_grad(input.shape());
  const int rows = spec.in_channels * spec.kernel_h * spec.kernel_w;
  ConstMatrixMap wmat(params.weights.data().data(), spec.out_channels, rows);
  MatrixMap wgrad(params.weight_grad.data().data(), spec.out_channels, rows);
  for (int n = 0; n < input.n(); ++n) {
    ConstMatrixMap gmat(output_grad.plane(n, 0).data(), spec.out_channels, oh * ow);
    if (gmat.isZero(0.0)) continue;
    const Matrix cols = im2col_atrous(input, spec, n);
    wgrad.noalias() += gmat * cols.transpose();
    for (int o = 0; o < spec.out_channels; ++o) params.bias_grad[o] += gmat.row(o).sum();
    const Matrix dcols = wmat.transpose() * gmat;
    col2im_atrous(dcols, spec, input_grad, n);
  }
  return input_grad;
}

// ---------------------------------------------------------------------------
// Max pooling

struct PoolSpec {
  int kernel_h = 2, kernel_w = 2;
  int stride_h = 2, stride_w = 2;
  int pad_h = 0, pad_w = 0;

  int out_h(int in_h) const { return (in_h + 2 * pad_h - kernel_h) / stride_h + 1; }
  int out_w(int in_w) const { return (in_w + 2 * pad_w - kernel_w) / stride_w + 1; }
  static PoolSpec make(int k, int stride, int pad = 0) {
    return PoolSpec{k, k, stride, stride, pad, pad};
  }
  friend bool operator==(const PoolSpec&, const PoolSpec&) = default;
};

struct PoolResult {
  Tensor output;
  /// Flat input index of the winning element for every output element.
  std::vector<std::size_t> argmax;
};

/// Max over each window; padded positions never win. Ties keep the first
/// element in row-major scan order.
inline PoolResult maxpool_forward(const Tensor& input, const PoolSpec& spec) {
  if (spec.kernel_h < 1 || spec.kernel_w < 1 || spec.stride_h < 1 || spec.stride_w < 1) {
    throw ShapeError("pool window and stride must be >= 1");
  }
  if (spec.pad_h < 0 || spec.pad_w < 0 || spec.pad_h >= spec.kernel_h ||
      spec.pad_w >= spec.kernel_w) {
    throw ShapeError("pool pad must lie in [0, kernel)");
  }
  const int oh = spec.out_h(input.h()), ow = spec.out_w(input.w());
  if (oh < 1 || ow < 1) {
    throw ShapeError("pool input " + to_string(input.shape()) + " smaller than window");
  }
  PoolResult r{Tensor(input.n(), input.c(), oh, ow), {}};
  r.argmax.resize(r.output.size());
  const int H = input.h(), W = input.w();
  std::size_t o = 0;
  for (int n = 0; n < input.n(); ++n) {
    for (int c = 0; c < input.c(); ++c) {
      const std::size_t base = input.offset(n, c, 0, 0);
      for (int oy = 0; oy < oh; ++oy) {
        const int y0 = std::max(oy * spec.stride_h - spec.pad_h, 0);
        const int y1 = std::min(oy * spec.stride_h - spec.pad_h + spec.kernel_h, H);
        for (int ox = 0; ox < ow; ++ox, ++o) {
          const int x0 = std::max(ox * spec.stride_w - spec.pad_w, 0);
          const int x1 = std::min(ox * spec.stride_w - spec.pad_w + spec.kernel_w, W);
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = base + static_cast<std::size_t>(y0) * W + x0;
          for (int y = y0; y < y1; ++y) {
            for (int x = x0; x < x1; ++x) {
              const std::size_t idx = base + static_cast<std::size_t>(y) * W + x;
              if (input[idx] > best) {
                best = input[idx];
                best_idx = idx;
              }
            }
          }
          r.output[o] = best;
          r.argmax[o] = best_idx;
        }
      }
    }
  }
  return r;
}

inline Tensor maxpool_backward(const Tensor& output_grad, const std::vector<std::size_t>& argmax,
                               const Shape& input_shape) {
  if (argmax.size() != output_grad.size()) throw ShapeError("pool argmax/output_grad mismatch");
  Tensor g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += output_grad[i];
  return g;
}

// ---------------------------------------------------------------------------
// Affine

inline std::vector<double> affine_forward(std::span<const double> input,
                                          const LayerParams& params) {
  const int out_dim = params.weights.h(), in_dim = params.weights.w();
  if (static_cast<int>(input.size()) != in_dim) {
    throw ShapeError("affine input length " + std::to_string(input.size()) + ", expected " +
                     std::to_string(in_dim));
  }
  std::vector<double> out(out_dim);
  ConstMatrixMap wmat(params.weights.data().data(), out_dim, in_dim);
  Eigen::Map<const Eigen::VectorXd> x(input.data(), in_dim);
  Eigen::Map<Eigen::VectorXd> y(out.data(), out_dim);
  y.noalias() = wmat * x;
  for (int o = 0; o < out_dim; ++o) out[o] += params.bias[o];
  return out;
}

inline std::vector<double> affine_backward(std::span<const double> input,
                                           std::span<const double> output_grad,
                                           LayerParams& params) {
  const int out_dim = params.weights.h(), in_dim = params.weights.w();
  if (static_cast<int>(input.size()) != in_dim || static_cast<int>(output_grad.size()) != out_dim) {
    throw ShapeError("affine backward dimension mismatch");
  }
  if (params.weight_grad.shape() != params.weights.shape()) {
    params.weight_grad = Tensor(params.weights.shape());
  }
  if (params.bias_grad.size() != params.bias.size()) params.bias_grad.assign(params.bias.size(), 0);
  ConstMatrixMap wmat(params.weights.data().data(), out_dim, in_dim);
  MatrixMap wgrad(params.weight_grad.data().data(), out_dim, in_dim);
  Eigen::Map<const Eigen::VectorXd> x(input.data(), in_dim);
  Eigen::Map<const Eigen::VectorXd> g(output_grad.data(), out_dim);
  wgrad.noalias() += g * x.transpose();
  for (int o = 0; o < out_dim; ++o) params.bias_grad[o] += output_grad[o];
  std::vector<double> dx(in_dim);
  Eigen::Map<Eigen::VectorXd>(dx.data(), in_dim).noalias() = wmat.transpose() * g;
  return dx;
}

// ---------------------------------------------------------------------------
// Pointwise

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid_forward(const Tensor& input) {
  Tensor out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = sigmoid(input[i]);
  return out;
}

inline Tensor sigmoid_backward(const Tensor& output, const Tensor& output_grad) {
  Tensor g(output.shape());
  for (std::size_t i = 0; i < output.size(); ++i) {
    g[i] = output[i] * (1.0 - output[i]) * output_grad[i];
  }
  return g;
}

inline void relu_inplace(std::span<double> v) {
  for (double& x : v) x = x > 0.0 ? x : 0.0;
}

/// `output` is the rectified activation; its zeros block the gradient.
inline void relu_backward_inplace(std::span<const double> output, std::span<double> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(output[i] > 0.0)) grad[i] = 0.0;
  }
}

// ---------------------------------------------------------------------------
// Bilinear resampling, align-corners: src = dst * (in - 1) / (out - 1).

namespace detail {

struct Tap {
  int i0, i1;
  double t;
};

inline std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(out);
  for (int d = 0; d < out; ++d) {
    if (in == 1 || out == 1) {
      taps[d] = {0, 0, 0.0};
      continue;
    }
    const double src = static_cast<double>(d) * (in - 1) / (out - 1);
    int i0 = static_cast<int>(std::floor(src));
    if (i0 >= in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[d] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace detail

/// Resamples every (n, c) plane to (target_h, target_w). Works in both
/// directions; used directly for image resizing.
inline Tensor bilinear_resize(const Tensor& input, int target_h, int target_w) {
  if (target_h < 1 || target_w < 1) throw ShapeError("bilinear target dims must be >= 1");
  const auto ty = detail::bilinear_taps(input.h(), target_h);
  const auto tx = detail::bilinear_taps(input.w(), target_w);
  Tensor out(input.n(), input.c(), target_h, target_w);
  const int W = input.w();
  for (int n = 0; n < input.n(); ++n) {
    for (int c = 0; c < input.c(); ++c) {
      const auto src = input.plane(n, c);
      auto dst = out.plane(n, c);
      for (int y = 0; y < target_h; ++y) {
        const auto& a = ty[y];
        for (int x = 0; x < target_w; ++x) {
          const auto& b = tx[x];
          const double top = (1 - b.t) * src[a.i0 * W + b.i0] + b.t * src[a.i0 * W + b.i1];
          const double bot = (1 - b.t) * src[a.i1 * W + b.i0] + b.t * src[a.i1 * W + b.i1];
          dst[y * target_w + x] = (1 - a.t) * top + a.t * bot;
        }
      }
    }
  }
  return out;
}

inline Tensor bilinear_upsample(const Tensor& input, int target_h, int target_w) {
  if (target_h < input.h() || target_w < input.w()) {
    throw ShapeError("bilinear_upsample target " + std::to_string(target_h) + "x" +
                     std::to_string(target_w) + " smaller than input " + to_string(input.shape()));
  }
  return bilinear_resize(input, target_h, target_w);
}

/// Adjoint of bilinear_resize.
inline Tensor bilinear_resize_backward(const Tensor& output_grad, int in_h, int in_w) {
  const int oh = output_grad.h(), ow = output_grad.w();
  const auto ty = detail::bilinear_taps(in_h, oh);
  const auto tx = detail::bilinear_taps(in_w, ow);
  Tensor g(output_grad.n(), output_grad.c(), in_h, in_w);
  for (int n = 0; n < g.n(); ++n) {
    for (int c = 0; c < g.c(); ++c) {
      const auto src = output_grad.plane(n, c);
      auto dst = g.plane(n, c);
      for (int y = 0; y < oh; ++y) {
        const auto& a = ty[y];
        for (int x = 0; x < ow; ++x) {
          const auto& b = tx[x];
          const double v = src[y * ow + x];
          dst[a.i0 * in_w + b.i0] += (1 - a.t) * (1 - b.t) * v;
          dst[a.i0 * in_w + b.i1] += (1 - a.t) * b.t * v;
          dst[a.i1 * in_w + b.i0] += a.t * (1 - b.t) * v;
          dst[a.i1 * in_w + b.i1] += a.t * b.t * v;
        }
      }
    }
  }
  return g;
}

}  // namespace dcl

#endif  // DCL_LAYERS_HPP
