#ifndef DCL_MSFCN_HPP
#define DCL_MSFCN_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/layers.hpp"
#include "dcl/rng.hpp"
#include "dcl/tensor.hpp"

namespace dcl {

/// Learning-rate group: freshly added single-channel layers train faster.
enum class LrGroup { kBase, kNewSingleChannel };

struct ConvLayer {
  std::string name;
  ConvSpec spec;
  LayerParams params;
  bool relu = true;
  LrGroup group = LrGroup::kBase;
};

/// VGG16-shaped backbone plus the four side branches of the multi-scale stream.
struct BackboneConfig {
  std::vector<int> stage_widths{64, 128, 256, 512, 512};
  std::vector<int> convs_per_stage{2, 2, 3, 3, 3};
  /// Pools 4 and 5 run at stride 1 (8-pixel output stride instead of 32).
  bool skip_last_two_subsampling = true;
  int post_pool4_dilation = 2;
  int top_dilation = 4;
  int top_width = 4096;
  int branch_width = 128;
  std::array<int, 4> branch_strides{4, 2, 1, 1};
  double width_scale = 1.0;
  int input_channels = 3;
  /// Per-channel mean subtracted after mapping pixels to [0, 1].
  std::array<double, 3> input_mean{0.5, 0.5, 0.5};

  int scaled(int width) const {
    return std::max(1, static_cast<int>(std::lround(width * width_scale)));
  }

  void validate() const {
    if (stage_widths.size() != 5 || convs_per_stage.size() != 5) {
      throw ConfigError("backbone needs exactly five stages");
    }
    for (std::size_t s = 0; s < 5; ++s) {
      if (stage_widths[s] < 1 || convs_per_stage[s] < 1) {
        throw ConfigError("stage widths and conv counts must be >= 1");
      }
    }
    if (!(width_scale > 0 && std::isfinite(width_scale))) {
      throw ConfigError("width_scale must be a positive number");
    }
    if (top_width < 1 || branch_width < 1 || input_channels < 1) {
      throw ConfigError("layer widths must be >= 1");
    }
    if (post_pool4_dilation < 1 || top_dilation < 1) throw ConfigError("dilations must be >= 1");
    for (int s : branch_strides) {
      if (s < 1) throw ConfigError("branch strides must be >= 1");
    }
  }
};

/// Per-axis geometry of one spatial layer, for receptive-field arithmetic.
struct LayerGeometry {
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int dilation = 1;
  int extent() const { return (kernel - 1) * dilation + 1; }
};

struct Point2 {
  double y = 0.0;
  double x = 0.0;
};

/// Maps activation (i, j) of the last layer in `geometry_h`/`geometry_w` back
/// to the centre of its receptive field in input pixels, applying
/// c <- s * c + ((k_eff - 1) / 2 - p) from the top layer down.
inline Point2 receptive_field_center(const std::vector<LayerGeometry>& geometry_h,
                                     const std::vector<LayerGeometry>& geometry_w,
                                     int feature_h, int feature_w, int i, int j) {
  if (i < 0 || i >= feature_h || j < 0 || j >= feature_w) {
    throw InvalidArgument("receptive_field_center: position (" + std::to_string(i) + "," +
                          std::to_string(j) + ") outside " + std::to_string(feature_h) + "x" +
                          std::to_string(feature_w));
  }
  auto project = [](const std::vector<LayerGeometry>& g, double c) {
    for (auto it = g.rbegin(); it != g.rend(); ++it) {
      c = it->stride * c + ((it->extent() - 1) / 2.0 - it->pad);
    }
    return c;
  };
  return {project(geometry_h, i), project(geometry_w, j)};
}

inline LayerGeometry geometry_h(const ConvSpec& s) {
  return {s.kernel_h, s.stride_h, s.pad_h, s.dilation_h};
}
inline LayerGeometry geometry_w(const ConvSpec& s) {
  return {s.kernel_w, s.stride_w, s.pad_w, s.dilation_w};
}
inline LayerGeometry geometry_h(const PoolSpec& s) { return {s.kernel_h, s.stride_h, s.pad_h, 1}; }
inline LayerGeometry geometry_w(const PoolSpec& s) { return {s.kernel_w, s.stride_w, s.pad_w, 1}; }

struct MsFcnOutput {
  Tensor s1;       // 1x1xHxW in [0, 1]
  Tensor raw_s1;   // 1x1xhxw at the feature stride
  Tensor conv5_3;  // 1xCxhxw, rectified
  std::array<Tensor, 4> branch_maps;
};

/// Activations kept for the backward pass.
struct MsFcnCache {
  struct Chain {
    std::vector<Tensor> inputs;
    std::vector<Tensor> outputs;
  };
  Tensor input;
  std::vector<Chain> stages;
  std::vector<PoolResult> pools;
  std::vector<Tensor> pool_outputs;
  Chain top;
  std::array<Chain, 4> branches;
  Tensor stack_input;
  Tensor raw_s1;
  int image_h = 0, image_w = 0;
};

struct MsFcnShapes {
  std::vector<Shape> pool_outputs;
  Shape conv5_3;
  Shape top;
  std::array<Shape, 4> branches;
};

class MsFcn {
 public:
  MsFcn() = default;

  /// Builds and initialises the multi-scale stream. Convolutions get
  /// fan-in-scaled uniform weights and zero bias; the 5-channel stacking
  /// layer starts as a plain 0.2-weighted average.
  static MsFcn build(const BackboneConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    MsFcn net;
    net.cfg_ = cfg;
    const std::size_t stages = cfg.stage_widths.size();
    int in = cfg.input_channels;
    for (std::size_t s = 0; s < stages; ++s) {
      const int width = cfg.scaled(cfg.stage_widths[s]);
      const bool dilated = s == 4 && cfg.skip_last_two_subsampling;
      const int d = dilated ? cfg.post_pool4_dilation : 1;
      std::vector<ConvLayer> layers;
      for (int k = 0; k < cfg.convs_per_stage[s]; ++k) {
        ConvLayer l;
        l.name = "conv" + std::to_string(s + 1) + "_" + std::to_string(k + 1);
        l.spec = ConvSpec::make(in, width, 3, 1, d, d);
        layers.push_back(std::move(l));
        in = width;
      }
      net.stages_.push_back(std::move(layers));
      const bool skip = s >= 3 && cfg.skip_last_two_subsampling;
      net.pools_.push_back(PoolSpec::make(3, skip ? 1 : 2, 1));
    }
    const int top_width = cfg.scaled(cfg.top_width);
    const int td = cfg.skip_last_two_subsampling ? cfg.top_dilation : 1;
    net.top_.push_back({"fc6", ConvSpec::make(in, top_width, 1, 1, 0, td), {}, true});
    net.top_.push_back({"fc7", ConvSpec::make(top_width, top_width, 1, 1, 0, td), {}, true});
    net.top_.push_back(
        {"fc8_score", ConvSpec::make(top_width, 1, 1, 1, 0, 1), {}, false, LrGroup::kNewSingleChannel});

    const int bw = cfg.scaled(cfg.branch_width);
    for (int b = 0; b < 4; ++b) {
      const int attach_c = net.stages_[b].back().spec.out_channels;
      const std::string p = "branch" + std::to_string(b + 1) + "_";
      auto& br = net.branches_[b];
      br.push_back({p + "conv1", ConvSpec::make(attach_c, bw, 3, cfg.branch_strides[b], 1), {}, true});
      br.push_back({p + "conv2", ConvSpec::make(bw, bw, 1), {}, true});
      br.push_back({p + "conv3", ConvSpec::make(bw, 1, 1), {}, false, LrGroup::kNewSingleChannel});
    }
    net.stack_ = {"stack", ConvSpec::make(5, 1, 1), {}, false, LrGroup::kNewSingleChannel};

    net.validate_alignment();

    Rng rng(seed);
    net.for_each_layer([&](ConvLayer& l) {
      l.params = LayerParams::conv(l.spec);
      const double fan_in = static_cast<double>(l.spec.in_channels) * l.spec.kernel_h *
                            l.spec.kernel_w;
      const double bound = std::sqrt(6.0 / fan_in);
      for (double& w : l.params.weights.data()) w = rng.uniform(-bound, bound);
    });
    net.stack_.params.weights.fill(0.2);
    return net;
  }

  const BackboneConfig& config() const { return cfg_; }

  /// Visits every layer in a fixed order: stages, top, branches, stack.
  template <class Fn>
  void for_each_layer(Fn&& fn) {
    for (auto& st : stages_)
      for (auto& l : st) fn(l);
    for (auto& l : top_) fn(l);
    for (auto& br : branches_)
      for (auto& l : br) fn(l);
    fn(stack_);
  }
  template <class Fn>
  void for_each_layer(Fn&& fn) const {
    for (const auto& st : stages_)
      for (const auto& l : st) fn(l);
    for (const auto& l : top_) fn(l);
    for (const auto& br : branches_)
      for (const auto& l : br) fn(l);
    fn(stack_);
  }

  std::size_t conv_layer_count() const {
    std::size_t n = 0;
    for_each_layer([&](const ConvLayer&) { ++n; });
    return n;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_layer([&](const ConvLayer& l) { n += l.params.count(); });
    return n;
  }

  /// Weights of the thirteen backbone convolutions only.
  std::size_t backbone_weight_count() const {
    std::size_t n = 0;
    for (const auto& st : stages_)
      for (const auto& l : st) n += l.params.weights.size();
    return n;
  }

  const std::vector<std::vector<ConvLayer>>& stages() const { return stages_; }
  const std::vector<PoolSpec>& pools() const { return pools_; }
  const std::vector<ConvLayer>& top() const { return top_; }
  const std::array<std::vector<ConvLayer>, 4>& branches() const { return branches_; }
  const ConvLayer& stack() const { return stack_; }
  ConvLayer& stack() { return stack_; }

  int conv5_3_channels() const { return stages_.back().back().spec.out_channels; }

  /// Layer geometry from the input up to and including conv5_3.
  std::pair<std::vector<LayerGeometry>, std::vector<LayerGeometry>> conv5_3_geometry() const {
    std::vector<LayerGeometry> gh, gw;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (const auto& l : stages_[s]) {
        gh.push_back(geometry_h(l.spec));
        gw.push_back(geometry_w(l.spec));
      }
      if (s + 1 < stages_.size()) {
        gh.push_back(geometry_h(pools_[s]));
        gw.push_back(geometry_w(pools_[s]));
      }
    }
    return {gh, gw};
  }

  /// Shape propagation without arithmetic.
  MsFcnShapes infer_shapes(int H, int W) const {
    MsFcnShapes r;
    int h = H, w = W;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      int c = 0;
      for (const auto& l : stages_[s]) {
        h = l.spec.out_h(h);
        w = l.spec.out_w(w);
        c = l.spec.out_channels;
      }
      if (s + 1 == stages_.size()) r.conv5_3 = {1, c, h, w};
      h = pools_[s].out_h(h);
      w = pools_[s].out_w(w);
      r.pool_outputs.push_back({1, c, h, w});
    }
    for (const auto& l : top_) {
      h = l.spec.out_h(h);
      w = l.spec.out_w(w);
    }
    r.top = {1, 1, h, w};
    for (int b = 0; b < 4; ++b) {
      int bh = r.pool_outputs[b].h, bwid = r.pool_outputs[b].w;
      for (const auto& l : branches_[b]) {
        bh = l.spec.out_h(bh);
        bwid = l.spec.out_w(bwid);
      }
      r.branches[b] = {1, 1, bh, bwid};
    }
    return r;
  }

  /// Smallest image side the network accepts.
  static constexpr int kMinImageSide = 9;

  MsFcnOutput forward(const Tensor& image, MsFcnCache* cache = nullptr) const {
    if (image.n() != 1 || image.c() != cfg_.input_channels) {
      throw ShapeError("msfcn expects a 1x" + std::to_string(cfg_.input_channels) +
                       "xHxW image, got " + to_string(image.shape()));
    }
    if (image.h() < kMinImageSide || image.w() < kMinImageSide) {
      throw ShapeError("image " + std::to_string(image.h()) + "x" + std::to_string(image.w()) +
                       " too small; need at least " + std::to_string(kMinImageSide) + " per side");
    }
    require_finite(image, "msfcn input image");
    MsFcnCache local;
    MsFcnCache& c = cache ? *cache : local;
    c = MsFcnCache{};
    c.image_h = image.h();
    c.image_w = image.w();
    c.input = image;
    for (int ch = 0; ch < image.c(); ++ch) {
      const double m = ch < 3 ? cfg_.input_mean[ch] : 0.0;
      for (double& v : c.input.plane(0, ch)) v -= m;
    }

    MsFcnOutput out;
    Tensor x = c.input;
    c.stages.resize(stages_.size());
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      x = run_chain(stages_[s], x, c.stages[s]);
      if (s + 1 == stages_.size()) out.conv5_3 = x;
      c.pools.push_back(maxpool_forward(x, pools_[s]));
      c.pool_outputs.push_back(c.pools.back().output);
      x = c.pool_outputs.back();
    }
    Tensor score = run_chain(top_, x, c.top);
    for (int b = 0; b < 4; ++b) {
      out.branch_maps[b] = run_chain(branches_[b], c.pool_outputs[b], c.branches[b]);
      if (out.branch_maps[b].shape() != score.shape()) {
        throw ShapeError("branch " + std::to_string(b + 1) + " map " +
                         to_string(out.branch_maps[b].shape()) + " misaligned with top map " +
                         to_string(score.shape()));
      }
    }
    c.stack_input = Tensor(1, 5, score.h(), score.w());
    for (int b = 0; b < 4; ++b) {
      std::copy_n(out.branch_maps[b].data().begin(), score.size(),
                  c.stack_input.plane(0, b).begin());
    }
    std::copy_n(score.data().begin(), score.size(), c.stack_input.plane(0, 4).begin());
    out.raw_s1 = sigmoid_forward(conv2d_forward(c.stack_input, stack_.params, stack_.spec));
    c.raw_s1 = out.raw_s1;
    out.s1 = bilinear_upsample(out.raw_s1, image.h(), image.w());
    require_finite(out.conv5_3, "conv5_3");
    return out;
  }

  /// Back-propagates d(loss)/d(s1); accumulates parameter gradients and
  /// returns d(loss)/d(image).
  Tensor backward(const MsFcnCache& c, const Tensor& grad_s1) {
    if (grad_s1.shape() != Shape{1, 1, c.image_h, c.image_w}) {
      throw ShapeError("grad_s1 shape " + to_string(grad_s1.shape()) + " does not match image");
    }
    const Tensor g_raw = bilinear_resize_backward(grad_s1, c.raw_s1.h(), c.raw_s1.w());
    const Tensor g_z = sigmoid_backward(c.raw_s1, g_raw);
    const Tensor g_stack = conv2d_backward(c.stack_input, g_z, stack_.params, stack_.spec);

    const Shape one{1, 1, g_stack.h(), g_stack.w()};
    auto channel = [&](int ch) {
      Tensor t(one);
      std::copy_n(g_stack.plane(0, ch).begin(), t.size(), t.data().begin());
      return t;
    };

    std::vector<Tensor> g_pool(stages_.size());
    g_pool.back() = backward_chain(top_, c.top, channel(4));
    for (int b = 0; b < 4; ++b) g_pool[b] = backward_chain(branches_[b], c.branches[b], channel(b));

    Tensor g_in;
    for (int s = static_cast<int>(stages_.size()) - 1; s >= 0; --s) {
      const Tensor g_conv = maxpool_backward(g_pool[s], c.pools[s].argmax,
                                             c.stages[s].outputs.back().shape());
      g_in = backward_chain(stages_[s], c.stages[s], g_conv);
      if (s > 0) {
        auto dst = g_pool[s - 1].data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g_in[i];
      }
    }
    return g_in;
  }

  void zero_grad() {
    for_each_layer([](ConvLayer& l) { l.params.zero_grad(); });
  }

 private:
  static Tensor run_chain(const std::vector<ConvLayer>& chain, const Tensor& x,
                          MsFcnCache::Chain& cache) {
    Tensor cur = x;
    cache.inputs.clear();
    cache.outputs.clear();
    for (const auto& l : chain) {
      cache.inputs.push_back(cur);
      cur = conv2d_forward(cur, l.params, l.spec);
      if (l.relu) relu_inplace(cur.data());
      cache.outputs.push_back(cur);
    }
    return cur;
  }

  static Tensor backward_chain(std::vector<ConvLayer>& chain, const MsFcnCache::Chain& cache,
                               Tensor grad) {
    for (int k = static_cast<int>(chain.size()) - 1; k >= 0; --k) {
      auto& l = chain[k];
      if (l.relu) relu_backward_inplace(cache.outputs[k].data(), grad.data());
      grad = conv2d_backward(cache.inputs[k], grad, l.params, l.spec);
    }
    return grad;
  }

  /// Branch b lands on the top map's grid iff its cumulative stride matches.
  void validate_alignment() const {
    std::vector<int> pool_stride;
    int stride = 1;
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      for (const auto& l : stages_[s]) stride *= l.spec.stride_h;
      stride *= pools_[s].stride_h;
      pool_stride.push_back(stride);
    }
    for (const auto& l : top_) stride *= l.spec.stride_h;
    for (int b = 0; b < 4; ++b) {
      int bs = pool_stride[b];
      for (const auto& l : branches_[b]) bs *= l.spec.stride_h;
      if (bs != stride) {
        throw ConfigError("branch " + std::to_string(b + 1) + " output stride " +
                          std::to_string(bs) + " does not match top stride " +
                          std::to_string(stride));
      }
    }
  }

  BackboneConfig cfg_;
  std::vector<std::vector<ConvLayer>> stages_;
  std::vector<PoolSpec> pools_;
  std::vector<ConvLayer> top_;
  std::array<std::vector<ConvLayer>, 4> branches_;
  ConvLayer stack_;
};

/// Cumulative stride of conv5_3 relative to the input.
inline int conv5_3_stride(const MsFcn& net) {
  int s = 1;
  for (std::size_t k = 0; k < net.stages().size(); ++k) {
    for (const auto& l : net.stages()[k]) s *= l.spec.stride_h;
    if (k + 1 < net.stages().size()) s *= net.pools()[k].stride_h;
  }
  return s;
}

}  // namespace dcl

#endif  // DCL_MSFCN_HPP
