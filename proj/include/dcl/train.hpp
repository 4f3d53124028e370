#ifndef DCL_TRAIN_HPP
#define DCL_TRAIN_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "dcl/error.hpp"
#include "dcl/evalkit.hpp"
#include "dcl/layers.hpp"
#include "dcl/msfcn.hpp"
#include "dcl/parallel.hpp"
#include "dcl/segpool.hpp"
#include "dcl/superpix.hpp"
#include "dcl/tensor.hpp"

namespace dcl {

// ---------------------------------------------------------------------------
// Fusion and losses

/// S = sigmoid(w1 * s1 + w2 * s2 + b), applied per pixel.
struct FusionLayer {
  LayerParams params = LayerParams::affine(2, 1);

  static FusionLayer make(double w1, double w2, double b) {
    FusionLayer f;
    f.params.weights[0] = w1;
    f.params.weights[1] = w2;
    f.params.bias[0] = b;
    return f;
  }

  Tensor forward(const Tensor& s1, const Tensor& s2) const {
    if (s1.shape() != s2.shape()) {
      throw ShapeError("fuse: s1 " + to_string(s1.shape()) + " vs s2 " + to_string(s2.shape()));
    }
    Tensor s(s1.shape());
    const double w1 = params.weights[0], w2 = params.weights[1], b = params.bias[0];
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = sigmoid(w1 * s1[i] + w2 * s2[i] + b);
    return s;
  }

  struct InputGrads {
    Tensor s1, s2;
  };

  /// Accumulates parameter gradients; `s` is the forward output.
  InputGrads backward(const Tensor& s1, const Tensor& s2, const Tensor& s, const Tensor& grad_s) {
    if (grad_s.shape() != s.shape() || s1.shape() != s.shape() || s2.shape() != s.shape()) {
      throw ShapeError("fusion backward: shape mismatch");
    }
    InputGrads g{Tensor(s.shape()), Tensor(s.shape())};
    const double w1 = params.weights[0], w2 = params.weights[1];
    double gw1 = 0, gw2 = 0, gb = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const double gz = grad_s[i] * s[i] * (1.0 - s[i]);
      gw1 += gz * s1[i];
      gw2 += gz * s2[i];
      gb += gz;
      g.s1[i] = gz * w1;
      g.s2[i] = gz * w2;
    }
    params.weight_grad[0] += gw1;
    params.weight_grad[1] += gw2;
    params.bias_grad[0] += gb;
    return g;
  }
};

inline Tensor fuse(const Tensor& s1, const Tensor& s2, const FusionLayer& layer) {
  return layer.forward(s1, s2);
}

struct LossReport {
  double loss = 0.0;
  double beta = 0.0;  // |I-| / |I|
  std::size_t total = 0, positives = 0, negatives = 0;
  Tensor grad;  // d loss / d S
};

inline constexpr double kProbabilityEpsilon = 1e-8;

/// Class-balanced cross-entropy of map S against binary ground truth G:
/// L = -beta sum G log S - (1 - beta) sum (1 - G) log(1 - S), beta = |I-|/|I|.
/// S is clamped to [eps, 1 - eps]; the gradient is zero where the clamp binds.
inline LossReport balanced_cross_entropy(const Tensor& s, const Tensor& g,
                                         double eps = kProbabilityEpsilon) {
  if (s.shape() != g.shape()) {
    throw ShapeError("loss: map " + to_string(s.shape()) + " vs ground truth " +
                     to_string(g.shape()));
  }
  LossReport r;
  r.total = s.size();
  if (r.total == 0) throw ShapeError("loss on an empty map");
  for (std::size_t i = 0; i < s.size(); ++i) r.positives += g[i] >= 0.5;
  r.negatives = r.total - r.positives;
  r.beta = static_cast<double>(r.negatives) / static_cast<double>(r.total);
  const double wp = r.beta, wn = static_cast<double>(r.positives) / static_cast<double>(r.total);
  r.grad = Tensor(s.shape());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!std::isfinite(s[i])) throw NumericError("loss: non-finite map value");
    const double p = std::clamp(s[i], eps, 1.0 - eps);
    const bool inside = s[i] > eps && s[i] < 1.0 - eps;
    if (g[i] >= 0.5) {
      r.loss -= wp * std::log(p);
      if (inside) r.grad[i] = -wp / p;
    } else {
      r.loss -= wn * std::log(1.0 - p);
      if (inside) r.grad[i] = wn / (1.0 - p);
    }
  }
  return r;
}

struct Stream2Loss {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Mean squared error over segments; gradient 2 (s - l) / N.
inline Stream2Loss stream2_loss(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw InvalidArgument("stream2_loss: " + std::to_string(scores.size()) + " scores vs " +
                          std::to_string(labels.size()) + " labels");
  }
  if (scores.empty()) throw InvalidArgument("stream2_loss: no segments");
  Stream2Loss r;
  const double n = static_cast<double>(scores.size());
  r.grad.resize(scores.size());
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const double d = scores[k] - labels[k];
    r.loss += d * d / n;
    r.grad[k] = 2.0 * d / n;
  }
  return r;
}

/// 1 when strictly more than half of the segment's pixels are salient.
inline std::vector<double> segment_labels(const Segmentation& seg, const Tensor& gt) {
  if (gt.h() != seg.h || gt.w() != seg.w) throw ShapeError("segment_labels: size mismatch");
  std::vector<std::size_t> salient(seg.count, 0);
  for (std::size_t p = 0; p < seg.labels.size(); ++p) salient[seg.labels[p]] += gt[p] >= 0.5;
  std::vector<double> out(seg.count);
  for (int k = 0; k < seg.count; ++k) {
    out[k] = 2 * salient[k] > static_cast<std::size_t>(seg.sizes[k]) ? 1.0 : 0.0;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimiser

enum class Stream { kOne, kTwo, kFusion };

struct SgdConfig {
  double lr_base = 0.001;
  double lr_new = 0.01;  // newly added single-channel layers
  double momentum = 0.9;
  double weight_decay = 0.0005;
  /// Multiplies both rates for the segment regressor.
  double stream2_lr_scale = 1.0;

  double lr(LrGroup g) const { return g == LrGroup::kNewSingleChannel ? lr_new : lr_base; }
  double lr(LrGroup g, Stream s) const {
    return lr(g) * (s == Stream::kTwo ? stream2_lr_scale : 1.0);
  }
};

struct Velocity {
  Tensor w;
  std::vector<double> b;
};

/// v <- mu v - lr (g + lambda w); w <- w + v.
inline void sgd_step(LayerParams& p, Velocity& v, double lr, double momentum, double decay) {
  if (v.w.shape() != p.weights.shape()) v.w = Tensor(p.weights.shape());
  if (v.b.size() != p.bias.size()) v.b.assign(p.bias.size(), 0.0);
  for (std::size_t i = 0; i < p.weights.size(); ++i) {
    v.w[i] = momentum * v.w[i] - lr * (p.weight_grad[i] + decay * p.weights[i]);
    p.weights[i] += v.w[i];
  }
  for (std::size_t i = 0; i < p.bias.size(); ++i) {
    v.b[i] = momentum * v.b[i] - lr * (p.bias_grad[i] + decay * p.bias[i]);
    p.bias[i] += v.b[i];
  }
}

// ---------------------------------------------------------------------------
// Two-stream network

struct NetworkConfig {
  BackboneConfig backbone;
  PoolGrid grid;
  int hidden = 300;
  std::vector<int> scales{200, 150, 50};
  SlicParams slic;
  std::array<double, 3> fusion_init{1.0, 1.0, -1.0};  // w1, w2, b

  void validate() const {
    backbone.validate();
    if (scales.empty()) throw ConfigError("at least one superpixel scale is required");
    for (int k : scales) {
      if (k < 1) throw ConfigError("superpixel scales must be >= 1");
    }
    if (grid.h < 1 || grid.w < 1) throw ConfigError("pooling grid must be >= 1x1");
    if (hidden < 1) throw ConfigError("regressor hidden width must be >= 1");
    if (slic.max_iters < 1) throw ConfigError("slic.max_iters must be >= 1");
    if (!(slic.compactness >= 0)) throw ConfigError("slic.compactness must be >= 0");
    if (!(slic.min_change_fraction >= 0 && slic.min_change_fraction < 1)) {
      throw ConfigError("slic.min_change_fraction must lie in [0, 1)");
    }
  }
};

struct ParamRef {
  std::string name;
  LayerParams* params;
  LrGroup group;
  Stream stream;
  const ConvSpec* conv = nullptr;  // set for convolution layers
};

struct Network {
  NetworkConfig config;
  std::uint64_t seed = 0;
  MsFcn msfcn;
  SegmentRegressor regressor;
  FusionLayer fusion;

  static Network build(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Network n;
    n.config = cfg;
    n.seed = seed;
    n.msfcn = MsFcn::build(cfg.backbone, seed);
    const auto dim = segment_feature_length(n.msfcn.conv5_3_channels(), cfg.grid);
    n.regressor = SegmentRegressor::build(static_cast<int>(dim), cfg.hidden, seed + 1);
    n.fusion = FusionLayer::make(cfg.fusion_init[0], cfg.fusion_init[1], cfg.fusion_init[2]);
    return n;
  }

  /// Every trainable parameter block, in a fixed order.
  std::vector<ParamRef> parameters() {
    std::vector<ParamRef> out;
    msfcn.for_each_layer([&](ConvLayer& l) {
      out.push_back({l.name, &l.params, l.group, Stream::kOne, &l.spec});
    });
    out.push_back({"seg_fc1", &regressor.fc1(), LrGroup::kBase, Stream::kTwo});
    out.push_back({"seg_fc2", &regressor.fc2(), LrGroup::kBase, Stream::kTwo});
    out.push_back({"seg_out", &regressor.out(), LrGroup::kNewSingleChannel, Stream::kTwo});
    out.push_back({"fusion", &fusion.params, LrGroup::kNewSingleChannel, Stream::kFusion});
    return out;
  }

  void zero_grad() {
    for (auto& p : parameters()) p.params->zero_grad();
  }
};

/// Superpixel decompositions of `image` at every configured scale.
inline std::vector<Segmentation> segment_scales(const Tensor& image, const NetworkConfig& cfg) {
  const LabImage lab = rgb_to_cielab(image);
  const int pixels = image.h() * image.w();
  std::vector<Segmentation> out;
  for (int k : cfg.scales) out.push_back(slic_geodesic(lab, std::min(k, pixels), cfg.slic));
  return out;
}

/// Regressor scores for every segment of every scale; one conv5_3 serves all.
inline std::vector<std::vector<double>> score_segments(const Network& net, const Tensor& conv5_3,
                                                       const std::vector<Segmentation>& segs,
                                                       const FeatureGeometry& geom) {
  std::vector<std::vector<double>> scores;
  for (const auto& seg : segs) {
    const auto feats = segment_features(conv5_3, seg, geom, net.config.grid);
    std::vector<double> s(feats.size());
    for (std::size_t k = 0; k < feats.size(); ++k) s[k] = net.regressor.forward(feats[k]);
    scores.push_back(std::move(s));
  }
  return scores;
}

struct Prediction {
  Tensor s1, s2, s;
};

inline Prediction predict(const Network& net, const Tensor& image,
                          const std::vector<Segmentation>& segs) {
  const MsFcnOutput out = net.msfcn.forward(image);
  const FeatureGeometry geom = feature_geometry(net.msfcn, image.h(), image.w());
  Prediction p;
  p.s1 = out.s1;
  p.s2 = render_s2(score_segments(net, out.conv5_3, segs, geom), segs);
  p.s = net.fusion.forward(p.s1, p.s2);
  return p;
}

inline Prediction predict(const Network& net, const Tensor& image) {
  return predict(net, image, segment_scales(image, net.config));
}

// ---------------------------------------------------------------------------
// Alternating training

enum class LossNormalization {
  kSum,        // the loss exactly as summed over pixels / segments
  kPixelMean,  // cross-entropy divided by the pixel count
};

struct TrainConfig {
  SgdConfig sgd;
  int alternations = 8;
  int epochs_per_phase = 1;
  int pretrain_epochs = 2;
  /// Training images are resized to input_size x input_size; 0 keeps native size.
  int input_size = 321;
  int batch_size = 1;
  double epsilon = kProbabilityEpsilon;
  LossNormalization normalization = LossNormalization::kPixelMean;
  /// Evaluate train-set maxF after every epoch (one extra forward per image).
  bool eval_train_maxf = true;

  void validate() const {
    if (!(sgd.lr_base > 0 && sgd.lr_new > 0 && sgd.stream2_lr_scale > 0)) {
      throw ConfigError("learning rates must be > 0");
    }
    if (!(sgd.momentum >= 0 && sgd.momentum < 1)) throw ConfigError("momentum must lie in [0, 1)");
    if (sgd.weight_decay < 0) throw ConfigError("weight decay must be >= 0");
    if (alternations < 0) throw ConfigError("alternations must be >= 0");
    if (epochs_per_phase < 1) throw ConfigError("epochs_per_phase must be >= 1");
    if (pretrain_epochs < 0) throw ConfigError("pretrain_epochs must be >= 0");
    if (input_size < 0 || (input_size > 0 && input_size < MsFcn::kMinImageSide)) {
      throw ConfigError("input_size must be 0 or >= " + std::to_string(MsFcn::kMinImageSide));
    }
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(epsilon > 0 && epsilon < 0.5)) throw ConfigError("epsilon must lie in (0, 0.5)");
  }
};

/// 'P' stream-2 pretraining, 'A' stream 1 + fusion, 'B' stream 2.
inline std::vector<char> training_schedule(const TrainConfig& cfg) {
  std::vector<char> s;
  if (cfg.alternations == 0) return s;
  s.insert(s.end(), cfg.pretrain_epochs, 'P');
  for (int a = 0; a < cfg.alternations; ++a) {
    s.insert(s.end(), cfg.epochs_per_phase, 'A');
    s.insert(s.end(), cfg.epochs_per_phase, 'B');
  }
  return s;
}

struct TrainSample {
  Tensor image;  // 1x3xHxW
  Tensor gt;     // 1x1xHxW binary
  std::vector<Segmentation> segs;
  std::vector<std::vector<double>> seg_labels;
  /// All-background or all-salient: zero cross-entropy gradient.
  bool degenerate = false;
};

inline TrainSample prepare_sample(Tensor image, Tensor gt, const NetworkConfig& ncfg,
                                  const TrainConfig& tcfg) {
  if (image.n() != 1 || image.c() != 3) throw ShapeError("training image must be 1x3xHxW");
  if (gt.n() != 1 || gt.c() != 1 || gt.h() != image.h() || gt.w() != image.w()) {
    throw ShapeError("ground truth " + to_string(gt.shape()) + " does not match image " +
                     to_string(image.shape()));
  }
  if (tcfg.input_size > 0 && (image.h() != tcfg.input_size || image.w() != tcfg.input_size)) {
    image = bilinear_resize(image, tcfg.input_size, tcfg.input_size);
    gt = bilinear_resize(gt, tcfg.input_size, tcfg.input_size);
  }
  for (double& v : gt.data()) v = v >= 0.5 ? 1.0 : 0.0;
  TrainSample s;
  s.image = std::move(image);
  s.gt = std::move(gt);
  s.segs = segment_scales(s.image, ncfg);
  for (const auto& seg : s.segs) s.seg_labels.push_back(segment_labels(seg, s.gt));
  std::size_t pos = 0;
  for (double v : s.gt.data()) pos += v >= 0.5;
  s.degenerate = pos == 0 || pos == s.gt.size();
  return s;
}

inline std::vector<TrainSample> prepare_samples(const std::vector<Tensor>& images,
                                                const std::vector<Tensor>& gts,
                                                const NetworkConfig& ncfg,
                                                const TrainConfig& tcfg, int threads = 1) {
  if (images.size() != gts.size()) throw InvalidArgument("image/ground-truth count mismatch");
  std::vector<TrainSample> out(images.size());
  parallel_for(images.size(), threads,
               [&](std::size_t i) { out[i] = prepare_sample(images[i], gts[i], ncfg, tcfg); });
  return out;
}

struct EpochRecord {
  int epoch = 0;  // 1-based position in the schedule
  char phase = 'A';
  double loss = 0.0;  // mean over contributing images
  double train_maxf = std::numeric_limits<double>::quiet_NaN();
  int skipped = 0;
};

struct TrainState {
  int epochs_done = 0;
  std::vector<EpochRecord> trace;
};

struct OptimizerState {
  std::map<std::string, Velocity> velocity;
};

using EpochCallback =
    std::function<void(const Network&, const OptimizerState&, const TrainState&)>;

namespace detail {

inline void step_stream(Network& net, OptimizerState& opt, const SgdConfig& sgd,
                        std::initializer_list<Stream> streams, int batch_images) {
  const double scale = 1.0 / batch_images;
  for (auto& p : net.parameters()) {
    if (std::find(streams.begin(), streams.end(), p.stream) == streams.end()) continue;
    if (scale != 1.0) {
      for (double& g : p.params->weight_grad.data()) g *= scale;
      for (double& g : p.params->bias_grad) g *= scale;
    }
    sgd_step(*p.params, opt.velocity[p.name], sgd.lr(p.group, p.stream), sgd.momentum,
             sgd.weight_decay);
    p.params->zero_grad();
  }
}

inline double train_maxf(const Network& net, const std::vector<TrainSample>& data) {
  std::vector<Tensor> maps, gts;
  for (const auto& s : data) {
    maps.push_back(predict(net, s.image, s.segs).s);
    gts.push_back(s.gt);
  }
  try {
    return max_f_measure(maps, gts);
  } catch (const InvalidArgument&) {
    return std::numeric_limits<double>::quiet_NaN();
  }
}

inline void require_finite_loss(double loss, int epoch, char phase, std::size_t image) {
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite loss in epoch " + std::to_string(epoch) + " phase " +
                       std::string(1, phase) + " at image " + std::to_string(image));
  }
}

/// Stream 1 + fusion against the balanced cross-entropy; S2 enters as a constant.
inline EpochRecord epoch_stream1(Network& net, OptimizerState& opt,
                                 const std::vector<TrainSample>& data, const TrainConfig& cfg,
                                 int epoch, std::ostream* log) {
  EpochRecord rec{epoch, 'A', 0.0};
  int in_batch = 0, used = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const TrainSample& s = data[i];
    if (s.degenerate) {
      ++rec.skipped;
      if (log) *log << "warning: epoch " << epoch << " skips image " << i
                    << " (ground truth has a single class)\n";
      continue;
    }
    MsFcnCache cache;
    const MsFcnOutput out = net.msfcn.forward(s.image, &cache);
    const FeatureGeometry geom = feature_geometry(net.msfcn, s.image.h(), s.image.w());
    const Tensor s2 = render_s2(score_segments(net, out.conv5_3, s.segs, geom), s.segs);
    const Tensor fused = net.fusion.forward(out.s1, s2);
    LossReport loss = balanced_cross_entropy(fused, s.gt, cfg.epsilon);
    double value = loss.loss;
    if (cfg.normalization == LossNormalization::kPixelMean) {
      const double inv = 1.0 / static_cast<double>(loss.total);
      value *= inv;
      for (double& g : loss.grad.data()) g *= inv;
    }
    require_finite_loss(value, epoch, 'A', i);
    const auto g = net.fusion.backward(out.s1, s2, fused, loss.grad);
    net.msfcn.backward(cache, g.s1);
    rec.loss += value;
    ++used;
    if (++in_batch == cfg.batch_size) {
      step_stream(net, opt, cfg.sgd, {Stream::kOne, Stream::kFusion}, in_batch);
      in_batch = 0;
    }
  }
  if (in_batch > 0) step_stream(net, opt, cfg.sgd, {Stream::kOne, Stream::kFusion}, in_batch);
  if (used > 0) rec.loss /= used;
  return rec;
}

/// Segment regressor against the squared error on segment labels.
inline EpochRecord epoch_stream2(Network& net, OptimizerState& opt,
                                 const std::vector<TrainSample>& data, const TrainConfig& cfg,
                                 int epoch, char phase) {
  EpochRecord rec{epoch, phase, 0.0};
  int in_batch = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const TrainSample& s = data[i];
    const MsFcnOutput out = net.msfcn.forward(s.image);
    const FeatureGeometry geom = feature_geometry(net.msfcn, s.image.h(), s.image.w());
    std::vector<RegressorCache> caches;
    std::vector<double> scores, labels;
    for (std::size_t k = 0; k < s.segs.size(); ++k) {
      const auto feats = segment_features(out.conv5_3, s.segs[k], geom, net.config.grid);
      for (std::size_t j = 0; j < feats.size(); ++j) {
        caches.emplace_back();
        scores.push_back(net.regressor.forward(feats[j], &caches.back()));
        labels.push_back(s.seg_labels[k][j]);
      }
    }
    const Stream2Loss loss = stream2_loss(scores, labels);
    require_finite_loss(loss.loss, epoch, phase, i);
    for (std::size_t k = 0; k < caches.size(); ++k) net.regressor.backward(caches[k], loss.grad[k]);
    rec.loss += loss.loss;
    if (++in_batch == cfg.batch_size) {
      step_stream(net, opt, cfg.sgd, {Stream::kTwo}, in_batch);
      in_batch = 0;
    }
  }
  if (in_batch > 0) step_stream(net, opt, cfg.sgd, {Stream::kTwo}, in_batch);
  if (!data.empty()) rec.loss /= static_cast<double>(data.size());
  return rec;
}

}  // namespace detail

/// Runs the remaining epochs of the schedule (from state.epochs_done),
/// stopping early once `until_epoch` epochs are done when it is >= 0.
/// Phase A never touches stream-2 parameters; phases P and B touch only
/// stream 2. `on_epoch` fires after every epoch, e.g. to checkpoint.
inline void alternate_train(Network& net, const std::vector<TrainSample>& data,
                            const TrainConfig& cfg, TrainState& state, OptimizerState& opt,
                            const EpochCallback& on_epoch = {}, std::ostream* log = nullptr,
                            int until_epoch = -1) {
  cfg.validate();
  if (data.empty()) throw InvalidArgument("training set is empty");
  const auto schedule = training_schedule(cfg);
  if (state.epochs_done < 0 || state.epochs_done > static_cast<int>(schedule.size())) {
    throw ConfigError("train state epoch " + std::to_string(state.epochs_done) +
                      " is outside the schedule of " + std::to_string(schedule.size()));
  }
  net.zero_grad();
  const int end = until_epoch < 0 ? static_cast<int>(schedule.size())
                                  : std::min(until_epoch, static_cast<int>(schedule.size()));
  for (int e = state.epochs_done; e < end; ++e) {
    const char phase = schedule[e];
    EpochRecord rec = phase == 'A' ? detail::epoch_stream1(net, opt, data, cfg, e + 1, log)
                                   : detail::epoch_stream2(net, opt, data, cfg, e + 1, phase);
    // A finite loss can precede a diverging step; never report such weights as done.
    for (auto& p : net.parameters()) {
      const auto& w = p.params->weights.data();
      const auto& b = p.params->bias;
      const auto bad = [](double v) { return !std::isfinite(v); };
      if (std::any_of(w.begin(), w.end(), bad) || std::any_of(b.begin(), b.end(), bad)) {
        throw NumericError("non-finite parameters in " + p.name + " after epoch " +
                           std::to_string(e + 1) + " phase " + std::string(1, phase));
      }
    }
    if (cfg.eval_train_maxf) rec.train_maxf = detail::train_maxf(net, data);
    state.trace.push_back(rec);
    state.epochs_done = e + 1;
    if (log) {
      *log << "epoch " << rec.epoch << " phase " << rec.phase << " loss " << rec.loss
           << " train_maxf " << rec.train_maxf << '\n';
    }
    if (on_epoch) on_epoch(net, opt, state);
  }
}

/// Convenience overload starting from scratch.
inline TrainState alternate_train(Network& net, const std::vector<TrainSample>& data,
                                  const TrainConfig& cfg, std::ostream* log = nullptr) {
  TrainState state;
  OptimizerState opt;
  alternate_train(net, data, cfg, state, opt, {}, log);
  return state;
}

/// Plain-text loss log: epoch, phase, loss, train maxF.
inline void write_loss_log(std::ostream& os, const TrainState& state) {
  const auto old = os.precision(17);
  os << "epoch,phase,loss,train_maxf\n";
  for (const auto& r : state.trace) {
    os << r.epoch << ',' << r.phase << ',' << r.loss << ',' << r.train_maxf << '\n';
  }
  os.precision(old);
}

}  // namespace dcl

#endif  // DCL_TRAIN_HPP
