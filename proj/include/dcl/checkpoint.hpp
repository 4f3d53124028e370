#ifndef DCL_CHECKPOINT_HPP
#define DCL_CHECKPOINT_HPP

// Checkpoint directory layout:
//   manifest.json        run config, network seed, train state, layer table
//   params/<layer>.w     weights, tensor blob
//   params/<layer>.b     bias as a 1x1x1xB tensor blob
//   velocity/<layer>.w   momentum buffers, same layout (only layers stepped so far)
//   velocity/<layer>.b

#include <cmath>
#include <filesystem>
#include <limits>
#include <string>

#include "dcl/config.hpp"
#include "dcl/tensor.hpp"
#include "dcl/train.hpp"

namespace dcl {

inline constexpr const char* kCheckpointFormat = "dcl-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  RunConfig config;
  Network net;
  OptimizerState opt;
  TrainState state;
};

namespace detail {

inline const char* group_name(LrGroup g) { return g == LrGroup::kBase ? "base" : "new"; }
inline const char* stream_name(Stream s) {
  switch (s) {
    case Stream::kOne: return "s1";
    case Stream::kTwo: return "s2";
    case Stream::kFusion: return "fusion";
  }
  return "?";
}

inline Tensor bias_tensor(const std::vector<double>& b) {
  Tensor t(1, 1, 1, static_cast<int>(b.size()));
  std::copy(b.begin(), b.end(), t.data().begin());
  return t;
}

/// NaN is not representable in JSON; it travels as null.
inline Json nullable(double v) { return std::isnan(v) ? Json(nullptr) : Json(v); }
inline double from_nullable(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline Json layer_entry(const ParamRef& p) {
  const Shape s = p.params->weights.shape();
  Json e = {{"name", p.name},
            {"group", group_name(p.group)},
            {"stream", stream_name(p.stream)},
            {"weight_shape", {s.n, s.c, s.h, s.w}},
            {"bias", p.params->bias.size()}};
  if (p.conv) {
    const ConvSpec& c = *p.conv;
    e["conv"] = {{"kernel", {c.kernel_h, c.kernel_w}},
                 {"stride", {c.stride_h, c.stride_w}},
                 {"pad", {c.pad_h, c.pad_w}},
                 {"dilation", {c.dilation_h, c.dilation_w}}};
  }
  return e;
}

inline Tensor load_blob(const std::filesystem::path& p, Shape expect) {
  Tensor t = load_tensor(p);
  if (t.shape() != expect) {
    throw ConfigError("checkpoint blob " + p.string() + " has shape " + to_string(t.shape()) +
                      ", network expects " + to_string(expect));
  }
  return t;
}

inline std::vector<double> load_bias(const std::filesystem::path& p, std::size_t n) {
  const Tensor t = load_blob(p, Shape{1, 1, 1, static_cast<int>(n)});
  return {t.data().begin(), t.data().end()};
}

}  // namespace detail

/// Writes into a sibling temp directory and swaps it in, so an interrupted
/// save leaves the previous checkpoint intact.
inline void save_checkpoint(const std::filesystem::path& dir, const RunConfig& config,
                            const Network& net, const OptimizerState& opt,
                            const TrainState& state) {
  namespace fs = std::filesystem;
  const fs::path tmp = dir.string() + ".tmp";
  const fs::path old = dir.string() + ".old";
  std::error_code ec;
  fs::remove_all(tmp, ec);
  fs::create_directories(tmp / "params", ec);
  if (!ec) fs::create_directories(tmp / "velocity", ec);
  if (ec) throw IoError("cannot create " + tmp.string() + ": " + ec.message());

  // parameters() hands out mutable pointers; nothing below writes through them.
  auto params = const_cast<Network&>(net).parameters();
  Json layers = Json::array(), velocity = Json::array();
  for (const auto& p : params) {
    layers.push_back(detail::layer_entry(p));
    save_tensor(tmp / "params" / (p.name + ".w"), p.params->weights);
    save_tensor(tmp / "params" / (p.name + ".b"), detail::bias_tensor(p.params->bias));
    const auto it = opt.velocity.find(p.name);
    if (it == opt.velocity.end()) continue;
    velocity.push_back(p.name);
    save_tensor(tmp / "velocity" / (p.name + ".w"), it->second.w);
    save_tensor(tmp / "velocity" / (p.name + ".b"), detail::bias_tensor(it->second.b));
  }
  Json trace = Json::array();
  for (const auto& r : state.trace) {
    trace.push_back({{"epoch", r.epoch},
                     {"phase", std::string(1, r.phase)},
                     {"loss", detail::nullable(r.loss)},
                     {"train_maxf", detail::nullable(r.train_maxf)},
                     {"skipped", r.skipped}});
  }
  Json m;
  m["format"] = kCheckpointFormat;
  m["version"] = kCheckpointVersion;
  m["network_seed"] = net.seed;
  m["config"] = to_json(config);
  m["state"] = {{"epochs_done", state.epochs_done}, {"trace", trace}};
  m["layers"] = layers;
  m["velocity"] = velocity;
  {
    std::ofstream out(tmp / "manifest.json");
    out << m.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + (tmp / "manifest.json").string());
  }

  fs::remove_all(old, ec);
  if (fs::exists(dir)) {
    fs::rename(dir, old, ec);
    if (ec) throw IoError("cannot replace " + dir.string() + ": " + ec.message());
  }
  fs::rename(tmp, dir, ec);
  if (ec) throw IoError("cannot move checkpoint into " + dir.string() + ": " + ec.message());
  fs::remove_all(old, ec);
}

/// Rebuilds the network from the stored config and overwrites every
/// parameter; any disagreement between manifest, blobs and network is a
/// ConfigError.
inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open checkpoint manifest " + manifest_path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const Json m = parse_json_text(ss.str(), manifest_path.string());

  Checkpoint ck;
  try {
    if (m.at("format") != kCheckpointFormat || m.at("version") != kCheckpointVersion) {
      throw ConfigError(manifest_path.string() + " is not a version " +
                        std::to_string(kCheckpointVersion) + " checkpoint");
    }
    ck.config = run_config_from_json(m.at("config"));
    ck.net = Network::build(ck.config.network, m.at("network_seed").get<std::uint64_t>());
    auto params = ck.net.parameters();
    const Json& layers = m.at("layers");
    if (layers.size() != params.size()) {
      throw ConfigError("checkpoint lists " + std::to_string(layers.size()) +
                        " layers, network has " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (layers[i] != detail::layer_entry(p)) {
        throw ConfigError("checkpoint layer " + std::to_string(i) + " " + layers[i].dump() +
                          " does not match network layer " + detail::layer_entry(p).dump());
      }
      p.params->weights = detail::load_blob(dir / "params" / (p.name + ".w"),
                                            p.params->weights.shape());
      p.params->bias = detail::load_bias(dir / "params" / (p.name + ".b"), p.params->bias.size());
    }
    for (const auto& name_json : m.at("velocity")) {
      const std::string name = name_json.get<std::string>();
      const auto it = std::find_if(params.begin(), params.end(),
                                   [&](const ParamRef& p) { return p.name == name; });
      if (it == params.end()) throw ConfigError("velocity for unknown layer " + name);
      Velocity v;
      v.w = detail::load_blob(dir / "velocity" / (name + ".w"), it->params->weights.shape());
      v.b = detail::load_bias(dir / "velocity" / (name + ".b"), it->params->bias.size());
      ck.opt.velocity[name] = std::move(v);
    }
    const Json& st = m.at("state");
    ck.state.epochs_done = st.at("epochs_done").get<int>();
    for (const auto& r : st.at("trace")) {
      EpochRecord e;
      e.epoch = r.at("epoch").get<int>();
      const std::string phase = r.at("phase").get<std::string>();
      if (phase.size() != 1) throw ConfigError("bad phase tag '" + phase + "'");
      e.phase = phase[0];
      e.loss = detail::from_nullable(r.at("loss"));
      e.train_maxf = detail::from_nullable(r.at("train_maxf"));
      e.skipped = r.at("skipped").get<int>();
      ck.state.trace.push_back(e);
    }
  } catch (const Json::exception& e) {
    throw ConfigError(manifest_path.string() + ": " + e.what());
  }
  return ck;
}

}  // namespace dcl

#endif  // DCL_CHECKPOINT_HPP
