#ifndef DCL_CONFIG_HPP
#define DCL_CONFIG_HPP

#include <array>
#include <cstdint>
#include <type_traits>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dcl/densecrf.hpp"
#include "dcl/error.hpp"
#include "dcl/evalkit.hpp"
#include "dcl/parallel.hpp"
#include "dcl/train.hpp"

namespace dcl {

using Json = nlohmann::ordered_json;

struct EvalConfig {
  double beta2 = kDefaultBetaSquared;
};

/// Every tunable of the pipeline in one document.
struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  CrfParams crf;
  EvalConfig eval;
  std::uint64_t seed = 1;
  /// 0 defers to DCL_THREADS, then the hardware concurrency.
  int threads = 0;

  int resolved_threads() const { return threads > 0 ? threads : default_thread_count(); }

  /// Rejects values the modules would reject later, so a bad file fails at load.
  void validate() const {
    network.validate();
    train.validate();
    crf.validate();
    if (!(eval.beta2 > 0)) throw ConfigError("eval.beta2 must be > 0");
    if (threads < 0) throw ConfigError("threads must be >= 0");
  }
};

namespace detail {

inline const char* normalization_name(LossNormalization n) {
  return n == LossNormalization::kSum ? "sum" : "pixel_mean";
}

/// Strict view of one JSON object: typed reads, and unknown keys rejected
/// by finish().
class ConfigReader {
 public:
  ConfigReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  template <class T>
  void read(const std::string& key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    const std::string at = where(key);
    check_kind<T>(*it, at);
    try {
      out = it->template get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(at + ": " + e.what());
    }
  }

  bool has(const std::string& key) const { return j_.contains(key); }
  ConfigReader child(const std::string& key) {
    seen_.insert(key);
    return ConfigReader(j_.at(key), where(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown config key " + where(k));
    }
  }

 private:
  template <class T>
  struct is_array_like : std::false_type {};
  template <class E, class A>
  struct is_array_like<std::vector<E, A>> : std::true_type {};
  template <class E, std::size_t N>
  struct is_array_like<std::array<E, N>> : std::true_type {};

  /// Stricter than nlohmann's conversions, which truncate 3.5 to 3.
  template <class T>
  static void check_kind(const Json& v, const std::string& at) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(at + " must be a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(at + " must be an integer");
      if (std::is_unsigned_v<T> && !v.is_number_unsigned()) {
        throw ConfigError(at + " must be non-negative");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(at + " must be a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(at + " must be a string");
    } else if constexpr (is_array_like<T>::value) {
      if (!v.is_array()) throw ConfigError(at + " must be an array");
      if constexpr (!std::is_same_v<T, std::vector<typename T::value_type>>) {
        if (v.size() != std::tuple_size_v<T>) {
          throw ConfigError(at + " must have " + std::to_string(std::tuple_size_v<T>) +
                            " elements");
        }
      }
      for (std::size_t i = 0; i < v.size(); ++i) {
        check_kind<typename T::value_type>(v[i], at + "[" + std::to_string(i) + "]");
      }
    }
  }

  std::string where(const std::string& key = "") const {
    const std::string base = path_.empty() ? "<root>" : path_;
    if (key.empty()) return base;
    return path_.empty() ? key : path_ + "." + key;
  }

  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline Json to_json(const RunConfig& c) {
  const auto& b = c.network.backbone;
  Json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["network"] = {
      {"stage_widths", b.stage_widths},
      {"convs_per_stage", b.convs_per_stage},
      {"skip_last_two_subsampling", b.skip_last_two_subsampling},
      {"post_pool4_dilation", b.post_pool4_dilation},
      {"top_dilation", b.top_dilation},
      {"top_width", b.top_width},
      {"branch_width", b.branch_width},
      {"branch_strides", b.branch_strides},
      {"width_scale", b.width_scale},
      {"input_mean", b.input_mean},
      {"pool_grid", {c.network.grid.h, c.network.grid.w}},
      {"hidden", c.network.hidden},
      {"superpixel_scales", c.network.scales},
      {"fusion_init", c.network.fusion_init},
      {"slic",
       {{"max_iters", c.network.slic.max_iters},
        {"compactness", c.network.slic.compactness},
        {"min_change_fraction", c.network.slic.min_change_fraction}}},
  };
  const auto& t = c.train;
  j["train"] = {
      {"lr_base", t.sgd.lr_base},
      {"lr_new", t.sgd.lr_new},
      {"momentum", t.sgd.momentum},
      {"weight_decay", t.sgd.weight_decay},
      {"stream2_lr_scale", t.sgd.stream2_lr_scale},
      {"alternations", t.alternations},
      {"epochs_per_phase", t.epochs_per_phase},
      {"pretrain_epochs", t.pretrain_epochs},
      {"input_size", t.input_size},
      {"batch_size", t.batch_size},
      {"epsilon", t.epsilon},
      {"loss_normalization", detail::normalization_name(t.normalization)},
      {"eval_train_maxf", t.eval_train_maxf},
  };
  j["crf"] = {
      {"w1", c.crf.w1},
      {"w2", c.crf.w2},
      {"sigma_alpha", c.crf.sigma_alpha},
      {"sigma_beta", c.crf.sigma_beta},
      {"sigma_gamma", c.crf.sigma_gamma},
      {"iterations", c.crf.iterations},
      {"truncate_sigmas", c.crf.truncate_sigmas},
      {"epsilon", c.crf.epsilon},
  };
  j["eval"] = {{"beta2", c.eval.beta2}};
  return j;
}

/// Missing keys keep their defaults; unknown keys and wrong types throw ConfigError.
inline RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  detail::ConfigReader root(j, "");
  root.read("seed", c.seed);
  root.read("threads", c.threads);
  if (root.has("network")) {
    auto n = root.child("network");
    auto& b = c.network.backbone;
    n.read("stage_widths", b.stage_widths);
    n.read("convs_per_stage", b.convs_per_stage);
    n.read("skip_last_two_subsampling", b.skip_last_two_subsampling);
    n.read("post_pool4_dilation", b.post_pool4_dilation);
    n.read("top_dilation", b.top_dilation);
    n.read("top_width", b.top_width);
    n.read("branch_width", b.branch_width);
    n.read("branch_strides", b.branch_strides);
    n.read("width_scale", b.width_scale);
    n.read("input_mean", b.input_mean);
    std::array<int, 2> grid{c.network.grid.h, c.network.grid.w};
    n.read("pool_grid", grid);
    c.network.grid = {grid[0], grid[1]};
    n.read("hidden", c.network.hidden);
    n.read("superpixel_scales", c.network.scales);
    n.read("fusion_init", c.network.fusion_init);
    if (n.has("slic")) {
      auto s = n.child("slic");
      s.read("max_iters", c.network.slic.max_iters);
      s.read("compactness", c.network.slic.compactness);
      s.read("min_change_fraction", c.network.slic.min_change_fraction);
      s.finish();
    }
    n.finish();
  }
  if (root.has("train")) {
    auto t = root.child("train");
    auto& tc = c.train;
    t.read("lr_base", tc.sgd.lr_base);
    t.read("lr_new", tc.sgd.lr_new);
    t.read("momentum", tc.sgd.momentum);
    t.read("weight_decay", tc.sgd.weight_decay);
    t.read("stream2_lr_scale", tc.sgd.stream2_lr_scale);
    t.read("alternations", tc.alternations);
    t.read("epochs_per_phase", tc.epochs_per_phase);
    t.read("pretrain_epochs", tc.pretrain_epochs);
    t.read("input_size", tc.input_size);
    t.read("batch_size", tc.batch_size);
    t.read("epsilon", tc.epsilon);
    std::string norm = detail::normalization_name(tc.normalization);
    t.read("loss_normalization", norm);
    if (norm == "sum") {
      tc.normalization = LossNormalization::kSum;
    } else if (norm == "pixel_mean") {
      tc.normalization = LossNormalization::kPixelMean;
    } else {
      throw ConfigError("train.loss_normalization must be \"sum\" or \"pixel_mean\", got \"" +
                        norm + "\"");
    }
    t.read("eval_train_maxf", tc.eval_train_maxf);
    t.finish();
  }
  if (root.has("crf")) {
    auto r = root.child("crf");
    r.read("w1", c.crf.w1);
    r.read("w2", c.crf.w2);
    r.read("sigma_alpha", c.crf.sigma_alpha);
    r.read("sigma_beta", c.crf.sigma_beta);
    r.read("sigma_gamma", c.crf.sigma_gamma);
    r.read("iterations", c.crf.iterations);
    r.read("truncate_sigmas", c.crf.truncate_sigmas);
    r.read("epsilon", c.crf.epsilon);
    r.finish();
  }
  if (root.has("eval")) {
    auto e = root.child("eval");
    e.read("beta2", c.eval.beta2);
    e.finish();
  }
  root.finish();
  c.validate();
  return c;
}

inline Json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(origin + ": " + e.what());
  }
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json(parse_json_text(ss.str(), path));
}

inline void save_run_config(const std::string& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config " + path);
  out << to_json(c).dump(2) << '\n';
  if (!out) throw IoError("failed writing config " + path);
}

/// Applies "dotted.key=value"; the value is JSON, or a bare string when it
/// does not parse as JSON. The result is re-validated.
inline RunConfig apply_override(const RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' must look like key.path=value");
  }
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  Json value;
  try {
    value = Json::parse(text);
  } catch (const Json::parse_error&) {
    value = text;
  }
  Json j = to_json(c);
  Json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) {
      throw ConfigError("unknown config key " + key);
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = value;
  return run_config_from_json(j);
}

}  // namespace dcl

#endif  // DCL_CONFIG_HPP
