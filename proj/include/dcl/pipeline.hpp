#ifndef DCL_PIPELINE_HPP
#define DCL_PIPELINE_HPP

// File-level operations behind the `dcl` command-line tool. Each cmd_*
// function reads inputs from disk, writes artifacts to an output directory
// and reports progress and warnings on `log`.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "dcl/checkpoint.hpp"
#include "dcl/config.hpp"
#include "dcl/densecrf.hpp"
#include "dcl/evalkit.hpp"
#include "dcl/grad_suite.hpp"
#include "dcl/image_io.hpp"
#include "dcl/parallel.hpp"
#include "dcl/superpix.hpp"
#include "dcl/synth.hpp"
#include "dcl/train.hpp"

namespace dcl {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Dataset manifest

struct DatasetEntry {
  std::string split;  // train, val or test
  fs::path image;
  fs::path gt;
};

/// JSON document {"items": [{"split", "image", "gt"}, ...]}; relative paths
/// resolve against the manifest's directory.
struct DatasetManifest {
  std::vector<DatasetEntry> items;

  std::vector<DatasetEntry> split(const std::string& name) const {
    std::vector<DatasetEntry> out;
    for (const auto& e : items) {
      if (e.split == name) out.push_back(e);
    }
    return out;
  }
};

inline DatasetManifest load_dataset_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const Json j = parse_json_text(ss.str(), path.string());
  DatasetManifest m;
  const fs::path base = path.parent_path();
  try {
    for (const auto& it : j.at("items")) {
      DatasetEntry e;
      e.split = it.at("split").get<std::string>();
      if (e.split != "train" && e.split != "val" && e.split != "test") {
        throw ConfigError(path.string() + ": split must be train, val or test, got '" + e.split +
                          "'");
      }
      e.image = base / it.at("image").get<std::string>();
      e.gt = base / it.at("gt").get<std::string>();
      for (const auto& f : {e.image, e.gt}) {
        if (!fs::is_regular_file(f)) throw IoError(path.string() + ": missing file " + f.string());
      }
      m.items.push_back(std::move(e));
    }
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return m;
}

/// Paths are written relative to the manifest's directory when possible.
inline void save_dataset_manifest(const fs::path& path, const DatasetManifest& m) {
  const fs::path base = path.parent_path();
  Json items = Json::array();
  for (const auto& e : m.items) {
    items.push_back({{"split", e.split},
                     {"image", e.image.lexically_relative(base).generic_string()},
                     {"gt", e.gt.lexically_relative(base).generic_string()}});
  }
  std::ofstream out(path);
  out << Json{{"items", items}}.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

struct ImageSet {
  std::vector<std::string> names;
  std::vector<Tensor> images, gts;
};

inline ImageSet load_split(const DatasetManifest& m, const std::string& split, int threads) {
  const auto entries = m.split(split);
  ImageSet s;
  s.images.resize(entries.size());
  s.gts.resize(entries.size());
  parallel_for(entries.size(), threads, [&](std::size_t i) {
    s.images[i] = load_rgb(entries[i].image);
    s.gts[i] = load_ground_truth(entries[i].gt);
    if (s.images[i].h() != s.gts[i].h() || s.images[i].w() != s.gts[i].w()) {
      throw ShapeError("ground truth " + entries[i].gt.string() + " is " +
                       to_string(s.gts[i].shape()) + " but image " + entries[i].image.string() +
                       " is " + to_string(s.images[i].shape()));
    }
  });
  for (const auto& e : entries) s.names.push_back(e.image.stem().string());
  return s;
}

// ---------------------------------------------------------------------------
// Shared file helpers

namespace detail {

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

inline bool is_image_file(const fs::path& p) {
  const std::string e = lower_ext(p);
  return e == ".png" || e == ".pgm" || e == ".ppm" || e == ".pnm";
}

/// Saliency maps are 8-bit images or tensor blobs (.bin, full precision).
inline bool is_map_file(const fs::path& p) { return is_image_file(p) || lower_ext(p) == ".bin"; }

inline Tensor load_map(const fs::path& p) {
  if (lower_ext(p) != ".bin") return load_gray(p);
  Tensor t = load_tensor(p);
  if (t.n() != 1 || t.c() != 1) throw ShapeError(p.string() + ": map blob must be 1x1xHxW");
  return t;
}

/// stem -> path for every matching file directly inside `dir`. When a stem
/// appears twice, the blob wins over the image.
template <class Pred>
std::map<std::string, fs::path> files_by_stem(const fs::path& dir, Pred keep) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::map<std::string, fs::path> out;
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && keep(e.path())) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    const auto it = out.find(stem);
    if (it == out.end() || lower_ext(f) == ".bin") out[stem] = f;
  }
  return out;
}

inline void write_map(const fs::path& dir, const std::string& stem, const Tensor& map,
                      bool blob) {
  ensure_dir(dir);
  save_gray8(dir / (stem + ".png"), map);
  if (blob) save_tensor(dir / (stem + ".bin"), map);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// synth

/// Writes `count` synthetic scenes as PNG pairs plus a manifest with every
/// item in the train split. Returns the manifest path.
inline fs::path cmd_synth(const fs::path& out_dir, int count, int size, std::uint64_t seed) {
  if (count < 1) throw InvalidArgument("synth needs count >= 1");
  detail::ensure_dir(out_dir / "images");
  detail::ensure_dir(out_dir / "gt");
  DatasetManifest m;
  const auto corpus = synthetic_corpus(count, size, size, seed);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::ostringstream name;
    name << "synth_" << std::setw(4) << std::setfill('0') << i << ".png";
    const fs::path image = out_dir / "images" / name.str();
    const fs::path gt = out_dir / "gt" / name.str();
    save_rgb8(image, corpus[i].image);
    save_gray8(gt, corpus[i].gt);
    m.items.push_back({"train", image, gt});
  }
  const fs::path manifest = out_dir / "dataset.json";
  save_dataset_manifest(manifest, m);
  return manifest;
}

// ---------------------------------------------------------------------------
// superpixels

struct SuperpixelResult {
  std::string name;
  int requested = 0;
  int segments = 0;
};

/// Per image: <stem>_labels.png (16-bit ids), <stem>_labels.json sidecar and
/// <stem>_overlay.png with segment boundaries painted red.
inline std::vector<SuperpixelResult> cmd_superpixels(const std::vector<fs::path>& images, int k,
                                                     const SlicParams& params,
                                                     const fs::path& out_dir, int threads) {
  if (k < 1) throw InvalidArgument("superpixel count must be >= 1");
  detail::ensure_dir(out_dir);
  std::vector<SuperpixelResult> results(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) {
    const Tensor image = load_rgb(images[i]);
    const int pixels = image.h() * image.w();
    const Segmentation seg = slic_geodesic(rgb_to_cielab(image), std::min(k, pixels), params);
    const std::string stem = images[i].stem().string();
    save_labels16(out_dir / (stem + "_labels.png"), seg.h, seg.w, seg.labels);

    const Json side = {{"image", images[i].filename().string()},
                       {"height", seg.h},
                       {"width", seg.w},
                       {"requested", k},
                       {"segments", seg.count},
                       {"compactness", params.compactness},
                       {"max_iters", params.max_iters},
                       {"min_change_fraction", params.min_change_fraction}};
    std::ofstream sc(out_dir / (stem + "_labels.json"));
    sc << side.dump(2) << '\n';
    if (!sc) throw IoError("failed writing sidecar for " + images[i].string());

    Tensor overlay = image;
    const auto edges = segment_boundaries(seg);
    for (std::size_t p = 0; p < edges.size(); ++p) {
      if (!edges[p]) continue;
      overlay.plane(0, 0)[p] = 1.0;
      overlay.plane(0, 1)[p] = 0.0;
      overlay.plane(0, 2)[p] = 0.0;
    }
    save_rgb8(out_dir / (stem + "_overlay.png"), overlay);
    results[i] = {stem, k, seg.count};
  });
  return results;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  bool resume = false;
  /// Save the checkpoint after every n-th epoch (and always after the last).
  int checkpoint_every = 1;
  /// Stop once this many schedule epochs are done; < 0 runs to the end.
  int stop_after = -1;
};

inline fs::path checkpoint_dir(const fs::path& out_dir) { return out_dir / "checkpoint"; }

/// Trains on the manifest's train split. out_dir/checkpoint always holds the
/// latest completed epoch (the initial weights before the first), so a
/// failure mid-run leaves the last good state on disk.
inline TrainState cmd_train(const fs::path& manifest, const RunConfig& config,
                            const fs::path& out_dir, const TrainOptions& opt, std::ostream& log) {
  config.validate();
  if (opt.checkpoint_every < 1) throw InvalidArgument("checkpoint interval must be >= 1");
  const int threads = config.resolved_threads();
  const ImageSet set = load_split(load_dataset_manifest(manifest), "train", threads);
  if (set.images.empty()) throw InvalidArgument(manifest.string() + " has no train items");
  detail::ensure_dir(out_dir);
  const fs::path ck_dir = checkpoint_dir(out_dir);

  Network net;
  OptimizerState optim;
  TrainState state;
  if (opt.resume) {
    Checkpoint ck = load_checkpoint(ck_dir);
    Json a = to_json(ck.config), b = to_json(config);
    a.erase("threads");
    b.erase("threads");
    if (a != b) throw ConfigError("run config differs from the checkpoint being resumed");
    net = std::move(ck.net);
    optim = std::move(ck.opt);
    state = std::move(ck.state);
    log << "resuming after epoch " << state.epochs_done << '\n';
  } else {
    net = Network::build(config.network, config.seed);
  }
  save_run_config(out_dir / "config.json", config);

  const auto write_log = [&](const TrainState& s) {
    std::ofstream out(out_dir / "loss_log.csv");
    write_loss_log(out, s);
    if (!out) throw IoError("failed writing loss log in " + out_dir.string());
  };
  if (!opt.resume) {
    save_checkpoint(ck_dir, config, net, optim, state);
    write_log(state);
  }
  const auto samples = prepare_samples(set.images, set.gts, config.network, config.train, threads);
  const int total = static_cast<int>(training_schedule(config.train).size());
  alternate_train(
      net, samples, config.train, state, optim,
      [&](const Network& n, const OptimizerState& o, const TrainState& s) {
        write_log(s);
        if (s.epochs_done % opt.checkpoint_every == 0 || s.epochs_done == total ||
            s.epochs_done == opt.stop_after) {
          save_checkpoint(ck_dir, config, n, o, s);
        }
      },
      &log, opt.stop_after);
  return state;
}

// ---------------------------------------------------------------------------
// predict / refine

struct PredictOptions {
  bool crf = false;
  bool debug = false;  // also write S1 and S2
  bool blobs = false;  // full-precision .bin next to each PNG
  CrfParams crf_params;
  int threads = 1;
};

struct PredictedMaps {
  Tensor s, s1, s2, s_crf;
};

/// Maps at the image's own resolution. When the network was trained at a
/// fixed input size the image is resized to it and the maps resized back.
inline PredictedMaps predict_maps(const Network& net, const TrainConfig& tcfg,
                                  const Tensor& image, const PredictOptions& opt) {
  const int side = tcfg.input_size;
  const bool resize = side > 0 && (image.h() != side || image.w() != side);
  const Tensor input = resize ? bilinear_resize(image, side, side) : image;
  Prediction p = predict(net, input);
  if (resize) {
    p.s1 = bilinear_resize(p.s1, image.h(), image.w());
    p.s2 = bilinear_resize(p.s2, image.h(), image.w());
    p.s = bilinear_resize(p.s, image.h(), image.w());
  }
  PredictedMaps m{p.s, p.s1, p.s2, {}};
  if (opt.crf) m.s_crf = mean_field_infer(m.s, image, opt.crf_params);
  return m;
}

/// Writes out_dir/<stem>.png (S), and crf/, s1/, s2/ subdirectories as
/// requested.
inline void cmd_predict(const fs::path& checkpoint, const std::vector<fs::path>& images,
                        const fs::path& out_dir, const PredictOptions& opt, std::ostream& log) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  detail::ensure_dir(out_dir);
  PredictOptions per = opt;
  per.crf_params.threads = images.size() > 1 ? 1 : std::max(1, opt.threads);
  parallel_for(images.size(), opt.threads, [&](std::size_t i) {
    const Tensor image = load_rgb(images[i]);
    const PredictedMaps m = predict_maps(ck.net, ck.config.train, image, per);
    const std::string stem = images[i].stem().string();
    detail::write_map(out_dir, stem, m.s, opt.blobs);
    if (opt.crf) detail::write_map(out_dir / "crf", stem, m.s_crf, opt.blobs);
    if (opt.debug) {
      detail::write_map(out_dir / "s1", stem, m.s1, opt.blobs);
      detail::write_map(out_dir / "s2", stem, m.s2, opt.blobs);
    }
  });
  log << "predicted " << images.size() << " image(s) into " << out_dir.string() << '\n';
}

/// CRF refinement of existing maps: every image needs maps_dir/<stem>.{bin,png,...}.
inline void cmd_refine(const std::vector<fs::path>& images, const fs::path& maps_dir,
                       const fs::path& out_dir, const CrfParams& params, bool blobs, int threads,
                       std::ostream& log) {
  const auto maps = detail::files_by_stem(maps_dir, detail::is_map_file);
  for (const auto& im : images) {
    if (!maps.count(im.stem().string())) {
      throw IoError("no saliency map for " + im.string() + " in " + maps_dir.string());
    }
  }
  detail::ensure_dir(out_dir);
  CrfParams p = params;
  p.threads = images.size() > 1 ? 1 : std::max(1, threads);
  parallel_for(images.size(), threads, [&](std::size_t i) {
    const std::string stem = images[i].stem().string();
    const Tensor refined = mean_field_infer(detail::load_map(maps.at(stem)), load_rgb(images[i]), p);
    detail::write_map(out_dir, stem, refined, blobs);
  });
  log << "refined " << images.size() << " map(s) into " << out_dir.string() << '\n';
}

// ---------------------------------------------------------------------------
// evaluate

struct EvaluateResult {
  EvalReport report;
  std::vector<std::string> names;
  std::vector<std::string> unmatched;
};

/// Pairs maps and ground truths by file stem. Unpaired or mis-sized files
/// are reported on `log` and skipped. Writes pr_curve.csv, per_image.csv and
/// summary.csv (one row per metric, one column per method).
inline EvaluateResult cmd_evaluate(const fs::path& maps_dir, const fs::path& gts_dir,
                                   const fs::path& out_dir, double beta2,
                                   const std::string& dataset, const std::string& method,
                                   int threads, std::ostream& log) {
  const auto maps = detail::files_by_stem(maps_dir, detail::is_map_file);
  const auto gts = detail::files_by_stem(gts_dir, detail::is_image_file);
  EvaluateResult r;
  std::vector<std::pair<fs::path, fs::path>> pairs;
  for (const auto& [stem, path] : maps) {
    if (gts.count(stem)) {
      r.names.push_back(stem);
      pairs.emplace_back(path, gts.at(stem));
    } else {
      r.unmatched.push_back(path.string());
    }
  }
  for (const auto& [stem, path] : gts) {
    if (!maps.count(stem)) r.unmatched.push_back(path.string());
  }
  std::vector<Tensor> map_t(pairs.size()), gt_t(pairs.size());
  parallel_for(pairs.size(), threads, [&](std::size_t i) {
    map_t[i] = detail::load_map(pairs[i].first);
    gt_t[i] = load_ground_truth(pairs[i].second);
  });
  std::vector<Tensor> used_maps, used_gts;
  std::vector<std::string> used_names;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (map_t[i].h() != gt_t[i].h() || map_t[i].w() != gt_t[i].w()) {
      r.unmatched.push_back(pairs[i].first.string() + " (size " + to_string(map_t[i].shape()) +
                            " vs ground truth " + to_string(gt_t[i].shape()) + ")");
      continue;
    }
    used_maps.push_back(std::move(map_t[i]));
    used_gts.push_back(std::move(gt_t[i]));
    used_names.push_back(r.names[i]);
  }
  r.names = std::move(used_names);
  for (const auto& u : r.unmatched) log << "warning: skipping unmatched " << u << '\n';
  if (used_maps.empty()) throw InvalidArgument("no map/ground-truth pairs to evaluate");

  r.report = evaluate(used_maps, used_gts, beta2);
  detail::ensure_dir(out_dir);
  {
    std::ofstream out(out_dir / "pr_curve.csv");
    write_eval_csv(out, r.report, beta2);
    if (!out) throw IoError("failed writing pr_curve.csv");
  }
  {
    std::ofstream out(out_dir / "per_image.csv");
    out.precision(10);
    out << "image,mae,adaptive_precision,adaptive_recall,adaptive_f\n";
    for (std::size_t i = 0; i < r.names.size(); ++i) {
      out << r.names[i] << ',' << r.report.per_image_mae[i];
      if (const auto& a = r.report.per_image_adaptive[i]) {
        out << ',' << a->precision << ',' << a->recall << ',' << a->f << '\n';
      } else {
        out << ",,,\n";  // empty ground truth
      }
    }
    if (!out) throw IoError("failed writing per_image.csv");
  }
  std::ostringstream table;
  table << std::fixed << std::setprecision(3);
  table << "dataset,metric," << method << '\n';
  table << dataset << ",maxF," << r.report.max_f << '\n';
  table << dataset << ",MAE," << r.report.mae << '\n';
  {
    std::ofstream out(out_dir / "summary.csv");
    out << table.str();
    if (!out) throw IoError("failed writing summary.csv");
  }
  log << table.str();
  return r;
}

// ---------------------------------------------------------------------------
// gradcheck

/// Runs the finite-difference suite, one line per case. True when all pass.
inline bool cmd_gradcheck(std::uint64_t seed, std::ostream& log) {
  bool ok = true;
  run_gradient_suite(seed, [&](const GradSuiteCase& c) {
    ok = ok && c.passed();
    log << (c.passed() ? "ok   " : "FAIL ") << std::left << std::setw(24) << c.name
        << " max_rel_err " << std::scientific << std::setprecision(3) << c.report.max_rel_error
        << " tol " << c.tolerance << std::defaultfloat << " coords " << c.report.checked;
    if (!c.passed()) log << " worst " << c.report.worst_target << '[' << c.report.worst_index << ']';
    log << '\n';
  });
  return ok;
}

}  // namespace dcl

#endif  // DCL_PIPELINE_HPP
