// dcl: command-line front end for training, prediction, CRF refinement,
// superpixel inspection and evaluation.
//
// Exit codes: 0 success, 2 usage, 3 io, 4 config, 5 shape, 6 numeric,
// 7 invalid-argument, 8 gradient check failed, 1 anything else. Failures
// print "error[<category>]: <message>" on stderr.

#include <CLI11.hpp>

#include <iostream>

#include "dcl/pipeline.hpp"

namespace {

int exit_code(dcl::ErrorCategory c) {
  switch (c) {
    case dcl::ErrorCategory::kIo: return 3;
    case dcl::ErrorCategory::kConfig: return 4;
    case dcl::ErrorCategory::kShape: return 5;
    case dcl::ErrorCategory::kNumeric: return 6;
    case dcl::ErrorCategory::kInvalidArgument: return 7;
  }
  return 1;
}

constexpr int kGradCheckFailed = 8;

struct Globals {
  std::string config;
  std::vector<std::string> overrides;
  int threads = 0;
};

dcl::RunConfig resolve_config(const Globals& g, dcl::RunConfig base) {
  if (!g.config.empty()) base = dcl::load_run_config(g.config);
  for (const auto& o : g.overrides) base = dcl::apply_override(base, o);
  if (g.threads > 0) base.threads = g.threads;
  base.validate();
  return base;
}

std::vector<dcl::fs::path> to_paths(const std::vector<std::string>& v) {
  return {v.begin(), v.end()};
}

int run(int argc, char** argv) {
  CLI::App app{"Saliency detection with a multiscale FCN and a segment-wise stream"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("-c,--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("-s,--set", g.overrides, "Override a config value, e.g. train.lr_base=0.01")
      ->take_all();
  app.add_option("-j,--threads", g.threads,
                 std::string("Worker threads (default: ") + dcl::kThreadsEnv +
                     " or hardware concurrency)")
      ->check(CLI::Range(1, 1024));

  int code = 0;

  auto* cfg_cmd = app.add_subcommand("config", "Print the resolved run configuration");
  cfg_cmd->callback([&] { std::cout << dcl::to_json(resolve_config(g, {})).dump(2) << '\n'; });

  auto* synth = app.add_subcommand("synth", "Write a synthetic training corpus and manifest");
  std::string synth_out;
  int synth_count = 5, synth_size = 81;
  std::uint64_t synth_seed = 2024;
  synth->add_option("out", synth_out, "Output directory")->required();
  synth->add_option("-n,--count", synth_count, "Number of images")->check(CLI::PositiveNumber);
  synth->add_option("--size", synth_size, "Image side in pixels")->check(CLI::Range(8, 4096));
  synth->add_option("--seed", synth_seed, "Corpus seed");
  synth->callback([&] {
    std::cout << dcl::cmd_synth(synth_out, synth_count, synth_size, synth_seed).string() << '\n';
  });

  auto* sp = app.add_subcommand("superpixels", "Segment images and write label maps");
  std::vector<std::string> sp_images;
  std::string sp_out;
  int sp_k = 200;
  sp->add_option("images", sp_images, "Input images")->required()->check(CLI::ExistingFile);
  sp->add_option("-o,--out", sp_out, "Output directory")->required();
  sp->add_option("-k,--segments", sp_k, "Requested number of segments")
      ->check(CLI::PositiveNumber);
  sp->callback([&] {
    const auto cfg = resolve_config(g, {});
    for (const auto& r : dcl::cmd_superpixels(to_paths(sp_images), sp_k, cfg.network.slic,
                                              sp_out, cfg.resolved_threads())) {
      std::cout << r.name << ": " << r.segments << " segments (requested " << r.requested
                << ")\n";
    }
  });

  auto* train = app.add_subcommand("train", "Alternating training from a dataset manifest");
  std::string train_manifest, train_out;
  dcl::TrainOptions train_opt;
  train->add_option("manifest", train_manifest, "Dataset manifest (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  train->add_option("-o,--out", train_out, "Output directory")->required();
  train->add_flag("--resume", train_opt.resume, "Continue from <out>/checkpoint");
  train->add_option("--checkpoint-every", train_opt.checkpoint_every, "Epochs between saves")
      ->check(CLI::PositiveNumber);
  train->add_option("--stop-after", train_opt.stop_after, "Stop after this many epochs")
      ->check(CLI::NonNegativeNumber);
  train->callback([&] {
    dcl::RunConfig base;
    if (train_opt.resume && g.config.empty()) {
      base = dcl::load_checkpoint(dcl::checkpoint_dir(train_out)).config;
    }
    const auto cfg = resolve_config(g, base);
    const auto state = dcl::cmd_train(train_manifest, cfg, train_out, train_opt, std::cerr);
    std::cout << "trained " << state.epochs_done << " epoch(s); checkpoint "
              << dcl::checkpoint_dir(train_out).string() << '\n';
  });

  auto* predict = app.add_subcommand("predict", "Saliency maps from a checkpoint");
  std::string pred_ck, pred_out;
  std::vector<std::string> pred_images;
  dcl::PredictOptions pred_opt;
  predict->add_option("checkpoint", pred_ck, "Checkpoint directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  predict->add_option("images", pred_images, "Input images")->required()->check(CLI::ExistingFile);
  predict->add_option("-o,--out", pred_out, "Output directory")->required();
  predict->add_flag("--crf", pred_opt.crf, "Also write CRF-refined maps under crf/");
  predict->add_flag("--debug", pred_opt.debug, "Also write S1 and S2 under s1/ and s2/");
  predict->add_flag("--blobs", pred_opt.blobs, "Write full-precision .bin maps too");
  predict->callback([&] {
    // CRF settings come from the checkpoint's config unless overridden.
    const auto cfg = resolve_config(g, dcl::load_checkpoint(pred_ck).config);
    pred_opt.crf_params = cfg.crf;
    pred_opt.threads = cfg.resolved_threads();
    dcl::cmd_predict(pred_ck, to_paths(pred_images), pred_out, pred_opt, std::cerr);
  });

  auto* refine = app.add_subcommand("refine", "CRF refinement of existing saliency maps");
  std::string ref_maps, ref_out;
  std::vector<std::string> ref_images;
  bool ref_blobs = false;
  refine->add_option("images", ref_images, "Input images")->required()->check(CLI::ExistingFile);
  refine->add_option("-m,--maps", ref_maps, "Directory of maps named after the images")
      ->required()
      ->check(CLI::ExistingDirectory);
  refine->add_option("-o,--out", ref_out, "Output directory")->required();
  refine->add_flag("--blobs", ref_blobs, "Write full-precision .bin maps too");
  refine->callback([&] {
    const auto cfg = resolve_config(g, {});
    dcl::cmd_refine(to_paths(ref_images), ref_maps, ref_out, cfg.crf, ref_blobs,
                    cfg.resolved_threads(), std::cerr);
  });

  auto* eval = app.add_subcommand("evaluate", "PR curve, maxF and MAE against ground truth");
  std::string ev_maps, ev_gts, ev_out, ev_dataset, ev_method = "model";
  eval->add_option("maps", ev_maps, "Directory of saliency maps")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("gts", ev_gts, "Directory of ground-truth masks")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("-o,--out", ev_out, "Output directory")->required();
  eval->add_option("--dataset", ev_dataset, "Dataset label (default: ground-truth dir name)");
  eval->add_option("--method", ev_method, "Method label for the summary table");
  eval->callback([&] {
    const auto cfg = resolve_config(g, {});
    if (ev_dataset.empty()) {
      ev_dataset = dcl::fs::path(ev_gts).lexically_normal().filename().string();
      if (ev_dataset.empty()) ev_dataset = dcl::fs::path(ev_gts).parent_path().filename().string();
    }
    dcl::cmd_evaluate(ev_maps, ev_gts, ev_out, cfg.eval.beta2, ev_dataset, ev_method,
                      cfg.resolved_threads(), std::cout);
  });

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every gradient");
  std::uint64_t gc_seed = 1;
  gc->add_option("--seed", gc_seed, "Seed for the random instances");
  gc->callback([&] {
    if (!dcl::cmd_gradcheck(gc_seed, std::cout)) code = kGradCheckFailed;
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int c = app.exit(e);
    return c == 0 ? 0 : 2;
  }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const dcl::Error& e) {
    std::cerr << "error[" << dcl::category_name(e.category()) << "]: " << e.what() << '\n';
    return exit_code(e.category());
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << '\n';
    return 1;
  }
}
