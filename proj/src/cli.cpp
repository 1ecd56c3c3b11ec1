#include "dnadepth/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <torch/torch.h>

#include "CLI11.hpp"
#include "dnadepth/config.hpp"
#include "dnadepth/data.hpp"
#include "dnadepth/evaluation.hpp"
#include "dnadepth/training.hpp"

namespace dnadepth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// config.json of the run a checkpoint belongs to, if it can be found.
std::optional<ExperimentConfig> run_config_for(const fs::path& checkpoint) {
  for (auto dir = checkpoint.parent_path(); !dir.empty(); dir = dir.parent_path()) {
    if (fs::exists(dir / "config.json")) return load_experiment_config(dir / "config.json");
    if (dir == dir.parent_path() || dir.filename() != "checkpoints") break;
  }
  return std::nullopt;
}

std::vector<fs::path> list_images(const fs::path& input) {
  static const std::set<std::string> kExt = {".png", ".jpg", ".jpeg", ".PNG", ".JPG", ".JPEG"};
  if (!fs::exists(input)) throw InputError("input not found: " + input.string());
  if (!fs::is_directory(input)) return {input};
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(input)) {
    if (e.is_regular_file() && kExt.count(e.path().extension().string())) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// ----- train --------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::optional<int64_t> epochs;
  std::optional<uint64_t> seed;
  std::optional<int64_t> max_steps;
  std::string output;
  std::string resume;
  int64_t log_every = 10;
};

int cmd_train(const TrainArgs& a) {
  auto cfg = load_experiment_config(a.config, a.sets);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.seed) cfg.train.seed = *a.seed;
  if (a.max_steps) cfg.train.max_steps = *a.max_steps;
  if (!a.output.empty()) cfg.output_dir = a.output;
  cfg.validate();

  if (cfg.data.root.empty() || !fs::is_directory(cfg.data.root)) {
    throw InputError("dataset root not found: '" + cfg.data.root.string() + "'");
  }
  const auto splits = load_split_manifest(cfg.data.splits_dir());
  if (splits.train.empty()) {
    throw InputError("no training split at " + (cfg.data.splits_dir() / "train_files.txt").string());
  }
  KittiDataset dataset(cfg.data.dataset_options(), splits.train);
  if (dataset.skipped() > 0) {
    std::cerr << "warning: " << dataset.skipped() << " training frames lack a neighbour\n";
  }
  if (dataset.size() == 0) throw InputError("no usable training triplets");

  const fs::path run_dir = cfg.output_dir;
  fs::create_directories(run_dir);
  save_experiment_config(run_dir / "config.json", cfg);
  std::cout << "run directory: " << run_dir.string() << "\n"
            << "training triplets: " << dataset.size() << "\n";

  FitOptions options;
  options.run_dir = run_dir;
  if (!a.resume.empty()) options.resume_from = fs::path(a.resume);
  options.on_step = [&](const StepRecord& r) {
    if (a.log_every > 0 && r.step % a.log_every == 0) {
      std::printf("step %lld epoch %lld lr %.2g loss %.6f photometric %.6f\n",
                  static_cast<long long>(r.step), static_cast<long long>(r.epoch), r.lr, r.total,
                  r.photometric);
      std::fflush(stdout);
    }
  };
  const auto result = fit(dataset, cfg.model, cfg.train, cfg.loss, options);
  if (!result.history.empty()) {
    std::printf("final step %lld loss %.6f\n", static_cast<long long>(result.history.back().step),
                result.history.back().total);
  }
  if (!result.checkpoints.empty()) {
    std::cout << "last checkpoint: " << result.checkpoints.back().string() << "\n";
  }
  return kExitOk;
}

// ----- infer --------------------------------------------------------------

struct InferArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
  bool preview = false;
  int64_t height = 0;
  int64_t width = 0;
};

// Inverse depth stretched to the image's own range, colourised with MAGMA.
cv::Mat colorize(const cv::Mat& depth) {
  cv::Mat inv = 1.0 / depth;
  double lo = 0, hi = 0;
  cv::minMaxLoc(inv, &lo, &hi);
  cv::Mat u8;
  inv.convertTo(u8, CV_8U, hi > lo ? 255.0 / (hi - lo) : 0.0, hi > lo ? -lo * 255.0 / (hi - lo) : 0);
  cv::Mat color;
  cv::applyColorMap(u8, color, cv::COLORMAP_MAGMA);
  return color;
}

int cmd_infer(const InferArgs& a) {
  auto model = load_depth_net(a.checkpoint);
  int64_t height = 192, width = 640;
  if (auto run = run_config_for(a.checkpoint)) {
    height = run->data.height;
    width = run->data.width;
  }
  if (a.height > 0) height = a.height;
  if (a.width > 0) width = a.width;

  const auto images = list_images(a.input);
  if (images.empty()) throw InputError("no images under " + a.input);
  const fs::path out_dir = a.output;
  fs::create_directories(out_dir);

  size_t written = 0;
  for (const auto& path : images) {
    torch::Tensor image;
    try {
      image = read_rgb(path);
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << path.string() << ": " << e.what() << "\n";
      continue;
    }
    const auto depth = tensor_to_mat(predict_depth(model, image, height, width));
    cv::Mat full;
    cv::resize(depth, full, cv::Size(static_cast<int>(image.size(2)), static_cast<int>(image.size(1))),
               0, 0, cv::INTER_LINEAR);
    const auto stem = out_dir / path.stem();
    write_depth_raster(stem.string() + ".f32", full);
    if (a.preview) cv::imwrite(stem.string() + "_preview.png", colorize(full));
    ++written;
    std::cout << path.string() << " -> " << stem.string() << ".f32\n";
  }
  if (written == 0) {
    std::cerr << "error: no image could be read\n";
    return kExitInput;
  }
  return kExitOk;
}

// ----- eval ---------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string predictions;
  std::string split;
  std::string data_root;
  std::string output;
  std::string crop = "eigen";
  std::string encoder = "b0";
  bool no_median_scaling = false;
  bool report_complexity = false;
  bool double_macs = false;
  double cap = 80.0;
  double min_depth = 1e-3;
  int64_t height = 0;
  int64_t width = 0;
};

int cmd_eval(const EvalArgs& a) {
  if (a.checkpoint.empty() == a.predictions.empty()) {
    throw InputError("give exactly one of --checkpoint or --predictions");
  }
  std::optional<ExperimentConfig> run;
  if (!a.checkpoint.empty()) run = run_config_for(a.checkpoint);

  DataConfig data = run ? run->data : DataConfig{};
  if (!a.data_root.empty()) data.root = a.data_root;
  if (data.root.empty() || !fs::is_directory(data.root)) {
    throw InputError("data root not found: '" + data.root.string() + "'");
  }

  fs::path split = a.split;
  if (split.empty()) {
    split = data.splits_dir() / "test_files.txt";
    if (!fs::exists(split)) {
      split = data.splits_dir() / "train_files.txt";
      std::cerr << "note: no test list, evaluating " << split.string() << "\n";
    }
  }
  if (!fs::exists(split)) throw InputError("split file not found: " + split.string());
  const auto ids = load_split(split);

  EvalProtocol protocol;
  protocol.median_scaling = !a.no_median_scaling;
  protocol.crop = eval_crop_from_string(a.crop);
  protocol.cap = a.cap;
  protocol.min_depth = a.min_depth;

  EvalReport report;
  std::optional<ComplexityReport> complexity;
  if (!a.checkpoint.empty()) {
    CheckpointEvalOptions opts;
    opts.data_root = data.root;
    opts.height = a.height > 0 ? a.height : data.height;
    opts.width = a.width > 0 ? a.width : data.width;
    opts.image_ext = data.image_ext;
    report = evaluate_checkpoint(a.checkpoint, ids, opts, protocol);
    if (a.report_complexity) {
      const auto model = load_depth_net(a.checkpoint);
      complexity = depthnet_complexity(model.model.depth, opts.height, opts.width);
    }
  } else {
    report = evaluate_predictions(a.predictions, ids, data.root, protocol);
    if (a.report_complexity) {
      DepthNetConfig cfg;
      cfg.encoder.kind = encoder_kind_from_string(a.encoder);
      complexity = depthnet_complexity(cfg, a.height > 0 ? a.height : 192,
                                       a.width > 0 ? a.width : 640);
    }
  }

  fs::path out = a.output;
  if (out.empty()) {
    out = "eval";
    if (!a.checkpoint.empty()) {
      auto dir = fs::path(a.checkpoint).parent_path();
      if (dir.filename() == "checkpoints") dir = dir.parent_path();
      out = dir / "eval";
    }
  }
  write_eval_report(report, out, complexity, a.double_macs);

  std::cout << "frames evaluated: " << report.frames.size()
            << ", skipped: " << report.skipped.size() << "\n";
  std::string header = "abs_rel & sq_rel & rmse & rmse_log & d1 & d2 & d3";
  std::string row = report.frames.empty() ? "n/a" : format_metrics_row(report.mean);
  if (complexity) {
    char extra[96];
    std::snprintf(extra, sizeof(extra), " & %.2f & %.2f",
                  static_cast<double>(complexity->total_params) * 1e-6,
                  complexity->gmacs() * (a.double_macs ? 2.0 : 1.0));
    header += a.double_macs ? " & params(M) & GFLOPs(2xMAC)" : " & params(M) & GMACs";
    row += extra;
  }
  std::cout << header << "\n" << row << "\n"
            << "report: " << (out / "summary.json").string() << "\n";

  if (report.frames.empty()) {
    std::cerr << "error: no frame could be evaluated\n";
    return kExitInput;
  }
  if (report.skipped_fraction() > 0.5) {
    std::cerr << "error: more than half of the frames were skipped\n";
    return kExitInput;
  }
  return kExitOk;
}

// ----- synth --------------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::string output;
  std::optional<uint64_t> seed;
};

int cmd_synth(const SynthArgs& a) {
  auto spec = load_synthetic_spec(a.spec);
  if (a.seed) spec.texture_seed = *a.seed;
  const auto ids = write_synthetic_dataset(spec, a.output);
  std::cout << "wrote " << ids.size() << " triplet groups to " << a.output << "\n";
  bool identical = false;
  for (int64_t k = 0; k < spec.num_scenes; ++k) {
    const auto check = check_synthetic_triplet(generate_synthetic_scene(spec, k));
    std::printf("self-check %s residual %.3e%s\n", check.id.c_str(), check.residual,
                check.identical_frames ? " IDENTICAL FRAMES (no camera motion)" : "");
    identical = identical || check.identical_frames;
  }
  if (identical) std::cout << "warning: some triplets carry no parallax\n";
  return kExitOk;
}

// ----- complexity ---------------------------------------------------------

struct ComplexityArgs {
  std::string encoder = "b0";
  int64_t height = 192;
  int64_t width = 640;
  bool double_macs = false;
  bool breakdown = false;
  std::string json_out;
};

int cmd_complexity(const ComplexityArgs& a) {
  DepthNetConfig cfg;
  cfg.encoder.kind = encoder_kind_from_string(a.encoder);
  const auto report = depthnet_complexity(cfg, a.height, a.width);
  const double factor = a.double_macs ? 2.0 : 1.0;
  std::printf("encoder %s at %lldx%lld\n", to_string(cfg.encoder.kind).c_str(),
              static_cast<long long>(a.width), static_cast<long long>(a.height));
  std::printf("params %lld (%.3f M)\n", static_cast<long long>(report.total_params),
              static_cast<double>(report.total_params) * 1e-6);
  std::printf("%s %.3f G\n", a.double_macs ? "FLOPs (2 x MACs)" : "MACs", report.gmacs() * factor);
  if (a.breakdown) {
    for (const auto& [k, v] : report.params_breakdown) {
      std::printf("  params %-24s %lld\n", k.c_str(), static_cast<long long>(v));
    }
    for (const auto& [k, v] : report.macs_breakdown) {
      std::printf("  macs   %-24s %lld\n", k.c_str(), static_cast<long long>(v));
    }
  }
  if (!a.json_out.empty()) {
    std::ofstream os(a.json_out);
    if (!os) throw IoError("cannot write " + a.json_out);
    os << to_json(report, a.double_macs).dump(2) << "\n";
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args);
}

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Self-supervised monocular depth: training, inference and evaluation", "dnadepth"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Intra-op CPU threads (results are reproducible per count)")
      ->check(CLI::PositiveNumber);
  std::optional<uint64_t> seed;

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train DepthNet and PoseNet from a config file");
  t->add_option("--config", train.config, "Experiment config (JSON)")->required();
  t->add_option("--set", train.sets, "Override, e.g. --set train.batch_size=4");
  t->add_option("--epochs", train.epochs, "Number of epochs");
  t->add_option("--max-steps", train.max_steps, "Stop after this many steps");
  t->add_option("--output", train.output, "Run directory");
  t->add_option("--resume", train.resume, "Checkpoint to resume from");
  t->add_option("--log-every", train.log_every, "Print every N steps (0 = quiet)");
  t->add_option("--seed", seed, "Random seed");

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Predict depth for an image or a directory of images");
  i->add_option("--checkpoint", infer.checkpoint)->required();
  i->add_option("--input", infer.input, "Image file or directory")->required();
  i->add_option("--output", infer.output, "Output directory")->required();
  i->add_flag("--preview", infer.preview, "Also write MAGMA-coloured inverse-depth PNGs");
  i->add_option("--height", infer.height, "Network input height");
  i->add_option("--width", infer.width, "Network input width");
  i->add_option("--seed", seed, "Random seed");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Depth metrics against ground truth");
  e->add_option("--checkpoint", eval.checkpoint);
  e->add_option("--predictions", eval.predictions, "Directory of precomputed depth maps");
  e->add_option("--split", eval.split, "Frame list (defaults to the test list)");
  e->add_option("--data-root", eval.data_root);
  e->add_option("--output", eval.output, "Directory for per_frame.csv and summary.json");
  e->add_option("--crop", eval.crop, "eigen or none");
  e->add_option("--cap", eval.cap, "Maximum depth in metres");
  e->add_option("--min-depth", eval.min_depth);
  e->add_option("--encoder", eval.encoder, "Model for --report-complexity with --predictions");
  e->add_option("--height", eval.height);
  e->add_option("--width", eval.width);
  e->add_flag("--no-median-scaling", eval.no_median_scaling);
  e->add_flag("--report-complexity", eval.report_complexity);
  e->add_flag("--double-macs", eval.double_macs, "Report FLOPs as 2 x MACs");
  e->add_option("--seed", seed, "Random seed");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic plane dataset");
  s->add_option("--spec", synth.spec, "Scene spec (JSON)")->required();
  s->add_option("--output", synth.output)->required();
  s->add_option("--seed", seed, "Texture seed");

  ComplexityArgs cx;
  auto* c = app.add_subcommand("complexity", "Parameter and MAC counts of DepthNet");
  c->add_option("--encoder", cx.encoder, "b0, b1 or tiny");
  c->add_option("--height", cx.height);
  c->add_option("--width", cx.width);
  c->add_flag("--double-macs", cx.double_macs);
  c->add_flag("--breakdown", cx.breakdown);
  c->add_option("--json", cx.json_out);
  c->add_option("--seed", seed, "Random seed");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitInput;
  }
  torch::set_num_threads(threads);
  if (seed) torch::manual_seed(*seed);

  try {
    if (t->parsed()) {
      train.seed = seed;
      return cmd_train(train);
    }
    if (i->parsed()) return cmd_infer(infer);
    if (e->parsed()) return cmd_eval(eval);
    if (s->parsed()) {
      synth.seed = seed;
      return cmd_synth(synth);
    }
    if (c->parsed()) return cmd_complexity(cx);
  } catch (const NumericalError& err) {
    std::cerr << "numerical failure: " << err.what() << "\n";
    if (!err.snapshot_path.empty()) std::cerr << "diagnostic snapshot: " << err.snapshot_path << "\n";
    return kExitNumerical;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitInput;
  } catch (const InputError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitInput;
  } catch (const IoError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitInput;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitFailure;
  }
  return kExitInput;
}

}  // namespace dnadepth
