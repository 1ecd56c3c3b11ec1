#include "dnadepth/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>

#include <opencv2/imgproc.hpp>

#include "dnadepth/checkpoint.hpp"
#include "dnadepth/config.hpp"

namespace dnadepth {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double median(std::vector<double> v) {
  const size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

cv::Mat as_float(const cv::Mat& m, const char* what) {
  if (m.empty() || m.channels() != 1) {
    throw std::invalid_argument(std::string("compute_metrics: ") + what +
                                " must be a non-empty single-channel map");
  }
  cv::Mat out;
  m.convertTo(out, CV_64F);
  return out;
}

}  // namespace

const std::array<const char*, 7>& DepthMetrics::names() {
  static const std::array<const char*, 7> kNames = {"abs_rel",  "sq_rel", "rmse",  "rmse_log",
                                                    "delta1", "delta2", "delta3"};
  return kNames;
}

std::string to_string(EvalCrop crop) { return crop == EvalCrop::kEigen ? "eigen" : "none"; }

EvalCrop eval_crop_from_string(const std::string& name) {
  if (name == "eigen" || name == "garg") return EvalCrop::kEigen;
  if (name == "none") return EvalCrop::kNone;
  throw std::invalid_argument("unknown crop '" + name + "' (expected eigen or none)");
}

json to_json(const EvalProtocol& p) {
  return json{{"median_scaling", p.median_scaling},
              {"min_depth", p.min_depth},
              {"cap", p.cap},
              {"crop", to_string(p.crop)}};
}

cv::Rect eigen_crop(int height, int width) {
  const int r0 = static_cast<int>(0.40810811 * height);
  const int r1 = static_cast<int>(0.99189189 * height);
  const int c0 = static_cast<int>(0.03594771 * width);
  const int c1 = static_cast<int>(0.96405229 * width);
  return cv::Rect(c0, r0, c1 - c0, r1 - r0);
}

DepthMetrics compute_metrics(const cv::Mat& pred_in, const cv::Mat& gt_in,
                             const EvalProtocol& protocol) {
  const cv::Mat pred = as_float(pred_in, "pred");
  const cv::Mat gt = as_float(gt_in, "gt");
  if (pred.size() != gt.size()) {
    throw std::invalid_argument("compute_metrics: pred and gt sizes differ");
  }
  if (!(protocol.min_depth > 0 && protocol.min_depth < protocol.cap)) {
    throw std::invalid_argument("compute_metrics: need 0 < min_depth < cap");
  }
  const cv::Rect roi = protocol.crop == EvalCrop::kEigen ? eigen_crop(gt.rows, gt.cols)
                                                         : cv::Rect(0, 0, gt.cols, gt.rows);

  std::vector<double> p, g;
  for (int r = roi.y; r < roi.y + roi.height; ++r) {
    const double* pr = pred.ptr<double>(r);
    const double* gr = gt.ptr<double>(r);
    for (int c = roi.x; c < roi.x + roi.width; ++c) {
      if (gr[c] > protocol.min_depth && gr[c] < protocol.cap) {
        if (!std::isfinite(pr[c])) {
          throw std::invalid_argument("compute_metrics: non-finite prediction");
        }
        p.push_back(pr[c]);
        g.push_back(gr[c]);
      }
    }
  }
  if (g.empty()) throw std::invalid_argument("compute_metrics: no valid ground-truth pixels");

  if (protocol.median_scaling) {
    const double mp = median(p);
    if (!(mp > 0)) throw std::invalid_argument("compute_metrics: median prediction is not positive");
    const double ratio = median(g) / mp;
    for (auto& v : p) v *= ratio;
  }
  for (auto& v : p) v = std::clamp(v, protocol.min_depth, protocol.cap);

  double abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0;
  int64_t d1 = 0, d2 = 0, d3 = 0;
  for (size_t i = 0; i < g.size(); ++i) {
    const double diff = p[i] - g[i];
    abs_rel += std::abs(diff) / g[i];
    sq_rel += diff * diff / g[i];
    sq += diff * diff;
    const double dl = std::log(p[i]) - std::log(g[i]);
    sq_log += dl * dl;
    const double ratio = std::max(p[i] / g[i], g[i] / p[i]);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
  }
  const double n = static_cast<double>(g.size());
  return DepthMetrics{abs_rel / n,
                      sq_rel / n,
                      std::sqrt(sq / n),
                      std::sqrt(sq_log / n),
                      static_cast<double>(d1) / n,
                      static_cast<double>(d2) / n,
                      static_cast<double>(d3) / n};
}

DepthMetrics mean_metrics(const std::vector<DepthMetrics>& frames) {
  if (frames.empty()) throw std::invalid_argument("mean_metrics: no frames");
  std::array<double, 7> acc{};
  for (const auto& f : frames) {
    const auto v = f.values();
    for (size_t k = 0; k < acc.size(); ++k) acc[k] += v[k];
  }
  for (auto& a : acc) a /= static_cast<double>(frames.size());
  return DepthMetrics{acc[0], acc[1], acc[2], acc[3], acc[4], acc[5], acc[6]};
}

ComplexityReport count_parameters(const torch::nn::Module& module, bool trainable_only) {
  ComplexityReport report;
  for (const auto& item : module.named_parameters(true)) {
    if (trainable_only && !item.value().requires_grad()) continue;
    const auto& name = item.key();
    const auto dot = name.find('.');
    const auto group = dot == std::string::npos ? std::string("(root)") : name.substr(0, dot);
    report.params_breakdown[group] += item.value().numel();
    report.total_params += item.value().numel();
  }
  return report;
}

ComplexityReport depthnet_complexity(const DepthNetConfig& cfg, int64_t height, int64_t width) {
  DepthNet net(cfg);
  auto report = estimate_flops(net, {1, 3, height, width});
  const auto params = count_parameters(*net);
  report.total_params = params.total_params;
  report.params_breakdown = params.params_breakdown;
  return report;
}

json to_json(const ComplexityReport& r, bool double_macs) {
  const double factor = double_macs ? 2.0 : 1.0;
  json j{{"params", r.total_params},
         {"params_millions", static_cast<double>(r.total_params) * 1e-6},
         {"macs", r.macs},
         {"gmacs", r.gmacs()},
         {"reported_gflops", r.gmacs() * factor},
         {"flops_convention", double_macs ? "2 x MACs" : "MACs"},
         {"input_shape", r.input_shape},
         {"params_breakdown", r.params_breakdown},
         {"macs_breakdown", r.macs_breakdown}};
  return j;
}

LoadedDepthNet load_depth_net(const fs::path& checkpoint) {
  const auto archive = read_archive(checkpoint);
  if (archive.manifest.value("format", "") != "dnadepth-checkpoint") {
    throw IoError("not a training checkpoint: " + checkpoint.string());
  }
  LoadedDepthNet out;
  out.model = archive.manifest.at("model").get<ModelConfig>();
  out.train = archive.manifest.at("train").get<TrainConfig>();
  out.net = DepthNet(out.model.depth);
  load_module(archive, "depth", *out.net);
  out.net->eval();
  return out;
}

torch::Tensor predict_depth(LoadedDepthNet& model, const torch::Tensor& image, int64_t height,
                            int64_t width) {
  torch::NoGradGuard no_grad;
  model.net->eval();
  auto input = resize_rgb(image, width, height).unsqueeze(0);
  auto disp = model.net->forward(input).front();
  return disp_to_depth(disp, model.train.min_depth, model.train.max_depth).squeeze(0).squeeze(0);
}

double EvalReport::skipped_fraction() const {
  const size_t n = frames.size() + skipped.size();
  return n == 0 ? 0.0 : static_cast<double>(skipped.size()) / static_cast<double>(n);
}

EvalReport evaluate_frames(const std::vector<FrameId>& ids, const fs::path& data_root,
                           const Predictor& predict, const EvalProtocol& protocol) {
  EvalReport report;
  report.protocol = protocol;
  auto skip = [&](const FrameId& id, const std::string& why) {
    std::cerr << "warning: skipping " << id.to_string() << ": " << why << "\n";
    report.skipped.emplace_back(id.to_string(), why);
  };
  for (const auto& id : ids) {
    std::optional<cv::Mat> gt;
    try {
      gt = read_depth_any(gt_depth_stem(data_root, id));
    } catch (const std::exception& e) {
      skip(id, std::string("unreadable ground truth: ") + e.what());
      continue;
    }
    if (!gt) {
      skip(id, "missing ground truth");
      continue;
    }
    std::optional<cv::Mat> pred;
    try {
      pred = predict(id, gt->size());
    } catch (const std::exception& e) {
      skip(id, std::string("prediction failed: ") + e.what());
      continue;
    }
    if (!pred) {
      skip(id, "missing prediction");
      continue;
    }
    try {
      report.frames.push_back({id.to_string(), compute_metrics(*pred, *gt, protocol)});
    } catch (const std::invalid_argument& e) {
      skip(id, e.what());
    }
  }
  if (!report.frames.empty()) {
    std::vector<DepthMetrics> all;
    for (const auto& f : report.frames) all.push_back(f.metrics);
    report.mean = mean_metrics(all);
  }
  return report;
}

EvalReport evaluate_checkpoint(const fs::path& checkpoint, const std::vector<FrameId>& ids,
                               const CheckpointEvalOptions& options,
                               const EvalProtocol& protocol) {
  auto model = load_depth_net(checkpoint);
  DatasetOptions data;
  data.root = options.data_root;
  data.image_ext = options.image_ext;
  auto predict = [&](const FrameId& id, const cv::Size& gt_size) -> std::optional<cv::Mat> {
    const auto path = image_path(data, id);
    if (!fs::exists(path)) return std::nullopt;
    const auto depth = predict_depth(model, read_rgb(path), options.height, options.width);
    cv::Mat out;
    cv::resize(tensor_to_mat(depth), out, gt_size, 0, 0, cv::INTER_LINEAR);
    return out;
  };
  return evaluate_frames(ids, options.data_root, predict, protocol);
}

fs::path prediction_stem(const fs::path& dir, const FrameId& id) {
  char name[32];
  std::snprintf(name, sizeof(name), "%010lld", static_cast<long long>(id.index));
  return dir / id.sequence / (id.side == 'r' ? "image_03" : "image_02") / name;
}

EvalReport evaluate_predictions(const fs::path& predictions, const std::vector<FrameId>& ids,
                                const fs::path& data_root, const EvalProtocol& protocol) {
  auto predict = [&](const FrameId& id, const cv::Size& gt_size) -> std::optional<cv::Mat> {
    auto pred = read_depth_any(prediction_stem(predictions, id));
    if (!pred) return std::nullopt;
    if (pred->size() != gt_size) {
      cv::Mat resized;
      cv::resize(*pred, resized, gt_size, 0, 0, cv::INTER_LINEAR);
      return resized;
    }
    return pred;
  };
  return evaluate_frames(ids, data_root, predict, protocol);
}

std::string format_metrics_row(const DepthMetrics& m) {
  std::string row;
  char cell[32];
  for (const double v : m.values()) {
    std::snprintf(cell, sizeof(cell), row.empty() ? "%.3f" : " & %.3f", v);
    row += cell;
  }
  return row;
}

void write_eval_report(const EvalReport& report, const fs::path& out_dir,
                       const std::optional<ComplexityReport>& complexity, bool double_macs) {
  fs::create_directories(out_dir);
  std::ofstream csv(out_dir / "per_frame.csv");
  if (!csv) throw IoError("cannot write " + (out_dir / "per_frame.csv").string());
  csv << "frame_id";
  for (const auto* name : DepthMetrics::names()) csv << "," << name;
  csv << "\n";
  char cell[32];
  for (const auto& f : report.frames) {
    csv << '"' << f.frame_id << '"';
    for (const double v : f.metrics.values()) {
      std::snprintf(cell, sizeof(cell), ",%.9g", v);
      csv << cell;
    }
    csv << "\n";
  }

  json summary{{"protocol", to_json(report.protocol)},
               {"frames_evaluated", report.frames.size()},
               {"frames_skipped", report.skipped.size()}};
  json metrics = json::object();
  if (!report.frames.empty()) {
    const auto values = report.mean.values();
    for (size_t k = 0; k < values.size(); ++k) metrics[DepthMetrics::names()[k]] = values[k];
  }
  summary["metrics"] = metrics;
  json skipped = json::array();
  for (const auto& [id, why] : report.skipped) skipped.push_back({{"frame", id}, {"reason", why}});
  summary["skipped"] = skipped;
  if (complexity) summary["complexity"] = to_json(*complexity, double_macs);
  std::ofstream js(out_dir / "summary.json");
  if (!js) throw IoError("cannot write " + (out_dir / "summary.json").string());
  js << summary.dump(2) << "\n";
}

}  // namespace dnadepth
