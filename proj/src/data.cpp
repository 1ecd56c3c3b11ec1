#include "dnadepth/data.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "dnadepth/losses.hpp"

namespace dnadepth {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

std::string frame_name(int64_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%010lld", static_cast<long long>(index));
  return buf;
}

std::string camera_dir(char side) { return side == 'r' ? "image_03" : "image_02"; }

nlohmann::json pose_to_json(const Pose& p) {
  auto m = p.matrix().to(torch::kFloat64).contiguous()[0];
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < 4; ++r) {
    rows.push_back({m[r][0].item<double>(), m[r][1].item<double>(), m[r][2].item<double>(),
                    m[r][3].item<double>()});
  }
  return rows;
}

Pose pose_from_json(const nlohmann::json& rows) {
  auto m = torch::zeros({4, 4}, torch::kFloat64);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) m[r][c] = rows.at(r).at(c).get<double>();
  }
  return Pose{m.slice(0, 0, 3).slice(1, 0, 3).unsqueeze(0).clone(),
              m.slice(0, 0, 3).select(1, 3).unsqueeze(0).clone()};
}

Pose mirror_pose(const Pose& p) {
  auto s = torch::tensor({-1.0, 1.0, 1.0}, p.rotation.options());
  auto r = p.rotation * s.view({1, 3, 1}) * s.view({1, 1, 3});
  return Pose{r, p.translation * s.view({1, 3})};
}

torch::Tensor grayscale(const torch::Tensor& rgb) {
  return (0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2]).unsqueeze(0);
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << "\n";
}

}  // namespace

FrameId FrameId::parse(const std::string& line) {
  std::istringstream is(line);
  FrameId id;
  std::string side;
  if (!(is >> id.sequence >> id.index)) {
    throw std::invalid_argument("bad split line '" + line + "'");
  }
  if (is >> side) {
    require(side == "l" || side == "r", "bad camera side in split line '" + line + "'");
    id.side = side[0];
  }
  return id;
}

std::string FrameId::to_string() const {
  return sequence + " " + std::to_string(index) + " " + std::string(1, side);
}

std::vector<FrameId> load_split(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open split file " + path.string());
  std::vector<FrameId> ids;
  std::set<FrameId> seen;
  std::string line;
  size_t duplicates = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    auto id = FrameId::parse(line);
    if (seen.insert(id).second) {
      ids.push_back(id);
    } else {
      ++duplicates;
    }
  }
  require(!ids.empty(), "split file " + path.string() + " is empty");
  if (duplicates > 0) {
    std::cerr << "warning: dropped " << duplicates << " duplicate line(s) from " << path << "\n";
  }
  return ids;
}

SplitManifest load_split_manifest(const fs::path& dir) {
  SplitManifest m;
  auto load_if = [&](const char* name, std::vector<FrameId>& out) {
    const auto p = dir / name;
    if (fs::exists(p)) out = load_split(p);
  };
  load_if("train_files.txt", m.train);
  load_if("val_files.txt", m.val);
  load_if("test_files.txt", m.test);
  const std::set<FrameId> train(m.train.begin(), m.train.end());
  const std::set<FrameId> val(m.val.begin(), m.val.end());
  for (const auto& id : m.test) {
    require(!train.count(id) && !val.count(id), "split lists overlap at " + id.to_string());
  }
  for (const auto& id : m.val) {
    require(!train.count(id), "split lists overlap at " + id.to_string());
  }
  return m;
}

void write_split(const fs::path& path, const std::vector<FrameId>& ids) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& id : ids) os << id.to_string() << "\n";
}

torch::Tensor read_rgb(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw IoError("cannot decode image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  rgb.convertTo(rgb, CV_32FC3, 1.0 / 255.0);
  return torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kFloat32)
      .permute({2, 0, 1})
      .contiguous();
}

void write_rgb(const fs::path& path, const torch::Tensor& image) {
  require(image.dim() == 3 && image.size(0) == 3, "write_rgb: expected (3,H,W)");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto hwc = (image.detach().to(torch::kFloat32).clamp(0, 1) * 255.0)
                 .round()
                 .to(torch::kUInt8)
                 .permute({1, 2, 0})
                 .contiguous();
  cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3,
              hwc.data_ptr());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw IoError("cannot write image " + path.string());
}

torch::Tensor resize_rgb(const torch::Tensor& image, int64_t width, int64_t height) {
  if (image.size(1) == height && image.size(2) == width) return image;
  auto hwc = image.permute({1, 2, 0}).contiguous().to(torch::kFloat32);
  cv::Mat src(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_32FC3,
              hwc.data_ptr());
  const bool shrinking = width < image.size(2) && height < image.size(1);
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(static_cast<int>(width), static_cast<int>(height)), 0, 0,
             shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  return torch::from_blob(dst.data, {height, width, 3}, torch::kFloat32)
      .permute({2, 0, 1})
      .contiguous();
}

cv::Mat read_depth_png(const fs::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_ANYDEPTH);
  if (raw.empty()) throw IoError("cannot decode depth PNG " + path.string());
  if (raw.depth() != CV_16U) throw IoError("depth PNG is not 16-bit: " + path.string());
  cv::Mat depth;
  raw.convertTo(depth, CV_32F, 1.0 / 256.0);
  return depth;
}

void write_depth_png(const fs::path& path, const cv::Mat& depth) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  cv::Mat scaled;
  depth.convertTo(scaled, CV_16U, 256.0);  // saturating, rounded
  if (!cv::imwrite(path.string(), scaled)) throw IoError("cannot write " + path.string());
}

cv::Mat read_depth_raster(const fs::path& f32_path) {
  auto sidecar = fs::path(f32_path).replace_extension(".json");
  const auto meta = read_json(sidecar);
  const auto shape = meta.at("shape").get<std::vector<int>>();
  if (shape.size() != 2 || meta.value("dtype", "float32") != "float32") {
    throw IoError("unsupported raster sidecar " + sidecar.string());
  }
  cv::Mat depth(shape[0], shape[1], CV_32F);
  std::ifstream is(f32_path, std::ios::binary);
  const auto bytes = static_cast<std::streamsize>(depth.total() * sizeof(float));
  if (!is || !is.read(reinterpret_cast<char*>(depth.data), bytes)) {
    throw IoError("cannot read raster " + f32_path.string());
  }
  return depth;
}

void write_depth_raster(const fs::path& f32_path, const cv::Mat& depth) {
  require(depth.type() == CV_32F && depth.isContinuous(), "write_depth_raster: expected CV_32F");
  if (f32_path.has_parent_path()) fs::create_directories(f32_path.parent_path());
  std::ofstream os(f32_path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + f32_path.string());
  os.write(reinterpret_cast<const char*>(depth.data),
           static_cast<std::streamsize>(depth.total() * sizeof(float)));
  write_json(fs::path(f32_path).replace_extension(".json"),
             {{"shape", {depth.rows, depth.cols}},
              {"dtype", "float32"},
              {"byte_order", "little"},
              {"units", "m"}});
}

std::optional<cv::Mat> read_depth_any(const fs::path& stem) {
  const auto png = fs::path(stem.string() + ".png");
  if (fs::exists(png)) return read_depth_png(png);
  const auto f32 = fs::path(stem.string() + ".f32");
  if (fs::exists(f32)) return read_depth_raster(f32);
  return std::nullopt;
}

cv::Mat tensor_to_mat(const torch::Tensor& hw) {
  auto t = hw.detach().to(torch::kFloat32).contiguous();
  require(t.dim() == 2, "tensor_to_mat: expected (H,W)");
  return cv::Mat(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_32F, t.data_ptr())
      .clone();
}

torch::Tensor mat_to_tensor(const cv::Mat& m) {
  cv::Mat f;
  m.convertTo(f, CV_32F);
  return torch::from_blob(f.data, {f.rows, f.cols}, torch::kFloat32).clone();
}

fs::path image_path(const DatasetOptions& opts, const FrameId& id, int64_t offset) {
  return opts.root / id.sequence / camera_dir(id.side) / "data" /
         (frame_name(id.index + offset) + opts.image_ext);
}

fs::path gt_depth_stem(const fs::path& root, const FrameId& id) {
  return root / id.sequence / "proj_depth" / "groundtruth" / camera_dir(id.side) /
         frame_name(id.index);
}

void write_intrinsics(const fs::path& path, const Intrinsics& K) {
  write_json(path, {{"fx", K.fx},
                    {"fy", K.fy},
                    {"cx", K.cx},
                    {"cy", K.cy},
                    {"width", K.width},
                    {"height", K.height}});
}

Intrinsics read_intrinsics(const fs::path& path) {
  const auto j = read_json(path);
  Intrinsics K{j.at("fx").get<double>(),     j.at("fy").get<double>(),
               j.at("cx").get<double>(),     j.at("cy").get<double>(),
               j.at("width").get<int64_t>(), j.at("height").get<int64_t>()};
  K.validate();
  return K;
}

Intrinsics dataset_intrinsics(const DatasetOptions& opts, const FrameId& probe) {
  const auto file = opts.root / "intrinsics.json";
  if (fs::exists(file)) return read_intrinsics(file);
  const auto path = image_path(opts, probe);
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw IoError("cannot decode image " + path.string());
  const double w = img.cols, h = img.rows;
  return Intrinsics{0.58 * w, 1.92 * h, 0.5 * w, 0.5 * h, img.cols, img.rows};
}

Augmentation Augmentation::draw(std::mt19937_64& rng, const DatasetOptions& opts) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Augmentation a;
  const double flip_draw = unit(rng);
  const double jitter_draw = unit(rng);
  const double b = unit(rng), c = unit(rng), s = unit(rng);
  a.flip = opts.flip && flip_draw < 0.5;
  if (opts.color_jitter && jitter_draw < 0.5) {
    a.brightness = 0.8 + 0.4 * b;
    a.contrast = 0.8 + 0.4 * c;
    a.saturation = 0.8 + 0.4 * s;
  }
  return a;
}

bool Augmentation::identity() const {
  return !flip && brightness == 1.0 && contrast == 1.0 && saturation == 1.0;
}

void apply_augmentation(FrameTriplet& t, const Augmentation& aug) {
  if (aug.flip) {
    for (auto& f : t.frames) f = f.flip({2});
    for (auto& f : t.inputs) f = f.flip({2});
    if (t.gt_depth) t.gt_depth = t.gt_depth->flip({2});
    t.K = flip_intrinsics(t.K);
    if (t.pose_to_prev) t.pose_to_prev = mirror_pose(*t.pose_to_prev);
    if (t.pose_to_next) t.pose_to_next = mirror_pose(*t.pose_to_next);
  }
  if (aug.brightness != 1.0 || aug.contrast != 1.0 || aug.saturation != 1.0) {
    for (auto& f : t.inputs) {
      auto x = f * aug.brightness;
      auto mean = grayscale(x).mean();
      x = (x - mean) * aug.contrast + mean;
      auto gray = grayscale(x);
      x = (x - gray) * aug.saturation + gray;
      f = x.clamp(0.0, 1.0);
    }
  }
}

std::optional<FrameTriplet> load_kitti_triplet(const DatasetOptions& opts, const FrameId& id,
                                               const Intrinsics& native_K) {
  const std::array<fs::path, 3> paths = {image_path(opts, id, -1), image_path(opts, id, 0),
                                         image_path(opts, id, +1)};
  if (id.index < 1 || !fs::exists(paths[0]) || !fs::exists(paths[2])) return std::nullopt;
  if (!fs::exists(paths[1])) throw IoError("missing image " + paths[1].string());

  FrameTriplet t;
  t.id = id.to_string();
  for (size_t k = 0; k < 3; ++k) {
    t.frames[k] = resize_rgb(read_rgb(paths[k]), opts.width, opts.height);
    t.inputs[k] = t.frames[k];
  }
  t.K = resize_intrinsics(native_K, opts.width, opts.height);
  if (auto gt = read_depth_any(gt_depth_stem(opts.root, id))) {
    t.gt_depth = mat_to_tensor(*gt).unsqueeze(0);
  }
  const auto poses = opts.root / id.sequence / "poses.json";
  if (fs::exists(poses)) {
    const auto j = read_json(poses);
    t.pose_to_prev = pose_from_json(j.at("pose_to_prev"));
    t.pose_to_next = pose_from_json(j.at("pose_to_next"));
  }
  return t;
}

void SyntheticSceneSpec::validate() const {
  require(std::isfinite(plane_depth) && plane_depth > 0, "synthetic spec: plane_depth must be > 0");
  require(std::isfinite(baseline) && baseline >= 0, "synthetic spec: baseline must be >= 0");
  require(std::isfinite(focal) && focal > 0, "synthetic spec: focal must be > 0");
  require(width >= 1 && height >= 1, "synthetic spec: bad image size");
  require(num_scenes >= 1, "synthetic spec: num_scenes must be >= 1");
}

Intrinsics SyntheticSceneSpec::intrinsics() const {
  return Intrinsics{focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height};
}

FrameTriplet generate_synthetic_scene(const SyntheticSceneSpec& spec, int64_t scene_index) {
  spec.validate();
  constexpr int kWaves = 6;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  std::mt19937_64 rng(spec.texture_seed + static_cast<uint64_t>(scene_index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Wave frequencies are drawn in cycles per pixel at the reference camera and
  // converted to cycles per metre on the plane.
  const double metres_per_pixel = spec.plane_depth / spec.focal;
  struct Wave {
    double amp, kx, ky, phase;
  };
  std::array<std::array<Wave, kWaves>, 3> waves{};
  for (auto& channel : waves) {
    for (auto& w : channel) {
      const double amp = 0.03 + 0.04 * unit(rng);
      const double cycles = 0.015 + 0.065 * unit(rng);
      const double dir = std::numbers::pi * unit(rng);
      const double phase = kTwoPi * unit(rng);
      const double k = cycles / metres_per_pixel;
      w = Wave{amp, k * std::cos(dir), k * std::sin(dir), phase};
    }
  }

  const auto K = spec.intrinsics();
  const int64_t h = spec.height, w = spec.width;
  auto render = [&](double camera_x) {
    auto img = torch::empty({3, h, w}, torch::kFloat64);
    auto acc = img.accessor<double, 3>();
    for (int64_t v = 0; v < h; ++v) {
      const double y = (v - K.cy) * metres_per_pixel;
      for (int64_t u = 0; u < w; ++u) {
        const double x = (u - K.cx) * metres_per_pixel + camera_x;
        for (int c = 0; c < 3; ++c) {
          double value = 0.5;
          for (const auto& wv : waves[c]) {
            value += wv.amp * std::sin(kTwoPi * (wv.kx * x + wv.ky * y) + wv.phase);
          }
          acc[c][v][u] = value;
        }
      }
    }
    return img.to(torch::kFloat32);
  };

  FrameTriplet t;
  char name[32];
  std::snprintf(name, sizeof(name), "scene_%04lld", static_cast<long long>(scene_index));
  t.id = std::string(name) + " 1 l";
  t.frames = {render(-spec.baseline), render(0.0), render(spec.baseline)};
  t.inputs = t.frames;
  t.K = K;
  t.gt_depth = torch::full({1, h, w}, spec.plane_depth, torch::kFloat32);
  auto pose = [&](double tx) {
    auto p = Pose::identity(1, torch::kFloat64);
    p.translation[0][0] = tx;
    return p;
  };
  t.pose_to_prev = pose(spec.baseline);
  t.pose_to_next = pose(-spec.baseline);
  return t;
}

SynthCheck check_synthetic_triplet(const FrameTriplet& t) {
  require(t.gt_depth && t.pose_to_prev && t.pose_to_next,
          "check_synthetic_triplet: GT depth and poses are required");
  torch::NoGradGuard no_grad;
  const auto h = t.target().size(1), w = t.target().size(2);
  auto depth = t.gt_depth->to(torch::kFloat64).unsqueeze(0);
  require(depth.size(2) == h && depth.size(3) == w,
          "check_synthetic_triplet: GT depth must match the frame size");
  auto grid = PixelGrid::make(h, w, torch::kFloat64);
  auto points = backproject(depth, t.K, grid);
  auto target = t.target().to(torch::kFloat64).unsqueeze(0);

  double residual = 0.0;
  const std::array<std::pair<const torch::Tensor*, const Pose*>, 2> sources = {
      std::pair{&t.frames[0], &*t.pose_to_prev}, std::pair{&t.frames[2], &*t.pose_to_next}};
  for (const auto& [frame, pose] : sources) {
    auto proj = project(points, *pose, t.K);
    auto warped = warp(frame->to(torch::kFloat64).unsqueeze(0), proj.coords, proj.valid);
    auto err = (warped.image - target).abs().mean(1, true);
    residual += masked_mean(err, warped.valid).item<double>() / sources.size();
  }
  SynthCheck check;
  check.id = t.id;
  check.residual = residual;
  check.identical_frames =
      torch::equal(t.frames[0], t.frames[1]) && torch::equal(t.frames[2], t.frames[1]);
  return check;
}

std::vector<FrameId> write_synthetic_dataset(const SyntheticSceneSpec& spec, const fs::path& out) {
  spec.validate();
  fs::create_directories(out);
  DatasetOptions opts;
  opts.root = out;
  std::vector<FrameId> ids;
  for (int64_t k = 0; k < spec.num_scenes; ++k) {
    auto t = generate_synthetic_scene(spec, k);
    const auto id = FrameId::parse(t.id);
    for (int64_t offset = -1; offset <= 1; ++offset) {
      write_rgb(image_path(opts, id, offset), t.frames[static_cast<size_t>(offset + 1)]);
    }
    write_depth_png(gt_depth_stem(out, id).string() + ".png", tensor_to_mat(t.gt_depth->squeeze(0)));
    write_json(out / id.sequence / "poses.json",
               {{"pose_to_prev", pose_to_json(*t.pose_to_prev)},
                {"pose_to_next", pose_to_json(*t.pose_to_next)}});
    ids.push_back(id);
  }
  write_intrinsics(out / "intrinsics.json", spec.intrinsics());

  // Hold out the last fifth of the scenes (at least one) for testing.
  const size_t n_test = ids.size() >= 2 ? std::max<size_t>(1, ids.size() / 5) : 0;
  const std::vector<FrameId> train(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(n_test));
  const std::vector<FrameId> test(ids.end() - static_cast<std::ptrdiff_t>(n_test), ids.end());
  write_split(out / "splits" / "train_files.txt", train);
  if (!test.empty()) write_split(out / "splits" / "test_files.txt", test);
  return ids;
}

InMemoryDataset::InMemoryDataset(std::vector<FrameTriplet> triplets, DatasetOptions augment)
    : triplets_(std::move(triplets)), opts_(std::move(augment)) {
  require(!triplets_.empty(), "InMemoryDataset: no triplets");
}

FrameTriplet InMemoryDataset::get(size_t index, uint64_t seed) const {
  FrameTriplet t = triplets_.at(index);
  std::mt19937_64 rng(seed);
  apply_augmentation(t, Augmentation::draw(rng, opts_));
  return t;
}

Intrinsics InMemoryDataset::intrinsics() const { return triplets_.front().K; }

KittiDataset::KittiDataset(DatasetOptions opts, const std::vector<FrameId>& ids)
    : opts_(std::move(opts)) {
  require(!ids.empty(), "KittiDataset: empty identifier list");
  for (const auto& id : ids) {
    if (id.index >= 1 && fs::exists(image_path(opts_, id, -1)) &&
        fs::exists(image_path(opts_, id, 0)) && fs::exists(image_path(opts_, id, +1))) {
      ids_.push_back(id);
    } else {
      ++skipped_;
    }
  }
  require(!ids_.empty(), "KittiDataset: no usable frames under " + opts_.root.string());
  native_K_ = dataset_intrinsics(opts_, ids_.front());
}

FrameTriplet KittiDataset::get(size_t index, uint64_t seed) const {
  auto t = load_kitti_triplet(opts_, ids_.at(index), native_K_);
  if (!t) throw IoError("frame disappeared: " + ids_[index].to_string());
  std::mt19937_64 rng(seed);
  apply_augmentation(*t, Augmentation::draw(rng, opts_));
  return *std::move(t);
}

Intrinsics KittiDataset::intrinsics() const {
  return resize_intrinsics(native_K_, opts_.width, opts_.height);
}

uint64_t sample_seed(uint64_t seed, int64_t epoch, size_t index) {
  // splitmix64 finaliser over a simple combination of the three inputs
  uint64_t z = seed + 0x9E3779B97F4A7C15ull * (static_cast<uint64_t>(epoch) + 1) +
               0xBF58476D1CE4E5B9ull * (static_cast<uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace dnadepth
